#include "scopenet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace scopenet {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'O', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

uint64_t get_u64(const char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::string& extra_json) {
  nlohmann::json manifest;
  manifest["extra"] = nlohmann::json::parse(extra_json);
  nlohmann::json params = nlohmann::json::array();

  std::string payload;
  for (const std::string& name : store.names()) {
    const Tensor& t = store.value(name);
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["dtype"] = "f64";
    p["offset"] = payload.size();
    params.push_back(std::move(p));
    for (int i = 0; i < t.size(); ++i) {
      put_u64(payload, std::bit_cast<uint64_t>(t[i]));
    }
  }
  manifest["params"] = std::move(params);

  std::string manifest_str = manifest.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  std::string head;
  put_u32(head, kVersion);
  put_u64(head, manifest_str.size());
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  f.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path, std::string* extra_json) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  uint32_t version = get_u32(bytes.data() + 8);
  if (version != kVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  }
  uint64_t mlen = get_u64(bytes.data() + 12);
  if (20 + mlen > bytes.size()) throw std::runtime_error("load_checkpoint: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(bytes.substr(20, mlen));
  const char* data = bytes.data() + 20 + mlen;
  size_t data_len = bytes.size() - 20 - mlen;

  ParamStore store;
  for (const auto& p : manifest.at("params")) {
    std::vector<int> shape = p.at("shape").get<std::vector<int>>();
    if (p.at("dtype").get<std::string>() != "f64") {
      throw std::runtime_error("load_checkpoint: unsupported dtype");
    }
    size_t offset = p.at("offset").get<size_t>();
    int n = Tensor::shape_size(shape);
    if (offset + 8 * static_cast<size_t>(n) > data_len) {
      throw std::runtime_error("load_checkpoint: truncated payload");
    }
    Tensor t(shape);
    for (int i = 0; i < n; ++i) {
      t[i] = std::bit_cast<double>(get_u64(data + offset + 8 * static_cast<size_t>(i)));
    }
    store.add(p.at("name").get<std::string>(), std::move(t));
  }
  if (extra_json) *extra_json = manifest.at("extra").dump();
  return store;
}

}  // namespace scopenet
