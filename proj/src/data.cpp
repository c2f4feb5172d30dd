#include "scopenet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "scopenet/rng.hpp"

namespace scopenet {

namespace {

namespace fs = std::filesystem;

void render_object(Tensor& img, const LabeledBox& obj, double intensity) {
  const int h = img.shape()[1], w = img.shape()[2];
  const Box& b = obj.box;
  int px0 = std::max(0, static_cast<int>(std::floor(b.x1)));
  int px1 = std::min(w - 1, static_cast<int>(std::ceil(b.x2)));
  int py0 = std::max(0, static_cast<int>(std::floor(b.y1)));
  int py1 = std::min(h - 1, static_cast<int>(std::ceil(b.y2)));
  double cx = b.cx(), cy = b.cy(), rx = b.width() / 2, ry = b.height() / 2;

  for (int py = py0; py <= py1; ++py) {
    for (int px = px0; px <= px1; ++px) {
      double x = px + 0.5, y = py + 0.5;
      bool inside = false;
      switch (obj.class_id) {
        case 1:  // rectangle
          inside = x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2;
          break;
        case 2: {  // ellipse inscribed in the box
          double u = (x - cx) / rx, v = (y - cy) / ry;
          inside = u * u + v * v <= 1.0;
          break;
        }
        case 3: {  // isoceles triangle: apex top-center, base on the bottom edge
          if (y >= b.y1 && y <= b.y2) {
            double frac = (y - b.y1) / b.height();  // 0 at apex row
            inside = std::abs(x - cx) <= frac * rx;
          }
          break;
        }
        default:
          inside = x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2;
      }
      if (inside) img.at(0, py, px) = intensity;
    }
  }
}

}  // namespace

Dataset generate_dataset(int count, const DataConfig& cfg, uint64_t seed, int first_id) {
  if (cfg.image_size < 16) throw std::invalid_argument("generate_dataset: image too small");
  if (cfg.min_size < 2 || cfg.max_size > cfg.image_size - 2.0 || cfg.min_size > cfg.max_size) {
    throw std::invalid_argument("generate_dataset: bad size range");
  }
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects) {
    throw std::invalid_argument("generate_dataset: bad object count range");
  }
  if (cfg.max_aspect < 1.0) throw std::invalid_argument("generate_dataset: max_aspect < 1");

  Dataset data;
  data.seed = seed;
  data.config = cfg;
  const int sz = cfg.image_size;

  for (int si = 0; si < count; ++si) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(first_id + si)));
    Scene scene;
    scene.id = first_id + si;
    scene.image = Tensor::full({1, sz, sz}, 0.10);

    int want = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    for (int oi = 0; oi < want; ++oi) {
      bool placed = false;
      for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
        int cls = rng.uniform_int(1, cfg.num_classes);
        double s = std::exp(rng.uniform(std::log(cfg.min_size), std::log(cfg.max_size)));
        double r = std::exp(rng.uniform(-std::log(cfg.max_aspect), std::log(cfg.max_aspect)));
        double w = std::clamp(s * std::sqrt(r), cfg.min_size, cfg.max_size);
        double h = std::clamp(s / std::sqrt(r), cfg.min_size, cfg.max_size);
        double cx = rng.uniform(w / 2 + 1.0, sz - w / 2 - 1.0);
        double cy = rng.uniform(h / 2 + 1.0, sz - h / 2 - 1.0);
        double intensity = rng.uniform(0.35, 0.95);

        LabeledBox obj{Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, cls};
        if (!cfg.allow_crowding) {
          bool clash = false;
          for (const auto& other : scene.objects) {
            if (iou(obj.box, other.box) > cfg.max_overlap_iou) {
              clash = true;
              break;
            }
          }
          if (clash) continue;
        }
        render_object(scene.image, obj, intensity);
        scene.objects.push_back(obj);
        placed = true;
      }
      if (!placed) {
        std::fprintf(stderr, "[data] scene %d: gave up placing object %d/%d\n", scene.id, oi + 1,
                     want);
      }
    }

    for (int i = 0; i < scene.image.size(); ++i) {
      double v = scene.image[i] + rng.normal(0.0, cfg.noise);
      v = std::clamp(v, 0.0, 1.0);
      scene.image[i] = std::round(v * 255.0) / 255.0;  // 8-bit grid, PGM-exact
    }
    data.scenes.push_back(std::move(scene));
  }
  return data;
}

void write_pgm(const Tensor& image, const std::string& path) {
  if (image.ndim() != 3 || image.shape()[0] != 1) {
    throw std::invalid_argument("write_pgm: want [1,H,W]");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << image.shape()[2] << " " << image.shape()[1] << "\n255\n";
  for (int i = 0; i < image.size(); ++i) {
    double v = std::clamp(image[i], 0.0, 1.0);
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w <= 0 || h <= 0) {
    throw std::runtime_error("read_pgm: unsupported header in " + path);
  }
  f.get();  // single whitespace after maxval
  Tensor img({1, h, w});
  for (int i = 0; i < img.size(); ++i) {
    int c = f.get();
    if (c == EOF) throw std::runtime_error("read_pgm: truncated " + path);
    img[i] = static_cast<double>(c) / 255.0;
  }
  return img;
}

namespace {

nlohmann::json data_config_json(const DataConfig& c) {
  return {{"image_size", c.image_size}, {"min_objects", c.min_objects},
          {"max_objects", c.max_objects}, {"min_size", c.min_size},
          {"max_size", c.max_size},       {"max_aspect", c.max_aspect},
          {"max_overlap_iou", c.max_overlap_iou}, {"allow_crowding", c.allow_crowding},
          {"noise", c.noise},             {"num_classes", c.num_classes}};
}

DataConfig data_config_from_json(const nlohmann::json& j) {
  DataConfig c;
  c.image_size = j.at("image_size");
  c.min_objects = j.at("min_objects");
  c.max_objects = j.at("max_objects");
  c.min_size = j.at("min_size");
  c.max_size = j.at("max_size");
  c.max_aspect = j.at("max_aspect");
  c.max_overlap_iou = j.at("max_overlap_iou");
  c.allow_crowding = j.at("allow_crowding");
  c.noise = j.at("noise");
  c.num_classes = j.at("num_classes");
  return c;
}

std::string image_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.pgm", id);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& data, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream ann(fs::path(dir) / "annotations.jsonl", std::ios::trunc);
  if (!ann) throw std::runtime_error("write_dataset: cannot open annotations in " + dir);
  for (const Scene& s : data.scenes) {
    write_pgm(s.image, (fs::path(dir) / "images" / image_name(s.id)).string());
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects) {
      objs.push_back({{"class", o.class_id},
                      {"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}}});
    }
    nlohmann::json line = {{"image_id", s.id},
                           {"file", "images/" + image_name(s.id)},
                           {"objects", std::move(objs)}};
    ann << line.dump() << "\n";
  }
  nlohmann::json manifest = {{"seed", data.seed},
                             {"count", data.scenes.size()},
                             {"config", data_config_json(data.config)}};
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << "\n";
  if (!mf) throw std::runtime_error("write_dataset: manifest write failed");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("load_dataset: missing manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);

  Dataset data;
  data.seed = manifest.at("seed");
  data.config = data_config_from_json(manifest.at("config"));

  std::ifstream ann(fs::path(dir) / "annotations.jsonl");
  if (!ann) throw std::runtime_error("load_dataset: missing annotations.jsonl in " + dir);
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Scene s;
    s.id = j.at("image_id");
    s.image = read_pgm((fs::path(dir) / j.at("file").get<std::string>()).string());
    for (const auto& o : j.at("objects")) {
      auto b = o.at("box");
      s.objects.push_back({Box{b[0], b[1], b[2], b[3]}, o.at("class")});
    }
    data.scenes.push_back(std::move(s));
  }
  return data;
}

}  // namespace scopenet
