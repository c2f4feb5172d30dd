#pragma once

#include <string>

#include "scopenet/autograd.hpp"

namespace scopenet {

/// Single-file parameter snapshot: an 8-byte magic and version, a JSON
/// manifest mapping parameter name -> shape/dtype/byte offset, then raw
/// little-endian float64 payloads. `extra_json` rides along in the manifest
/// (the training harness stores the resolved experiment config there).
void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::string& extra_json = "{}");

/// Loads values in manifest order into a fresh store. Throws on bad magic,
/// unsupported version, or truncated payload.
ParamStore load_checkpoint(const std::string& path, std::string* extra_json = nullptr);

}  // namespace scopenet
