#include "scopenet/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "scopenet/rng.hpp"

namespace scopenet {

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::ostringstream os;
  os << "invalid config:";
  for (const auto& s : v) os << "\n  " << s;
  return os.str();
}

nlohmann::json hi_to_json(double hi) {
  if (std::isinf(hi)) return nullptr;
  return hi;
}

double hi_from_json(const nlohmann::json& j) {
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "inf")) {
    return std::numeric_limits<double>::infinity();
  }
  return j.get<double>();
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ConfigError::ConfigError(const std::vector<std::string>& problems)
    : std::runtime_error(join_lines(problems)), fields(problems) {}

void ExperimentConfig::resolve() {
  loss.uncertainty = model.uncertainty;
  detect.uncertainty = model.uncertainty;
  data.num_classes = model.num_classes;
  for (auto& lc : model.levels) {
    if (lc.bin_hi <= 0) lc.bin_hi = lc.range_hi;
  }
}

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  auto want = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };

  want(model.channels >= 1 && model.channels <= 256, "model.channels: want 1..256");
  want(model.trunk_depth >= 0 && model.trunk_depth <= 8, "model.trunk_depth: want 0..8");
  want(model.num_classes >= 1 && model.num_classes <= 64, "model.num_classes: want 1..64");
  want(model.num_bins >= 1 && model.num_bins <= 32, "model.num_bins: want 1..32");
  want(model.bin_size > 0, "model.bin_size: must be positive");
  want(model.temperature_init > 0, "model.temperature_init: must be positive");
  want(!model.levels.empty(), "model.levels: need at least one level");
  int prev = 0;
  for (size_t i = 0; i < model.levels.size(); ++i) {
    const auto& lc = model.levels[i];
    std::string at = "model.levels[" + std::to_string(i) + "]";
    want(lc.level >= 1 && lc.level <= 8, at + ".level: want 1..8");
    want(lc.level > prev, at + ".level: levels must ascend");
    prev = lc.level;
    want(lc.range_lo >= 0, at + ".range_lo: must be >= 0");
    want(lc.range_hi > lc.range_lo, at + ".range_hi: must exceed range_lo");
    double bin_hi = lc.bin_hi > 0 ? lc.bin_hi : lc.range_hi;
    want(std::isfinite(bin_hi) && bin_hi > 0,
         at + ".bin_hi: top level with open range needs a finite bin_hi");
  }

  want(loss.lambda_bin >= 0, "loss.lambda_bin: must be >= 0");
  want(loss.lambda_loc >= 0, "loss.lambda_loc: must be >= 0");
  want(loss.focal_alpha > 0 && loss.focal_alpha < 1, "loss.focal_alpha: want (0,1)");
  want(loss.focal_gamma >= 0, "loss.focal_gamma: must be >= 0");

  want(optimizer.lr > 0, "optimizer.lr: must be positive");
  want(optimizer.momentum >= 0 && optimizer.momentum < 1, "optimizer.momentum: want [0,1)");
  want(optimizer.steps >= 1, "optimizer.steps: must be >= 1");
  want(optimizer.warmup_steps >= 0, "optimizer.warmup_steps: must be >= 0");
  want(optimizer.batch_size >= 1, "optimizer.batch_size: must be >= 1");

  want(data.image_size >= 16 && data.image_size <= 1024, "data.image_size: want 16..1024");
  want(data.min_size >= 2, "data.min_size: must be >= 2");
  want(data.max_size > data.min_size, "data.max_size: must exceed min_size");
  want(data.max_size <= data.image_size - 2.0, "data.max_size: must fit inside the image");
  want(data.min_objects >= 1 && data.max_objects >= data.min_objects,
       "data.min_objects/max_objects: bad range");
  want(data.max_aspect >= 1.0, "data.max_aspect: must be >= 1");
  want(data.noise >= 0 && data.noise <= 0.5, "data.noise: want [0,0.5]");
  want(num_train >= 1, "data.num_train: must be >= 1");
  want(num_test >= 1, "data.num_test: must be >= 1");

  want(detect.score_threshold >= 0 && detect.score_threshold < 1,
       "inference.score_threshold: want [0,1)");
  want(detect.nms_threshold > 0 && detect.nms_threshold < 1,
       "inference.nms_threshold: want (0,1)");
  want(detect.top_k_per_level >= 1, "inference.top_k_per_level: must be >= 1");
  want(detect.max_detections >= 1, "inference.max_detections: must be >= 1");

  if (!bad.empty()) throw ConfigError(bad);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& lc : model.levels) {
    levels.push_back({{"level", lc.level},
                      {"range_lo", lc.range_lo},
                      {"range_hi", hi_to_json(lc.range_hi)},
                      {"bin_hi", lc.bin_hi}});
  }
  return {
      {"seed", seed},
      {"model",
       {{"channels", model.channels},
        {"trunk_depth", model.trunk_depth},
        {"num_classes", model.num_classes},
        {"num_bins", model.num_bins},
        {"bin_size", model.bin_size},
        {"uncertainty", model.uncertainty},
        {"temperature_init", model.temperature_init},
        {"share_directions", model.share_directions},
        {"levels", std::move(levels)}}},
      {"assignment",
       {{"radius_metric",
         radius_metric == RadiusMetric::kChebyshev ? "chebyshev" : "euclidean"}}},
      {"loss",
       {{"lambda_bin", loss.lambda_bin},
        {"lambda_loc", loss.lambda_loc},
        {"focal_alpha", loss.focal_alpha},
        {"focal_gamma", loss.focal_gamma},
        {"iou_loss", loss.iou_mode == IouLossMode::kNegLog ? "neg_log" : "one_minus"}}},
      {"optimizer",
       {{"lr", optimizer.lr},
        {"momentum", optimizer.momentum},
        {"weight_decay", optimizer.weight_decay},
        {"steps", optimizer.steps},
        {"batch_size", optimizer.batch_size},
        {"warmup_steps", optimizer.warmup_steps}}},
      {"data",
       {{"image_size", data.image_size},
        {"num_train", num_train},
        {"num_test", num_test},
        {"seed", data_seed},
        {"min_objects", data.min_objects},
        {"max_objects", data.max_objects},
        {"min_size", data.min_size},
        {"max_size", data.max_size},
        {"max_aspect", data.max_aspect},
        {"max_overlap_iou", data.max_overlap_iou},
        {"allow_crowding", data.allow_crowding},
        {"noise", data.noise}}},
      {"inference",
       {{"scoring_mode", detect.scoring == ScoringMode::kFused ? "fused" : "cls_only"},
        {"score_threshold", detect.score_threshold},
        {"nms_threshold", detect.nms_threshold},
        {"top_k_per_level", detect.top_k_per_level},
        {"max_detections", detect.max_detections}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  std::vector<std::string> bad;
  try {
    read(j, "seed", cfg.seed);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read(m, "channels", cfg.model.channels);
      read(m, "trunk_depth", cfg.model.trunk_depth);
      read(m, "num_classes", cfg.model.num_classes);
      read(m, "num_bins", cfg.model.num_bins);
      read(m, "bin_size", cfg.model.bin_size);
      read(m, "uncertainty", cfg.model.uncertainty);
      read(m, "temperature_init", cfg.model.temperature_init);
      read(m, "share_directions", cfg.model.share_directions);
      if (m.contains("levels")) {
        cfg.model.levels.clear();
        for (const auto& l : m.at("levels")) {
          LevelConfig lc;
          lc.level = l.at("level");
          lc.range_lo = l.at("range_lo");
          lc.range_hi = hi_from_json(l.at("range_hi"));
          if (l.contains("bin_hi")) lc.bin_hi = l.at("bin_hi");
          cfg.model.levels.push_back(lc);
        }
      }
    }
    if (j.contains("assignment")) {
      std::string metric = "chebyshev";
      read(j.at("assignment"), "radius_metric", metric);
      if (metric == "chebyshev") {
        cfg.radius_metric = RadiusMetric::kChebyshev;
      } else if (metric == "euclidean") {
        cfg.radius_metric = RadiusMetric::kEuclidean;
      } else {
        bad.push_back("assignment.radius_metric: want chebyshev|euclidean");
      }
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      read(l, "lambda_bin", cfg.loss.lambda_bin);
      read(l, "lambda_loc", cfg.loss.lambda_loc);
      read(l, "focal_alpha", cfg.loss.focal_alpha);
      read(l, "focal_gamma", cfg.loss.focal_gamma);
      if (l.contains("iou_loss")) {
        std::string mode = l.at("iou_loss");
        if (mode == "neg_log") {
          cfg.loss.iou_mode = IouLossMode::kNegLog;
        } else if (mode == "one_minus") {
          cfg.loss.iou_mode = IouLossMode::kOneMinus;
        } else {
          bad.push_back("loss.iou_loss: want neg_log|one_minus");
        }
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      read(o, "lr", cfg.optimizer.lr);
      read(o, "momentum", cfg.optimizer.momentum);
      read(o, "weight_decay", cfg.optimizer.weight_decay);
      read(o, "steps", cfg.optimizer.steps);
      read(o, "batch_size", cfg.optimizer.batch_size);
      read(o, "warmup_steps", cfg.optimizer.warmup_steps);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      read(d, "image_size", cfg.data.image_size);
      read(d, "num_train", cfg.num_train);
      read(d, "num_test", cfg.num_test);
      read(d, "seed", cfg.data_seed);
      read(d, "min_objects", cfg.data.min_objects);
      read(d, "max_objects", cfg.data.max_objects);
      read(d, "min_size", cfg.data.min_size);
      read(d, "max_size", cfg.data.max_size);
      read(d, "max_aspect", cfg.data.max_aspect);
      read(d, "max_overlap_iou", cfg.data.max_overlap_iou);
      read(d, "allow_crowding", cfg.data.allow_crowding);
      read(d, "noise", cfg.data.noise);
    }
    if (j.contains("inference")) {
      const auto& i = j.at("inference");
      if (i.contains("scoring_mode")) {
        std::string mode = i.at("scoring_mode");
        if (mode == "fused") {
          cfg.detect.scoring = ScoringMode::kFused;
        } else if (mode == "cls_only") {
          cfg.detect.scoring = ScoringMode::kClsOnly;
        } else {
          bad.push_back("inference.scoring_mode: want fused|cls_only");
        }
      }
      read(i, "score_threshold", cfg.detect.score_threshold);
      read(i, "nms_threshold", cfg.detect.nms_threshold);
      read(i, "top_k_per_level", cfg.detect.top_k_per_level);
      read(i, "max_detections", cfg.detect.max_detections);
    }
  } catch (const nlohmann::json::exception& e) {
    bad.push_back(std::string("json: ") + e.what());
  }
  if (!bad.empty()) throw ConfigError(bad);
  cfg.resolve();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError({"cannot open config file: " + path});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError({std::string("parse error in ") + path + ": " + e.what()});
  }
  return from_json(j);
}

uint64_t ExperimentConfig::data_seed_train() const { return Rng::mix(data_seed, 0x747261696eULL); }
uint64_t ExperimentConfig::data_seed_test() const { return Rng::mix(data_seed, 0x74657374ULL); }

std::string config_hash(const ExperimentConfig& cfg) {
  std::string s = cfg.to_json().dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace scopenet
