#pragma once

#include <array>
#include <vector>

#include "scopenet/geometry.hpp"
#include "scopenet/scope_head.hpp"
#include "scopenet/tensor.hpp"

namespace scopenet {

enum class ScoringMode { kClsOnly, kFused };

struct DetectConfig {
  ScoringMode scoring = ScoringMode::kFused;
  bool uncertainty = true;       // evaluate Eq-2 temperatures at test time
  double score_threshold = 0.05; // applied to the operative score before top-K
  double nms_threshold = 0.5;
  int top_k_per_level = 1000;
  int max_detections = 100;
};

struct Detection {
  int image_id = 0;
  int class_id = 0;  // 1..C
  Box box;
  double p_cls = 0.0;
  double p_loc = 1.0;
  double p_box = 0.0;  // operative score: p_cls or p_cls * p_loc
  int level = 0;
  int loc_index = 0;   // row-major feature location, for deterministic ties
  std::array<int, 4> chosen_bin = {0, 0, 0, 0};
  std::array<double, 4> p_tilde = {1, 1, 1, 1};
};

/// Raw per-level value tensors of one image's forward pass.
struct LevelValue {
  int level = 0;
  int fh = 0, fw = 0;
  const Tensor* cls_logits = nullptr;  // [C, fh, fw]
  const Tensor* loc_out = nullptr;     // [4(N+1)+4N, fh, fw]
};

/// Per-location decode: per direction take the argmax bin of the Eq-2
/// probabilities, decode its regression through the anchor scale, and score
/// the box with p_cls or p_cls * p_loc. Degenerate boxes are dropped and
/// counted in `dropped`.
std::vector<Detection> decode_level(const LevelValue& lv,
                                    const std::array<ScopeAnchorSet, 4>& anchors,
                                    const DetectConfig& cfg, int image_id, int* dropped = nullptr);

/// Keep the K best detections by score; ties keep the lower location index.
std::vector<Detection> top_k(std::vector<Detection> dets, int k);

/// Greedy class-wise suppression at the configured IoU threshold. The result
/// does not depend on input order: sorting ties break on content.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Full post-processing for one image: threshold, per-level top-K, NMS,
/// detection cap.
std::vector<Detection> detect_image(const std::vector<LevelValue>& levels,
                                    const std::vector<std::array<ScopeAnchorSet, 4>>& anchors,
                                    const DetectConfig& cfg, int image_id, int* dropped = nullptr);

}  // namespace scopenet
