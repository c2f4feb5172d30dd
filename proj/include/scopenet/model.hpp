#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scopenet/assignment.hpp"
#include "scopenet/autograd.hpp"
#include "scopenet/scope_head.hpp"

namespace scopenet {

struct LevelConfig {
  int level = 3;
  double range_lo = 0.0;
  double range_hi = 0.0;  // +inf allowed for the top level
  double bin_hi = 0.0;    // finite bin ladder top; defaults to range_hi when finite
};

struct ModelConfig {
  int in_channels = 1;
  int channels = 16;
  int trunk_depth = 2;
  int num_classes = 3;
  int num_bins = 5;
  double bin_size = 1.0;
  bool uncertainty = true;       // learn sigma^2 = e^{s_{N+1}}; else pinned at 1
  double temperature_init = 1.0; // bias of the temperature channels: ln(sigma2_0)
  bool share_directions = false; // one anchor-scale vector per level instead of four
  std::vector<LevelConfig> levels;

  /// 64x64 grayscale scenes, levels 3-4 with ranges [0,32) and [32,inf).
  static ModelConfig desk_default();
};

/// One level's head outputs inside a graph. loc_out channel layout:
///   [x*(N+1) .. x*(N+1)+N-1]  bin scores for direction x in (l,t,r,b)
///   [x*(N+1)+N]               temperature score s_{N+1} for direction x
///   [4*(N+1)+x*N .. +N-1]     border regressions t_{x,n}
struct LevelOutput {
  int level = 0;
  int fh = 0, fw = 0;
  Var cls_logits;                     // [C, fh, fw]
  Var loc_out;                        // [4(N+1)+4N, fh, fw]
  std::array<Var, 4> anchor_scales;   // learnable log2 scales, one [N] per direction
};

/// Fully convolutional two-branch head over a small stride-2 conv pyramid.
/// The backbone chain applies one stride-2 conv per level; the classification
/// and localization trunks and both head convs are shared across levels.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  int loc_channels() const { return 8 * cfg_.num_bins + 4; }
  int cls_channels() const { return cfg_.num_classes; }

  /// Fresh weights: He-normal conv weights, zero biases except the
  /// classification head bias, set so the initial positive probability is
  /// about 0.01; anchor log scales from the bin geometric-mean rule.
  void init_params(ParamStore& store, uint64_t seed) const;

  std::vector<LevelOutput> forward(Graph& g, ParamStore& store, const Tensor& image) const;

  std::vector<FpnLevelSpec> level_specs() const;
  /// Anchor sets with the fixed bin edges and log scales as configured at
  /// initialization.
  const std::vector<std::array<ScopeAnchorSet, 4>>& base_anchors() const { return anchors_; }
  /// Anchor sets carrying the current learned log scales from `store`.
  std::vector<std::array<ScopeAnchorSet, 4>> anchors_from_store(const ParamStore& store) const;

  std::string anchor_param_name(int level, int direction) const;

 private:
  ModelConfig cfg_;
  std::vector<std::array<ScopeAnchorSet, 4>> anchors_;
};

}  // namespace scopenet
