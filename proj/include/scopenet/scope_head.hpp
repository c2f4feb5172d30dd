#pragma once

#include <utility>
#include <vector>

namespace scopenet {

/// Per-level, per-direction set of 1D anchors. Distances along one direction
/// are split into N half-open bins I_n = [edges[n-1], edges[n]); each bin owns
/// a learnable log2 anchor scale, so the anchor itself is 2^log_scales[n-1].
/// Edges are fixed after construction; only the log scales train.
struct ScopeAnchorSet {
  int level = 0;
  std::vector<double> edges;       // N+1 ascending, edges[0] >= 0
  std::vector<double> log_scales;  // N

  int num_bins() const { return static_cast<int>(log_scales.size()); }
};

/// Build an anchor set over [lo, hi). Edges descend from hi by a factor of
/// 2^bin_size per bin and the bottom edge is pinned at lo, so the lowest bin
/// absorbs whatever range remains. Log scales start at the geometric mean of
/// their bin (for a zero lower edge, at half the upper edge).
ScopeAnchorSet init_anchor_set(int level, double lo, double hi, int num_bins, double bin_size);

/// Bin decode of one border distance: d = 2^a_n * e^t.
double decode_border(const ScopeAnchorSet& anchors, int bin, double t);

/// Inverse of decode_border: t = ln(d / 2^a_n). Used to form training targets.
double encode_border(const ScopeAnchorSet& anchors, int bin, double d);

/// 1-based index n with edges[n-1] <= d < edges[n]; out-of-range distances
/// clamp to the nearest bin.
int assign_bin(const ScopeAnchorSet& anchors, double d);

/// Temperature-smoothed bin probabilities from N+1 raw scores. The last score
/// parameterizes the temperature, sigma2 = e^{s_{N+1}}, and is excluded from
/// the normalization: p_n = e^{s_n/sigma2} / sum_m e^{s_m/sigma2}.
/// With `use_temperature` false the temperature is pinned at 1.
std::pair<std::vector<double>, double> bin_probabilities(const std::vector<double>& raw_scores,
                                                         bool use_temperature = true);

}  // namespace scopenet
