#include "scopenet/scope_head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace scopenet {

ScopeAnchorSet init_anchor_set(int level, double lo, double hi, int num_bins, double bin_size) {
  if (num_bins < 1) throw std::invalid_argument("init_anchor_set: num_bins must be >= 1");
  if (bin_size <= 0) throw std::invalid_argument("init_anchor_set: bin_size must be positive");
  if (!(hi > lo) || lo < 0 || !std::isfinite(hi)) {
    throw std::invalid_argument("init_anchor_set: need finite 0 <= lo < hi");
  }

  ScopeAnchorSet out;
  out.level = level;
  out.edges.resize(num_bins + 1);
  out.edges[num_bins] = hi;
  for (int n = num_bins - 1; n >= 1; --n) {
    out.edges[n] = hi / std::exp2(bin_size * (num_bins - n));
  }
  out.edges[0] = lo;
  if (num_bins > 1 && out.edges[1] <= lo) {
    throw std::invalid_argument("init_anchor_set: bin ladder reaches " +
                                std::to_string(out.edges[1]) + " <= lo=" + std::to_string(lo) +
                                "; shrink bin_size or num_bins");
  }

  out.log_scales.resize(num_bins);
  for (int n = 0; n < num_bins; ++n) {
    double b_lo = out.edges[n], b_hi = out.edges[n + 1];
    out.log_scales[n] = b_lo > 0 ? std::log2(std::sqrt(b_lo * b_hi)) : std::log2(b_hi / 2.0);
  }
  return out;
}

double decode_border(const ScopeAnchorSet& anchors, int bin, double t) {
  if (bin < 1 || bin > anchors.num_bins()) {
    throw std::out_of_range("decode_border: bin " + std::to_string(bin) + " out of 1.." +
                            std::to_string(anchors.num_bins()));
  }
  return std::exp2(anchors.log_scales[bin - 1]) * std::exp(t);
}

double encode_border(const ScopeAnchorSet& anchors, int bin, double d) {
  if (bin < 1 || bin > anchors.num_bins()) {
    throw std::out_of_range("encode_border: bin " + std::to_string(bin) + " out of 1.." +
                            std::to_string(anchors.num_bins()));
  }
  if (d <= 0) throw std::invalid_argument("encode_border: distance must be positive");
  return std::log(d / std::exp2(anchors.log_scales[bin - 1]));
}

int assign_bin(const ScopeAnchorSet& anchors, double d) {
  if (d < 0) throw std::invalid_argument("assign_bin: negative distance");
  int n = anchors.num_bins();
  if (d < anchors.edges[0]) return 1;
  for (int i = 1; i <= n; ++i) {
    if (d < anchors.edges[i]) return i;
  }
  return n;
}

std::pair<std::vector<double>, double> bin_probabilities(const std::vector<double>& raw_scores,
                                                         bool use_temperature) {
  if (raw_scores.size() < 2) {
    throw std::invalid_argument("bin_probabilities: need N+1 >= 2 raw scores");
  }
  for (double s : raw_scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("bin_probabilities: non-finite score");
  }
  int n = static_cast<int>(raw_scores.size()) - 1;
  double sigma2 = use_temperature ? std::exp(raw_scores[n]) : 1.0;

  std::vector<double> scaled(n);
  for (int i = 0; i < n; ++i) scaled[i] = raw_scores[i] / sigma2;
  double mx = *std::max_element(scaled.begin(), scaled.end());
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    scaled[i] = std::exp(scaled[i] - mx);
    z += scaled[i];
  }
  for (int i = 0; i < n; ++i) scaled[i] /= z;
  return {std::move(scaled), sigma2};
}

}  // namespace scopenet
