#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scopenet/geometry.hpp"
#include "scopenet/scope_head.hpp"

namespace scopenet {

enum class RadiusMetric { kChebyshev, kEuclidean };

/// One pyramid level: stride 2^level, a regression range owned by the level,
/// and the two branch radii derived from the stride. range_hi may be +inf for
/// the top level; bin_hi is the finite edge used when laying out anchor bins.
struct FpnLevelSpec {
  int level = 3;
  double range_lo = 0.0;
  double range_hi = 0.0;
  double bin_hi = 0.0;

  int stride() const { return 1 << level; }
  double r_cls() const { return 1.5 * stride(); }
  double r_loc() const { return 2.0 * stride(); }
  /// Levels 3..7 with the standard ranges [0,64),[64,128),...,[512,inf).
  static std::vector<FpnLevelSpec> standard_pyramid();
};

/// Feature-cell center in image coordinates.
inline Point location_point(int ix, int iy, int stride) {
  return Point{(ix + 0.5) * stride, (iy + 0.5) * stride};
}

/// Per-location training targets for one level. Locations are row-major
/// (iy * fw + ix). cls and loc positives are assigned independently, each
/// with its own radius.
struct LevelTargets {
  int level = 0;
  int fh = 0, fw = 0;

  std::vector<int> cls_target;          // 0 = negative, else class id
  std::vector<int> cls_matched_gt;      // -1 when negative
  std::vector<uint8_t> loc_positive;    // 0/1
  std::vector<int> loc_matched_gt;      // -1 when not positive
  std::vector<std::array<int, 4>> bin_target;  // 1-based bin per direction
  std::vector<BorderDistances> border_target;

  int size() const { return fh * fw; }
  int num_cls_positive() const;
  int num_loc_positive() const;
};

struct TargetSet {
  std::vector<LevelTargets> levels;
  int skipped_gts = 0;  // ground truths below the 2px minimum side

  int num_cls_positive() const;
  int num_loc_positive() const;
};

/// Smallest-area candidate wins; ties break to the lowest ground-truth index.
int resolve_overlaps(const std::vector<int>& candidates, const std::vector<LabeledBox>& gts);

/// Assign every feature location of every level to at most one ground truth
/// per branch. A location is positive for a GT iff the location point lies
/// strictly inside the GT box, its distance to the GT center is within the
/// branch radius, and the largest of its four border distances falls in the
/// level's regression range. feature map sizes are ceil(image/stride).
TargetSet assign_targets(const std::vector<LabeledBox>& gts,
                         const std::vector<FpnLevelSpec>& levels,
                         const std::vector<std::array<ScopeAnchorSet, 4>>& anchors,
                         int image_h, int image_w, int num_classes,
                         RadiusMetric metric = RadiusMetric::kChebyshev);

}  // namespace scopenet
