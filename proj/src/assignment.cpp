#include "scopenet/assignment.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace scopenet {

std::vector<FpnLevelSpec> FpnLevelSpec::standard_pyramid() {
  const double kInf = std::numeric_limits<double>::infinity();
  return {
      {3, 0.0, 64.0, 64.0},  {4, 64.0, 128.0, 128.0},   {5, 128.0, 256.0, 256.0},
      {6, 256.0, 512.0, 512.0}, {7, 512.0, kInf, 1024.0},
  };
}

int LevelTargets::num_cls_positive() const {
  int n = 0;
  for (int c : cls_target) n += c > 0 ? 1 : 0;
  return n;
}

int LevelTargets::num_loc_positive() const {
  int n = 0;
  for (uint8_t p : loc_positive) n += p;
  return n;
}

int TargetSet::num_cls_positive() const {
  int n = 0;
  for (const auto& l : levels) n += l.num_cls_positive();
  return n;
}

int TargetSet::num_loc_positive() const {
  int n = 0;
  for (const auto& l : levels) n += l.num_loc_positive();
  return n;
}

int resolve_overlaps(const std::vector<int>& candidates, const std::vector<LabeledBox>& gts) {
  if (candidates.empty()) throw std::invalid_argument("resolve_overlaps: no candidates");
  int best = candidates[0];
  for (size_t i = 1; i < candidates.size(); ++i) {
    int c = candidates[i];
    double a = gts[c].box.area(), b = gts[best].box.area();
    if (a < b || (a == b && c < best)) best = c;
  }
  return best;
}

namespace {

double center_distance(const Point& p, const Box& b, RadiusMetric metric) {
  double dx = std::abs(p.x - b.cx());
  double dy = std::abs(p.y - b.cy());
  return metric == RadiusMetric::kChebyshev ? std::max(dx, dy) : std::hypot(dx, dy);
}

}  // namespace

TargetSet assign_targets(const std::vector<LabeledBox>& gts,
                         const std::vector<FpnLevelSpec>& levels,
                         const std::vector<std::array<ScopeAnchorSet, 4>>& anchors,
                         int image_h, int image_w, int num_classes, RadiusMetric metric) {
  if (anchors.size() != levels.size()) {
    throw std::invalid_argument("assign_targets: anchors/levels size mismatch");
  }

  TargetSet out;
  std::vector<int> usable;
  usable.reserve(gts.size());
  for (size_t i = 0; i < gts.size(); ++i) {
    const LabeledBox& gt = gts[i];
    if (!gt.box.valid()) throw std::invalid_argument("assign_targets: invalid ground-truth box");
    if (gt.class_id < 1 || gt.class_id > num_classes) {
      throw std::invalid_argument("assign_targets: class id out of range");
    }
    if (gt.box.width() < 2.0 || gt.box.height() < 2.0) {
      std::fprintf(stderr, "[assign] warning: skipping ground truth %zu smaller than 2px\n", i);
      ++out.skipped_gts;
      continue;
    }
    usable.push_back(static_cast<int>(i));
  }

  for (size_t li = 0; li < levels.size(); ++li) {
    const FpnLevelSpec& spec = levels[li];
    LevelTargets lt;
    lt.level = spec.level;
    lt.fh = (image_h + spec.stride() - 1) / spec.stride();
    lt.fw = (image_w + spec.stride() - 1) / spec.stride();
    const int n = lt.size();
    lt.cls_target.assign(n, 0);
    lt.cls_matched_gt.assign(n, -1);
    lt.loc_positive.assign(n, 0);
    lt.loc_matched_gt.assign(n, -1);
    lt.bin_target.assign(n, {0, 0, 0, 0});
    lt.border_target.assign(n, BorderDistances{});

    for (int iy = 0; iy < lt.fh; ++iy) {
      for (int ix = 0; ix < lt.fw; ++ix) {
        const int loc = iy * lt.fw + ix;
        const Point p = location_point(ix, iy, spec.stride());

        std::vector<int> cls_cand, loc_cand;
        for (int gi : usable) {
          const Box& b = gts[gi].box;
          if (!b.contains(p.x, p.y)) continue;
          BorderDistances d = box_to_distances(p, b);
          double dmax = d.max();
          if (dmax < spec.range_lo || dmax >= spec.range_hi) continue;
          double dc = center_distance(p, b, metric);
          if (dc <= spec.r_cls()) cls_cand.push_back(gi);
          if (dc <= spec.r_loc()) loc_cand.push_back(gi);
        }

        if (!cls_cand.empty()) {
          int win = resolve_overlaps(cls_cand, gts);
          lt.cls_target[loc] = gts[win].class_id;
          lt.cls_matched_gt[loc] = win;
        }
        if (!loc_cand.empty()) {
          int win = resolve_overlaps(loc_cand, gts);
          lt.loc_positive[loc] = 1;
          lt.loc_matched_gt[loc] = win;
          BorderDistances d = box_to_distances(p, gts[win].box);
          lt.border_target[loc] = d;
          for (int x = 0; x < 4; ++x) {
            lt.bin_target[loc][x] = assign_bin(anchors[li][x], d.d[x]);
          }
        }
      }
    }
    out.levels.push_back(std::move(lt));
  }
  return out;
}

}  // namespace scopenet
