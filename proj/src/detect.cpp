#include "scopenet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scopenet/assignment.hpp"

namespace scopenet {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Content-based ordering: score descending, then (level, location, class)
// ascending so equal-score results never depend on construction order.
bool det_before(const Detection& a, const Detection& b) {
  if (a.p_box != b.p_box) return a.p_box > b.p_box;
  if (a.level != b.level) return a.level < b.level;
  if (a.loc_index != b.loc_index) return a.loc_index < b.loc_index;
  return a.class_id < b.class_id;
}

}  // namespace

std::vector<Detection> decode_level(const LevelValue& lv,
                                    const std::array<ScopeAnchorSet, 4>& anchors,
                                    const DetectConfig& cfg, int image_id, int* dropped) {
  const Tensor& cls = *lv.cls_logits;
  const Tensor& loc = *lv.loc_out;
  const int c = cls.shape()[0];
  const int n = lv.fh * lv.fw;
  const int num_bins = anchors[0].num_bins();
  if (loc.shape()[0] != 8 * num_bins + 4) {
    throw std::invalid_argument("decode_level: localization channel count mismatch");
  }

  std::vector<Detection> out;
  std::vector<double> raw(num_bins + 1);
  for (int iy = 0; iy < lv.fh; ++iy) {
    for (int ix = 0; ix < lv.fw; ++ix) {
      const int li = iy * lv.fw + ix;
      const Point p = location_point(ix, iy, 1 << lv.level);

      // Shared per-location localization decode.
      BorderDistances d;
      std::array<int, 4> chosen{};
      std::array<double, 4> ptilde{};
      double p_loc = 0.0;
      bool degenerate = false;
      for (int x = 0; x < 4; ++x) {
        for (int b = 0; b <= num_bins; ++b) raw[b] = loc[(x * (num_bins + 1) + b) * n + li];
        auto [probs, sigma2] = bin_probabilities(raw, cfg.uncertainty);
        (void)sigma2;
        int best = 0;
        for (int b = 1; b < num_bins; ++b) {
          if (probs[b] > probs[best]) best = b;
        }
        chosen[x] = best + 1;
        ptilde[x] = probs[best];
        p_loc += probs[best];
        double t = loc[(4 * (num_bins + 1) + x * num_bins + best) * n + li];
        d.d[x] = decode_border(anchors[x], best + 1, t);
        if (!(d.d[x] > 0.0) || !std::isfinite(d.d[x])) degenerate = true;
      }
      p_loc *= 0.25;
      if (!degenerate && (d.left() + d.right() <= 0 || d.top() + d.bottom() <= 0)) {
        degenerate = true;
      }

      for (int ci = 0; ci < c; ++ci) {
        double p_cls = sigmoid(cls[ci * n + li]);
        double score = cfg.scoring == ScoringMode::kFused ? p_cls * p_loc : p_cls;
        if (score < cfg.score_threshold) continue;
        if (degenerate) {
          if (dropped) ++*dropped;
          continue;
        }
        Detection det;
        det.image_id = image_id;
        det.class_id = ci + 1;
        det.box = distances_to_box(d, p);
        det.p_cls = p_cls;
        det.p_loc = p_loc;
        det.p_box = score;
        det.level = lv.level;
        det.loc_index = li;
        det.chosen_bin = chosen;
        det.p_tilde = ptilde;
        out.push_back(det);
      }
    }
  }
  return out;
}

std::vector<Detection> top_k(std::vector<Detection> dets, int k) {
  std::sort(dets.begin(), dets.end(), det_before);
  if (static_cast<int>(dets.size()) > k) dets.resize(k);
  return dets;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), det_before);
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id != d.class_id) continue;
      if (iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> detect_image(const std::vector<LevelValue>& levels,
                                    const std::vector<std::array<ScopeAnchorSet, 4>>& anchors,
                                    const DetectConfig& cfg, int image_id, int* dropped) {
  std::vector<Detection> all;
  for (size_t li = 0; li < levels.size(); ++li) {
    auto dets = top_k(decode_level(levels[li], anchors[li], cfg, image_id, dropped),
                      cfg.top_k_per_level);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  auto kept = nms(std::move(all), cfg.nms_threshold);
  if (static_cast<int>(kept.size()) > cfg.max_detections) kept.resize(cfg.max_detections);
  return kept;
}

}  // namespace scopenet
