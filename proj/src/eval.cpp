#include "scopenet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

namespace scopenet {

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

constexpr int kRecallPoints = 101;
constexpr double kAreaSmall = 32.0 * 32.0;
constexpr double kAreaMedium = 96.0 * 96.0;

struct ClassCurve {
  std::vector<double> interp_precision;  // kRecallPoints entries
  double ap = -1.0;                      // -1 when the class/range has no GT
  double recall = 0.0;                   // recall over the full detection list
};

bool score_order(const Detection& a, const Detection& b) {
  if (a.p_box != b.p_box) return a.p_box > b.p_box;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.level != b.level) return a.level < b.level;
  if (a.loc_index != b.loc_index) return a.loc_index < b.loc_index;
  return a.class_id < b.class_id;
}

/// Greedy matching and 101-point interpolation for one class at one IoU
/// threshold. GTs outside [area_lo, area_hi) are ignore-only: detections may
/// match them but such detections (and unmatched detections outside the
/// range) drop out of the precision/recall bookkeeping.
ClassCurve class_curve(const std::vector<Detection>& dets_sorted,
                       const std::map<int, std::vector<LabeledBox>>& gt_by_image,
                       double iou_thr, double area_lo, double area_hi,
                       int max_dets_per_image) {
  ClassCurve out;
  out.interp_precision.assign(kRecallPoints, 0.0);

  int npos = 0;
  std::map<int, std::vector<char>> gt_ignored, gt_matched;
  for (const auto& [img, objs] : gt_by_image) {
    auto& ign = gt_ignored[img];
    gt_matched[img].assign(objs.size(), 0);
    for (const auto& o : objs) {
      double a = o.box.area();
      bool ignored = a < area_lo || a >= area_hi;
      ign.push_back(ignored ? 1 : 0);
      if (!ignored) ++npos;
    }
  }
  if (npos == 0) return out;

  std::map<int, int> per_image_count;
  std::vector<char> tp_flags, fp_flags;
  for (const Detection& d : dets_sorted) {
    if (max_dets_per_image > 0 && ++per_image_count[d.image_id] > max_dets_per_image) continue;
    auto it = gt_by_image.find(d.image_id);
    int best = -1;
    bool best_ignored = false;
    if (it != gt_by_image.end()) {
      const auto& objs = it->second;
      const auto& matched = gt_matched[d.image_id];
      const auto& ign = gt_ignored[d.image_id];
      // Prefer the highest-IoU unmatched regular GT; fall back to ignored
      // GTs. IoU ties keep the lowest GT index.
      for (int pass = 0; pass < 2 && best < 0; ++pass) {
        const bool want_ignored = pass == 1;
        double best_iou = 0.0;
        for (size_t gi = 0; gi < objs.size(); ++gi) {
          if (matched[gi] || (ign[gi] != 0) != want_ignored) continue;
          double v = iou(d.box, objs[gi].box);
          if (v >= iou_thr && v > best_iou) {
            best = static_cast<int>(gi);
            best_iou = v;
            best_ignored = want_ignored;
          }
        }
      }
    }
    if (best >= 0) {
      gt_matched[d.image_id][best] = 1;
      if (best_ignored) continue;  // matched an ignore-region GT: drop silently
      tp_flags.push_back(1);
      fp_flags.push_back(0);
    } else {
      double a = d.box.area();
      if (a < area_lo || a >= area_hi) continue;  // out-of-range unmatched: drop
      tp_flags.push_back(0);
      fp_flags.push_back(1);
    }
  }

  int tp = 0, fp = 0;
  std::vector<double> precision(tp_flags.size()), recall(tp_flags.size());
  for (size_t i = 0; i < tp_flags.size(); ++i) {
    tp += tp_flags[i];
    fp += fp_flags[i];
    precision[i] = static_cast<double>(tp) / (tp + fp);
    recall[i] = static_cast<double>(tp) / npos;
  }
  out.recall = recall.empty() ? 0.0 : recall.back();

  // Monotone envelope, then sample at the 101 recall thresholds.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double sum = 0.0;
  size_t idx = 0;
  for (int r = 0; r < kRecallPoints; ++r) {
    double want = r / 100.0;
    while (idx < recall.size() && recall[idx] < want - 1e-12) ++idx;
    double p = idx < precision.size() ? precision[idx] : 0.0;
    out.interp_precision[r] = p;
    sum += p;
  }
  out.ap = sum / kRecallPoints;
  return out;
}

struct ByClass {
  std::vector<Detection> dets;  // sorted by score
  std::map<int, std::vector<LabeledBox>> gt_by_image;
  int gt_count = 0;
};

std::map<int, ByClass> split_by_class(const std::vector<Detection>& detections,
                                      const GroundTruth& gt) {
  std::map<int, ByClass> by_class;
  int total_gt = 0;
  for (const auto& img : gt) {
    for (const auto& o : img.objects) {
      auto& slot = by_class[o.class_id];
      slot.gt_by_image[img.image_id].push_back(o);
      ++slot.gt_count;
      ++total_gt;
    }
  }
  if (total_gt == 0) throw std::invalid_argument("evaluate: empty ground truth");
  for (const Detection& d : detections) {
    auto it = by_class.find(d.class_id);
    if (it != by_class.end()) it->second.dets.push_back(d);
    // detections of classes absent from GT contribute nothing (COCO skips them)
  }
  for (auto& [cls, slot] : by_class) {
    std::sort(slot.dets.begin(), slot.dets.end(), score_order);
  }
  return by_class;
}

}  // namespace

EvalResult evaluate(const std::vector<Detection>& detections, const GroundTruth& gt,
                    const std::vector<double>& iou_thresholds) {
  if (iou_thresholds.empty()) throw std::invalid_argument("evaluate: no IoU thresholds");
  auto by_class = split_by_class(detections, gt);
  const double inf = std::numeric_limits<double>::infinity();

  struct RangeAcc {
    double lo, hi;
    double ap_sum = 0;
    int n = 0;
  };
  RangeAcc all{0.0, inf}, small{0.0, kAreaSmall}, medium{kAreaSmall, kAreaMedium},
      large{kAreaMedium, inf};

  EvalResult res;
  double ap50_sum = 0, ap75_sum = 0;
  int ap50_n = 0, ap75_n = 0;
  double ar10_sum = 0, ar100_sum = 0;
  int ar_n = 0;

  for (auto& [cls, slot] : by_class) {
    double cls_ap_sum = 0;
    int cls_ap_n = 0;
    double rec10 = 0, rec100 = 0;
    for (double thr : iou_thresholds) {
      ClassCurve full = class_curve(slot.dets, slot.gt_by_image, thr, 0.0, inf, 0);
      if (full.ap >= 0) {
        cls_ap_sum += full.ap;
        ++cls_ap_n;
        if (std::abs(thr - 0.50) < 1e-9) {
          ap50_sum += full.ap;
          ++ap50_n;
        }
        if (std::abs(thr - 0.75) < 1e-9) {
          ap75_sum += full.ap;
          ++ap75_n;
        }
      }
      for (RangeAcc* acc : {&small, &medium, &large}) {
        ClassCurve c = class_curve(slot.dets, slot.gt_by_image, thr, acc->lo, acc->hi, 0);
        if (c.ap >= 0) {
          acc->ap_sum += c.ap;
          ++acc->n;
        }
      }
      rec10 += class_curve(slot.dets, slot.gt_by_image, thr, 0.0, inf, 10).recall;
      rec100 += class_curve(slot.dets, slot.gt_by_image, thr, 0.0, inf, 100).recall;
    }
    if (cls_ap_n > 0) {
      double cls_ap = cls_ap_sum / cls_ap_n;
      res.per_class_ap.emplace_back(cls, cls_ap);
      all.ap_sum += cls_ap;
      ++all.n;
    }
    ar10_sum += rec10 / iou_thresholds.size();
    ar100_sum += rec100 / iou_thresholds.size();
    ++ar_n;
  }

  res.ap = all.n ? all.ap_sum / all.n : 0.0;
  res.ap50 = ap50_n ? ap50_sum / ap50_n : 0.0;
  res.ap75 = ap75_n ? ap75_sum / ap75_n : 0.0;
  res.ap_small = small.n ? small.ap_sum / small.n : -1.0;
  res.ap_medium = medium.n ? medium.ap_sum / medium.n : -1.0;
  res.ap_large = large.n ? large.ap_sum / large.n : -1.0;
  res.ar10 = ar_n ? ar10_sum / ar_n : 0.0;
  res.ar100 = ar_n ? ar100_sum / ar_n : 0.0;
  return res;
}

void export_pr_curve(const std::vector<Detection>& detections, const GroundTruth& gt,
                     double iou_threshold, const std::string& path) {
  auto by_class = split_by_class(detections, gt);
  std::vector<double> mean_p(kRecallPoints, 0.0);
  int n = 0;
  const double inf = std::numeric_limits<double>::infinity();
  for (auto& [cls, slot] : by_class) {
    ClassCurve c = class_curve(slot.dets, slot.gt_by_image, iou_threshold, 0.0, inf, 0);
    if (c.ap < 0) continue;
    for (int i = 0; i < kRecallPoints; ++i) mean_p[i] += c.interp_precision[i];
    ++n;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("export_pr_curve: cannot open " + path);
  f << "recall,precision\n";
  for (int i = 0; i < kRecallPoints; ++i) {
    f << i / 100.0 << "," << (n ? mean_p[i] / n : 0.0) << "\n";
  }
  if (!f) throw std::runtime_error("export_pr_curve: write failed for " + path);
}

}  // namespace scopenet
