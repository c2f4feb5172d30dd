#pragma once

#include <string>
#include <vector>

#include "scopenet/detect.hpp"
#include "scopenet/geometry.hpp"

namespace scopenet {

struct GroundTruthImage {
  int image_id = 0;
  std::vector<LabeledBox> objects;
};
using GroundTruth = std::vector<GroundTruthImage>;

struct EvalResult {
  double ap = 0;    // mean over IoU 0.50:0.05:0.95
  double ap50 = 0;
  double ap75 = 0;
  double ap_small = -1, ap_medium = -1, ap_large = -1;  // -1 when the split is empty
  double ar10 = 0, ar100 = 0;
  std::vector<std::pair<int, double>> per_class_ap;  // class id -> AP over thresholds
};

std::vector<double> coco_iou_thresholds();  // 0.50:0.05:0.95

/// COCO-protocol evaluation: per class and IoU threshold, detections are
/// matched greedily in descending score order, each ground truth at most
/// once, and precision is interpolated at 101 recall points. Matching is a
/// pure function of the inputs; detection input order never matters.
EvalResult evaluate(const std::vector<Detection>& detections, const GroundTruth& gt,
                    const std::vector<double>& iou_thresholds = coco_iou_thresholds());

/// Class-averaged interpolated PR curve at one IoU threshold as CSV
/// (header `recall,precision`, 101 rows).
void export_pr_curve(const std::vector<Detection>& detections, const GroundTruth& gt,
                     double iou_threshold, const std::string& path);

}  // namespace scopenet
