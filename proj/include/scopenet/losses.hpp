#pragma once

#include <vector>

#include "scopenet/autograd.hpp"
#include "scopenet/model.hpp"

namespace scopenet {

enum class IouLossMode { kNegLog, kOneMinus };

struct LossConfig {
  double lambda_bin = 0.5;
  double lambda_loc = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  IouLossMode iou_mode = IouLossMode::kNegLog;
  bool uncertainty = true;  // temperature path of the bin softmax
};

/// Scalar component values of one loss evaluation plus the normalizer counts.
struct LossBreakdown {
  double cls = 0.0, bin = 0.0, loc = 0.0, total = 0.0;
  int cls_positives = 0;
  int loc_positives = 0;
  int iou_clamped = 0;  // IoU values clamped at 1e-6 before the log
};

/// Graph nodes of the loss stack; bin/loc are invalid when the batch has no
/// localization positives (the indicator drops those terms entirely).
struct LossVars {
  Var total, cls, bin, loc;
  LossBreakdown values;
};

struct LossImage {
  const std::vector<LevelOutput>* outputs = nullptr;
  const TargetSet* targets = nullptr;
};

/// Total = L_cls + lambda_bin * L_bin + lambda_loc * L_loc over a batch.
/// L_cls is sigmoid focal loss over every location and class, normalized by
/// the classification-positive count (min 1). L_bin is the temperature
/// softmax cross entropy of the assigned bins, averaged over the four
/// directions and the localization positives. L_loc is the IoU loss between
/// borders decoded through the assigned bins and the target borders,
/// averaged over localization positives.
LossVars build_losses(Graph& g, const std::vector<LossImage>& batch, const LossConfig& cfg);

/// Eq-style combination used for reporting: the bin/loc terms participate
/// only when positives exist.
double total_loss(double cls, double bin, double loc, bool has_positives,
                  double lambda_bin = 0.5, double lambda_loc = 1.0);

}  // namespace scopenet
