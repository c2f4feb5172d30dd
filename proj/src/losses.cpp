#include "scopenet/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace scopenet {

double total_loss(double cls, double bin, double loc, bool has_positives, double lambda_bin,
                  double lambda_loc) {
  return has_positives ? cls + lambda_bin * bin + lambda_loc * loc : cls;
}

namespace {

// x^gamma with gradient support; gamma 2 is exact squaring, other exponents
// go through exp(gamma*ln(x)) with the base floored away from zero.
Var pow_gamma(Graph& g, Var x, double gamma) {
  if (gamma == 2.0) return g.mul(x, x);
  if (gamma == 1.0) return x;
  return g.exp(g.scale(g.ln(g.clamp_min(x, 1e-30)), gamma));
}

Var focal_term(Graph& g, const LevelOutput& out, const LevelTargets& lt, const LossConfig& cfg) {
  const int c = out.cls_logits.value().shape()[0];
  const int n = lt.size();

  Tensor pos_mask({c, lt.fh, lt.fw});
  Tensor neg_mask = Tensor::full({c, lt.fh, lt.fw}, 1.0);
  for (int loc = 0; loc < n; ++loc) {
    int cls = lt.cls_target[loc];
    if (cls > 0) {
      pos_mask[(cls - 1) * n + loc] = 1.0;
      neg_mask[(cls - 1) * n + loc] = 0.0;
    }
  }

  Var z = out.cls_logits;
  Var p = g.sigmoid(z);
  Var one_minus_p = g.shift(g.neg(p), 1.0);
  // -ln(p) and -ln(1-p) in softplus form; exact and stable at extreme logits.
  Var pos = g.mul(pow_gamma(g, one_minus_p, cfg.focal_gamma), g.softplus(g.neg(z)));
  Var neg = g.mul(pow_gamma(g, p, cfg.focal_gamma), g.softplus(z));
  Var weighted = g.add(g.scale(g.mul(g.constant(std::move(pos_mask)), pos), cfg.focal_alpha),
                       g.scale(g.mul(g.constant(std::move(neg_mask)), neg), 1.0 - cfg.focal_alpha));
  return g.sum(weighted);
}

}  // namespace

LossVars build_losses(Graph& g, const std::vector<LossImage>& batch, const LossConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("build_losses: empty batch");

  LossVars result;
  Var cls_sum, bin_sum, loc_sum;
  int cls_pos = 0, loc_pos = 0, iou_clamped = 0;

  auto acc = [&g](Var& slot, Var v) { slot = slot.valid() ? g.add(slot, v) : v; };

  for (const LossImage& img : batch) {
    const auto& outputs = *img.outputs;
    const auto& targets = *img.targets;
    if (outputs.size() != targets.levels.size()) {
      throw std::invalid_argument("build_losses: outputs/targets level mismatch");
    }

    for (size_t li = 0; li < outputs.size(); ++li) {
      const LevelOutput& out = outputs[li];
      const LevelTargets& lt = targets.levels[li];
      if (out.fh != lt.fh || out.fw != lt.fw) {
        throw std::invalid_argument("build_losses: feature map size mismatch");
      }
      if (lt.size() == 0) throw std::invalid_argument("build_losses: empty feature map");
      const int num_bins = out.anchor_scales[0].value().size();
      const int n = lt.size();

      cls_pos += lt.num_cls_positive();
      acc(cls_sum, focal_term(g, out, lt, cfg));

      std::vector<int> pos_locs;
      for (int loc = 0; loc < n; ++loc) {
        if (lt.loc_positive[loc]) pos_locs.push_back(loc);
      }
      if (pos_locs.empty()) continue;
      const int p = static_cast<int>(pos_locs.size());
      loc_pos += p;

      // Border decode per direction through the ground-truth-assigned bin,
      // then one IoU in the shared-point distance parameterization.
      std::array<Var, 4> decoded;
      std::array<Var, 4> tgt;
      for (int x = 0; x < 4; ++x) {
        std::vector<int> score_idx(p * num_bins);
        std::vector<int> temp_idx(p);
        std::vector<int> pick_idx(p);
        std::vector<int> reg_idx(p);
        std::vector<int> bin_idx(p);
        Tensor tvec({p});
        for (int i = 0; i < p; ++i) {
          int loc = pos_locs[i];
          int bin0 = lt.bin_target[loc][x] - 1;
          for (int b = 0; b < num_bins; ++b) {
            score_idx[i * num_bins + b] = (x * (num_bins + 1) + b) * n + loc;
          }
          temp_idx[i] = (x * (num_bins + 1) + num_bins) * n + loc;
          pick_idx[i] = i * num_bins + bin0;
          reg_idx[i] = (4 * (num_bins + 1) + x * num_bins + bin0) * n + loc;
          bin_idx[i] = bin0;
          tvec[i] = lt.border_target[loc].d[x];
        }

        Var scores = g.reshape(g.gather(out.loc_out, std::move(score_idx)), {p, num_bins});
        if (cfg.uncertainty) {
          Var inv_sigma2 = g.exp(g.neg(g.gather(out.loc_out, std::move(temp_idx))));
          scores = g.rowwise_mul(scores, inv_sigma2);
        }
        Var logp = g.log_softmax_last_axis(scores);
        acc(bin_sum, g.neg(g.sum(g.gather(logp, std::move(pick_idx)))));

        Var a_sel = g.gather(out.anchor_scales[x], std::move(bin_idx));
        Var t_sel = g.gather(out.loc_out, std::move(reg_idx));
        decoded[x] = g.mul(g.pow2(a_sel), g.exp(t_sel));
        tgt[x] = g.constant(std::move(tvec));
      }

      Var iw = g.add(g.minimum(decoded[kLeft], tgt[kLeft]), g.minimum(decoded[kRight], tgt[kRight]));
      Var ih = g.add(g.minimum(decoded[kTop], tgt[kTop]), g.minimum(decoded[kBottom], tgt[kBottom]));
      Var inter = g.mul(iw, ih);
      Var area_p = g.mul(g.add(decoded[kLeft], decoded[kRight]),
                         g.add(decoded[kTop], decoded[kBottom]));
      Var area_t = g.mul(g.add(tgt[kLeft], tgt[kRight]), g.add(tgt[kTop], tgt[kBottom]));
      Var uni = g.sub(g.add(area_p, area_t), inter);
      Var iou_v = g.clamp_min(g.div(inter, uni), 1e-6);
      iou_clamped += g.clamp_count(iou_v);
      Var per_pos = cfg.iou_mode == IouLossMode::kNegLog ? g.neg(g.ln(iou_v))
                                                         : g.shift(g.neg(iou_v), 1.0);
      acc(loc_sum, g.sum(per_pos));
    }
  }

  result.cls = g.scale(cls_sum, 1.0 / std::max(1, cls_pos));
  result.values.cls = result.cls.item();
  result.values.cls_positives = cls_pos;
  result.values.loc_positives = loc_pos;
  result.values.iou_clamped = iou_clamped;

  if (loc_pos > 0) {
    result.bin = g.scale(bin_sum, 1.0 / (4.0 * loc_pos));
    result.loc = g.scale(loc_sum, 1.0 / loc_pos);
    result.total = g.add(result.cls, g.add(g.scale(result.bin, cfg.lambda_bin),
                                           g.scale(result.loc, cfg.lambda_loc)));
    result.values.bin = result.bin.item();
    result.values.loc = result.loc.item();
  } else {
    result.total = result.cls;
  }
  result.values.total = result.total.item();
  return result;
}

}  // namespace scopenet
