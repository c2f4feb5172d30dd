#include "scopenet/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "scopenet/rng.hpp"

namespace scopenet {

ModelConfig ModelConfig::desk_default() {
  ModelConfig cfg;
  cfg.levels = {
      {3, 0.0, 32.0, 32.0},
      {4, 32.0, std::numeric_limits<double>::infinity(), 64.0},
  };
  return cfg;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.levels.empty()) throw std::invalid_argument("model: no levels configured");
  if (cfg_.num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");
  int prev = 0;
  for (auto& lc : cfg_.levels) {
    if (lc.level < 1 || lc.level <= prev) {
      throw std::invalid_argument("model: levels must be ascending and >= 1");
    }
    prev = lc.level;
  }
  for (const auto& lc : cfg_.levels) {
    double bin_hi = lc.bin_hi > 0 ? lc.bin_hi : lc.range_hi;
    if (!std::isfinite(bin_hi) || bin_hi <= 0) {
      throw std::invalid_argument("model: level " + std::to_string(lc.level) +
                                  " needs a finite bin_hi");
    }
    // Bins span [0, bin_hi): the range test constrains only the largest of the
    // four distances, so the other three can be arbitrarily small at any level.
    std::array<ScopeAnchorSet, 4> per_dir;
    ScopeAnchorSet base = init_anchor_set(lc.level, 0.0, bin_hi, cfg_.num_bins, cfg_.bin_size);
    per_dir.fill(base);
    anchors_.push_back(std::move(per_dir));
  }
}

std::vector<FpnLevelSpec> Model::level_specs() const {
  std::vector<FpnLevelSpec> out;
  for (const auto& lc : cfg_.levels) {
    FpnLevelSpec s;
    s.level = lc.level;
    s.range_lo = lc.range_lo;
    s.range_hi = lc.range_hi;
    s.bin_hi = lc.bin_hi > 0 ? lc.bin_hi : lc.range_hi;
    out.push_back(s);
  }
  return out;
}

std::string Model::anchor_param_name(int level, int direction) const {
  std::string base = "anchors.l" + std::to_string(level);
  return cfg_.share_directions ? base : base + "." + direction_name(direction);
}

namespace {

Tensor he_conv(Rng& rng, int cout, int cin, int k) {
  Tensor w({cout, cin, k, k});
  double std = std::sqrt(2.0 / (cin * k * k));
  for (int i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  return w;
}

}  // namespace

void Model::init_params(ParamStore& store, uint64_t seed) const {
  Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
  const int ch = cfg_.channels;
  const int max_level = cfg_.levels.back().level;

  for (int k = 1; k <= max_level; ++k) {
    int cin = k == 1 ? cfg_.in_channels : ch;
    store.add("backbone.c" + std::to_string(k) + ".w", he_conv(rng, ch, cin, 3));
    store.add("backbone.c" + std::to_string(k) + ".b", Tensor({ch}));
  }
  for (const char* branch : {"trunk_cls", "trunk_loc"}) {
    for (int k = 1; k <= cfg_.trunk_depth; ++k) {
      store.add(std::string(branch) + ".c" + std::to_string(k) + ".w", he_conv(rng, ch, ch, 3));
      store.add(std::string(branch) + ".c" + std::to_string(k) + ".b", Tensor({ch}));
    }
  }

  store.add("head_cls.w", he_conv(rng, cfg_.num_classes, ch, 3));
  // Bias so every class starts near p = 0.01, the focal-loss prior.
  store.add("head_cls.b", Tensor::full({cfg_.num_classes}, -std::log(99.0)));

  store.add("head_loc.w", he_conv(rng, loc_channels(), ch, 3));
  // Temperature channels start at sigma^2 = temperature_init; everything else 0.
  Tensor loc_bias({loc_channels()});
  for (int x = 0; x < 4; ++x) {
    loc_bias[x * (cfg_.num_bins + 1) + cfg_.num_bins] = std::log(cfg_.temperature_init);
  }
  store.add("head_loc.b", std::move(loc_bias));

  for (size_t li = 0; li < cfg_.levels.size(); ++li) {
    int level = cfg_.levels[li].level;
    int dirs = cfg_.share_directions ? 1 : 4;
    for (int x = 0; x < dirs; ++x) {
      store.add(anchor_param_name(level, x),
                Tensor({cfg_.num_bins}, anchors_[li][x].log_scales));
    }
  }
}

std::vector<LevelOutput> Model::forward(Graph& g, ParamStore& store, const Tensor& image) const {
  if (image.ndim() != 3 || image.shape()[0] != cfg_.in_channels) {
    throw std::invalid_argument("forward: want image [Cin,H,W]");
  }
  const int max_level = cfg_.levels.back().level;

  auto conv_param = [&](const std::string& name) {
    return std::make_pair(g.param(store, name + ".w"), g.param(store, name + ".b"));
  };

  Var x = g.constant(image);
  std::vector<Var> feats(max_level + 1);
  for (int k = 1; k <= max_level; ++k) {
    auto [w, b] = conv_param("backbone.c" + std::to_string(k));
    x = g.relu(g.conv2d(x, w, b, 2, 1));
    feats[k] = x;
  }

  // Shared trunk/head weights are leafed once and reused across levels.
  std::vector<std::pair<Var, Var>> tc, tl;
  for (int k = 1; k <= cfg_.trunk_depth; ++k) {
    tc.push_back(conv_param("trunk_cls.c" + std::to_string(k)));
    tl.push_back(conv_param("trunk_loc.c" + std::to_string(k)));
  }
  auto [hcw, hcb] = conv_param("head_cls");
  auto [hlw, hlb] = conv_param("head_loc");

  std::vector<std::array<Var, 4>> anchor_vars;
  for (const auto& lc : cfg_.levels) {
    std::array<Var, 4> a{};
    if (cfg_.share_directions) {
      Var shared = g.param(store, anchor_param_name(lc.level, 0));
      a.fill(shared);
    } else {
      for (int x4 = 0; x4 < 4; ++x4) a[x4] = g.param(store, anchor_param_name(lc.level, x4));
    }
    anchor_vars.push_back(a);
  }

  std::vector<LevelOutput> out;
  for (size_t li = 0; li < cfg_.levels.size(); ++li) {
    const auto& lc = cfg_.levels[li];
    Var f_cls = feats[lc.level];
    Var f_loc = feats[lc.level];
    for (int k = 0; k < cfg_.trunk_depth; ++k) {
      f_cls = g.relu(g.conv2d(f_cls, tc[k].first, tc[k].second, 1, 1));
      f_loc = g.relu(g.conv2d(f_loc, tl[k].first, tl[k].second, 1, 1));
    }
    LevelOutput lo;
    lo.level = lc.level;
    lo.cls_logits = g.conv2d(f_cls, hcw, hcb, 1, 1);
    lo.loc_out = g.conv2d(f_loc, hlw, hlb, 1, 1);
    lo.fh = lo.cls_logits.value().shape()[1];
    lo.fw = lo.cls_logits.value().shape()[2];
    lo.anchor_scales = anchor_vars[li];
    out.push_back(lo);
  }
  return out;
}

std::vector<std::array<ScopeAnchorSet, 4>> Model::anchors_from_store(
    const ParamStore& store) const {
  auto out = anchors_;
  for (size_t li = 0; li < cfg_.levels.size(); ++li) {
    for (int x = 0; x < 4; ++x) {
      const Tensor& t = store.value(anchor_param_name(cfg_.levels[li].level, x));
      out[li][x].log_scales.assign(t.data(), t.data() + t.size());
    }
  }
  return out;
}

}  // namespace scopenet
