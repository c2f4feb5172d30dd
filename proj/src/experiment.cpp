#include "scopenet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <atomic>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "scopenet/checkpoint.hpp"
#include "scopenet/losses.hpp"
#include "scopenet/rng.hpp"

namespace scopenet {

namespace fs = std::filesystem;

namespace {

std::vector<TargetSet> precompute_targets(const ExperimentConfig& cfg, const Model& model,
                                          const Dataset& data) {
  auto specs = model.level_specs();
  const auto& anchors = model.base_anchors();
  std::vector<TargetSet> out;
  out.reserve(data.scenes.size());
  for (const Scene& s : data.scenes) {
    out.push_back(assign_targets(s.objects, specs, anchors, cfg.data.image_size,
                                 cfg.data.image_size, cfg.model.num_classes, cfg.radius_metric));
  }
  return out;
}

double lr_at(const OptimizerConfig& opt, int step) {
  if (step < opt.warmup_steps) {
    double frac = static_cast<double>(step + 1) / opt.warmup_steps;
    return opt.lr * (0.1 + 0.9 * frac);
  }
  int d1 = (2 * opt.steps) / 3, d2 = (8 * opt.steps) / 9;
  if (step >= d2) return opt.lr * 0.01;
  if (step >= d1) return opt.lr * 0.1;
  return opt.lr;
}

}  // namespace

TrainStats train_model(const ExperimentConfig& cfg, const Model& model, ParamStore& store,
                       const Dataset& train_data, std::ostream* log) {
  if (train_data.scenes.empty()) throw std::invalid_argument("train: empty dataset");
  auto targets = precompute_targets(cfg, model, train_data);

  Rng shuffle_rng(Rng::mix(cfg.seed, 0x73687566ULL));
  std::vector<int> order(train_data.scenes.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // trigger shuffle on first use

  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i) {
        size_t j = shuffle_rng.next_u64() % i;
        std::swap(order[i - 1], order[j]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainStats stats;
  stats.steps = cfg.optimizer.steps;
  for (int step = 0; step < cfg.optimizer.steps; ++step) {
    Graph g;
    std::vector<std::vector<LevelOutput>> outputs;
    std::vector<LossImage> batch;
    std::vector<int> chosen;
    for (int b = 0; b < cfg.optimizer.batch_size; ++b) chosen.push_back(next_index());
    outputs.reserve(chosen.size());
    for (int idx : chosen) {
      outputs.push_back(model.forward(g, store, train_data.scenes[idx].image));
    }
    for (size_t b = 0; b < chosen.size(); ++b) {
      batch.push_back({&outputs[b], &targets[chosen[b]]});
    }

    LossVars loss = build_losses(g, batch, cfg.loss);
    store.zero_grads();
    g.backward(loss.total);
    g.accumulate_param_grads(store);
    store.sgd_step(lr_at(cfg.optimizer, step), cfg.optimizer.momentum,
                   cfg.optimizer.weight_decay);

    const LossBreakdown& v = loss.values;
    if (step == 0) stats.initial_loss = v.total;
    stats.final_loss = v.total;
    if (log) {
      (*log) << "step=" << step + 1 << " lr=" << lr_at(cfg.optimizer, step)
             << " L_cls=" << v.cls << " L_bin=" << v.bin << " L_loc=" << v.loc
             << " L_total=" << v.total << " cls_pos=" << v.cls_positives
             << " loc_pos=" << v.loc_positives << " iou_clamped=" << v.iou_clamped << "\n";
    }
    if (!std::isfinite(v.total) || (step > 0 && v.total > 10.0 * std::max(stats.initial_loss, 1e-9))) {
      throw std::runtime_error("training diverged at step " + std::to_string(step + 1) +
                               ": loss " + std::to_string(v.total) + " vs initial " +
                               std::to_string(stats.initial_loss));
    }
  }
  return stats;
}

std::vector<Detection> infer_dataset(const ExperimentConfig& cfg, const Model& model,
                                     ParamStore& store, const Dataset& data,
                                     const DetectConfig& detect_cfg) {
  auto anchors = model.anchors_from_store(store);
  std::vector<Detection> all;
  int dropped = 0;
  for (const Scene& s : data.scenes) {
    Graph g;
    auto outputs = model.forward(g, store, s.image);
    std::vector<LevelValue> values;
    for (const auto& lo : outputs) {
      values.push_back({lo.level, lo.fh, lo.fw, &lo.cls_logits.value(), &lo.loc_out.value()});
    }
    auto dets = detect_image(values, anchors, detect_cfg, s.id, &dropped);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  if (dropped > 0) {
    std::fprintf(stderr, "[detect] dropped %d degenerate boxes\n", dropped);
  }
  return all;
}

EvalResult evaluate_detections(const std::vector<Detection>& dets, const Dataset& data) {
  GroundTruth gt;
  for (const Scene& s : data.scenes) gt.push_back({s.id, s.objects});
  return evaluate(dets, gt);
}

nlohmann::json metrics_to_json(const EvalResult& r, int num_detections) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, ap] : r.per_class_ap) per_class[std::to_string(cls)] = ap;
  return {{"AP", r.ap},
          {"AP50", r.ap50},
          {"AP75", r.ap75},
          {"APS", r.ap_small},
          {"APM", r.ap_medium},
          {"APL", r.ap_large},
          {"AR10", r.ar10},
          {"AR100", r.ar100},
          {"per_class_AP", std::move(per_class)},
          {"num_detections", num_detections}};
}

void write_detections_jsonl(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (const Detection& d : dets) {
    nlohmann::json j = {{"image_id", d.image_id},
                        {"class", d.class_id},
                        {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                        {"p_cls", d.p_cls},
                        {"p_loc", d.p_loc},
                        {"p_box", d.p_box}};
    f << j.dump() << "\n";
  }
}

std::string run_dir_for(const ExperimentConfig& cfg, const std::string& out_root) {
  return (fs::path(out_root) / ("run_" + config_hash(cfg))).string();
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_root,
                            bool use_cache, bool quiet) {
  cfg.validate();
  RunArtifacts art;
  art.run_dir = run_dir_for(cfg, out_root);
  fs::create_directories(art.run_dir);
  fs::path metrics_path = fs::path(art.run_dir) / "metrics.json";

  if (use_cache && fs::exists(metrics_path)) {
    std::ifstream f(metrics_path);
    nlohmann::json j = nlohmann::json::parse(f);
    art.metrics.ap = j.at("AP");
    art.metrics.ap50 = j.at("AP50");
    art.metrics.ap75 = j.at("AP75");
    art.metrics.ap_small = j.at("APS");
    art.metrics.ap_medium = j.at("APM");
    art.metrics.ap_large = j.at("APL");
    art.metrics.ar10 = j.at("AR10");
    art.metrics.ar100 = j.at("AR100");
    art.from_cache = true;
    return art;
  }

  {
    std::ofstream f(fs::path(art.run_dir) / "resolved_config.json", std::ios::trunc);
    f << cfg.to_json().dump(2) << "\n";
  }

  Model model(cfg.model);
  ParamStore store;
  model.init_params(store, cfg.seed);

  Dataset train_data = generate_dataset(cfg.num_train, cfg.data, cfg.data_seed_train());
  {
    std::ofstream log(fs::path(art.run_dir) / "train_log.txt", std::ios::trunc);
    TrainStats stats = train_model(cfg, model, store, train_data, &log);
    if (!quiet) {
      std::fprintf(stderr, "[train] %s: loss %.4f -> %.4f over %d steps\n",
                   art.run_dir.c_str(), stats.initial_loss, stats.final_loss, stats.steps);
    }
  }
  save_checkpoint(store, (fs::path(art.run_dir) / "checkpoint.bin").string(),
                  cfg.to_json().dump());

  Dataset test_data = generate_dataset(cfg.num_test, cfg.data, cfg.data_seed_test());
  auto dets = infer_dataset(cfg, model, store, test_data, cfg.detect);
  art.metrics = evaluate_detections(dets, test_data);

  write_detections_jsonl(dets, (fs::path(art.run_dir) / "detections.jsonl").string());
  {
    GroundTruth gt;
    for (const Scene& s : test_data.scenes) gt.push_back({s.id, s.objects});
    export_pr_curve(dets, gt, 0.5, (fs::path(art.run_dir) / "pr_iou50.csv").string());
  }
  {
    std::ofstream f(metrics_path, std::ios::trunc);
    f << metrics_to_json(art.metrics, static_cast<int>(dets.size())).dump(2) << "\n";
  }
  return art;
}

// ---- sweep ------------------------------------------------------------------

std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const std::string& out_root,
                                 const std::vector<double>& sizes, const std::vector<int>& nums,
                                 int threads) {
  std::vector<SweepCell> cells;
  {
    SweepCell baseline;
    baseline.size = 0.0;
    baseline.num = 1;
    cells.push_back(baseline);
  }
  for (double s : sizes) {
    for (int n : nums) {
      SweepCell c;
      c.size = s;
      c.num = n;
      cells.push_back(c);
    }
  }

  auto run_cell = [&](SweepCell& cell) {
    try {
      ExperimentConfig cfg = base;
      cfg.model.num_bins = cell.num;
      if (cell.num > 1) cfg.model.bin_size = cell.size;
      cfg.resolve();
      cell.metrics = run_experiment(cfg, out_root, /*use_cache=*/true, /*quiet=*/true).metrics;
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
      std::fprintf(stderr, "[sweep] cell size=%.2f num=%d failed: %s\n", cell.size, cell.num,
                   e.what());
    }
  };

  if (threads <= 1) {
    for (auto& c : cells) run_cell(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        while (true) {
          size_t i = next.fetch_add(1);
          if (i >= cells.size()) break;
          run_cell(cells[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "size,num,AP,AP50,AP75,APS,APM,APL\n";
  char line[256];
  for (const auto& c : cells) {
    if (c.failed) {
      f << (c.num == 1 ? std::string("-") : std::to_string(c.size)) << "," << c.num
        << ",failed,,,,,\n";
      continue;
    }
    std::string size_col = c.num == 1 ? "-" : [&] {
      char b[32];
      std::snprintf(b, sizeof(b), "%g", c.size);
      return std::string(b);
    }();
    std::snprintf(line, sizeof(line), "%s,%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", size_col.c_str(),
                  c.num, c.metrics.ap, c.metrics.ap50, c.metrics.ap75, c.metrics.ap_small,
                  c.metrics.ap_medium, c.metrics.ap_large);
    f << line;
  }
}

// ---- gradcheck ---------------------------------------------------------------

ExperimentConfig tiny_gradcheck_config() {
  ExperimentConfig cfg;
  cfg.seed = 7;
  cfg.model.channels = 6;
  cfg.model.trunk_depth = 1;
  cfg.model.num_classes = 2;
  cfg.model.num_bins = 3;
  cfg.model.bin_size = 1.0;
  cfg.model.levels = {{3, 0.0, std::numeric_limits<double>::infinity(), 24.0}};
  cfg.data.image_size = 24;
  cfg.data.min_objects = 1;
  cfg.data.max_objects = 2;
  cfg.data.min_size = 8;
  cfg.data.max_size = 20;
  cfg.data.max_aspect = 2.0;
  cfg.data.noise = 0.05;
  cfg.num_train = 1;
  cfg.num_test = 1;
  cfg.resolve();
  return cfg;
}

GradCheckSummary run_loss_gradcheck(const ExperimentConfig& cfg, double step,
                                    const std::string& corrupt_param) {
  Model model(cfg.model);

  // A scene with at least one localization positive; walk the stream until
  // one shows up (the first almost always does).
  Dataset data;
  TargetSet targets;
  for (uint64_t probe = 0;; ++probe) {
    data = generate_dataset(1, cfg.data, Rng::mix(cfg.seed, 0x67636865636bULL + probe), 0);
    targets = assign_targets(data.scenes[0].objects, model.level_specs(), model.base_anchors(),
                             cfg.data.image_size, cfg.data.image_size, cfg.model.num_classes,
                             cfg.radius_metric);
    if (targets.num_loc_positive() > 0) break;
    if (probe > 32) throw std::runtime_error("gradcheck: no positives found");
  }

  ParamStore params;
  model.init_params(params, cfg.seed);

  enum Component { kCls, kBin, kLoc, kTotal };
  const char* names[] = {"L_cls", "L_bin", "L_loc", "L_total"};

  GradCheckSummary summary;
  for (int comp = kCls; comp <= kTotal; ++comp) {
    auto build = [&](Graph& g) {
      auto outputs = model.forward(g, params, data.scenes[0].image);
      std::vector<LossImage> batch{{&outputs, &targets}};
      LossVars loss = build_losses(g, batch, cfg.loss);
      switch (comp) {
        case kCls: return loss.cls;
        case kBin: return loss.bin;
        case kLoc: return loss.loc;
        default: return loss.total;
      }
    };
    GradCheckReport report = gradcheck(build, params, step, 1e-3, corrupt_param);
    for (const auto& f : report.failures) summary.failures.push_back(std::string(names[comp]) + ": " + f);

    std::map<std::string, double> group_worst;
    for (const auto& e : report.entries) {
      std::string group = e.param.substr(0, e.param.find('.'));
      group_worst[group] = std::max(group_worst[group], e.max_rel_err);
    }
    for (const auto& [group, err] : group_worst) {
      summary.rows.push_back({names[comp], group, err});
      summary.worst = std::max(summary.worst, err);
    }
  }
  return summary;
}

}  // namespace scopenet
