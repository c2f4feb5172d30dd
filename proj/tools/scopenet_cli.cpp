// Command-line harness: dataset generation, training, evaluation, inference,
// the anchor-parameter sweep, and gradient verification, all driven by one
// JSON experiment config. Every run lands in an output directory named by the
// hash of its resolved config so identical configs share artifacts.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "scopenet/checkpoint.hpp"
#include "scopenet/experiment.hpp"

namespace fs = std::filesystem;
using namespace scopenet;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
  double nms_threshold = 0.0;
  bool nms_set = false;
  std::string scoring_mode;
  bool no_uncertainty = false;
  std::string levels;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config JSON");
  cmd->add_option("--out", o.out, "output root (default $SCOPENET_OUT or ./runs)");
  cmd->add_option("--seed", o.seed, "override config seed")->each([&](const std::string&) {
    o.seed_set = true;
  });
  cmd->add_option("--nms-threshold", o.nms_threshold, "override NMS IoU threshold")
      ->each([&](const std::string&) { o.nms_set = true; });
  cmd->add_option("--scoring-mode", o.scoring_mode, "fused | cls_only")
      ->check(CLI::IsMember({"fused", "cls_only"}));
  cmd->add_flag("--no-uncertainty", o.no_uncertainty, "pin the bin-softmax temperature at 1");
  cmd->add_option("--levels", o.levels, "comma-separated level ids to keep, e.g. 3,4");
  cmd->add_option("--threads", o.threads, "worker threads for sweep cells")
      ->check(CLI::PositiveNumber);
}

std::string out_root(const CommonOpts& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("SCOPENET_OUT")) return env;
  return "runs";
}

ExperimentConfig load_config(const CommonOpts& o) {
  ExperimentConfig cfg =
      o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load_file(o.config_path);
  if (o.seed_set) cfg.seed = o.seed;
  if (o.no_uncertainty) cfg.model.uncertainty = false;
  if (!o.scoring_mode.empty()) {
    cfg.detect.scoring = o.scoring_mode == "fused" ? ScoringMode::kFused : ScoringMode::kClsOnly;
  }
  if (o.nms_set) cfg.detect.nms_threshold = o.nms_threshold;
  if (!o.levels.empty()) {
    std::vector<LevelConfig> keep;
    std::stringstream ss(o.levels);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      int id = std::stoi(tok);
      for (const auto& lc : cfg.model.levels) {
        if (lc.level == id) keep.push_back(lc);
      }
    }
    if (keep.empty()) throw ConfigError({"--levels: no configured level matches " + o.levels});
    cfg.model.levels = keep;
  }
  cfg.resolve();
  cfg.validate();
  return cfg;
}

int cmd_gen_data(const CommonOpts& o, const std::string& split) {
  ExperimentConfig cfg = load_config(o);
  fs::path root = out_root(o);
  if (split == "train" || split == "both") {
    Dataset d = generate_dataset(cfg.num_train, cfg.data, cfg.data_seed_train());
    write_dataset(d, (root / "train").string());
    std::cout << "wrote " << d.scenes.size() << " train scenes to " << (root / "train").string()
              << "\n";
  }
  if (split == "test" || split == "both") {
    Dataset d = generate_dataset(cfg.num_test, cfg.data, cfg.data_seed_test());
    write_dataset(d, (root / "test").string());
    std::cout << "wrote " << d.scenes.size() << " test scenes to " << (root / "test").string()
              << "\n";
  }
  return 0;
}

int cmd_train(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  RunArtifacts art = run_experiment(cfg, out_root(o), /*use_cache=*/false);
  std::cout << "run_dir: " << art.run_dir << "\n";
  std::ifstream f(fs::path(art.run_dir) / "metrics.json");
  std::cout << f.rdbuf();
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& data_dir,
             const std::string& metrics_out) {
  std::string extra;
  ParamStore store = load_checkpoint(checkpoint, &extra);
  ExperimentConfig cfg = o.config_path.empty()
                             ? ExperimentConfig::from_json(nlohmann::json::parse(extra))
                             : load_config(o);
  if (o.config_path.empty()) {
    // CLI overrides still apply when the config came from the checkpoint.
    CommonOpts tweak = o;
    if (tweak.no_uncertainty) cfg.model.uncertainty = false;
    if (!tweak.scoring_mode.empty()) {
      cfg.detect.scoring =
          tweak.scoring_mode == "fused" ? ScoringMode::kFused : ScoringMode::kClsOnly;
    }
    if (tweak.nms_set) cfg.detect.nms_threshold = tweak.nms_threshold;
    cfg.resolve();
  }

  Model model(cfg.model);
  Dataset data = data_dir.empty()
                     ? generate_dataset(cfg.num_test, cfg.data, cfg.data_seed_test())
                     : load_dataset(data_dir);
  auto dets = infer_dataset(cfg, model, store, data, cfg.detect);
  EvalResult r = evaluate_detections(dets, data);
  nlohmann::json j = metrics_to_json(r, static_cast<int>(dets.size()));
  std::cout << j.dump(2) << "\n";
  if (!metrics_out.empty()) {
    std::ofstream f(metrics_out, std::ios::trunc);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_infer(const CommonOpts& o, const std::string& checkpoint, const std::string& data_dir,
              const std::string& dets_out) {
  std::string extra;
  ParamStore store = load_checkpoint(checkpoint, &extra);
  ExperimentConfig cfg = o.config_path.empty()
                             ? ExperimentConfig::from_json(nlohmann::json::parse(extra))
                             : load_config(o);
  if (o.no_uncertainty) cfg.model.uncertainty = false;
  if (!o.scoring_mode.empty()) {
    cfg.detect.scoring = o.scoring_mode == "fused" ? ScoringMode::kFused : ScoringMode::kClsOnly;
  }
  if (o.nms_set) cfg.detect.nms_threshold = o.nms_threshold;
  cfg.resolve();

  Model model(cfg.model);
  Dataset data = data_dir.empty()
                     ? generate_dataset(cfg.num_test, cfg.data, cfg.data_seed_test())
                     : load_dataset(data_dir);
  auto dets = infer_dataset(cfg, model, store, data, cfg.detect);
  write_detections_jsonl(dets, dets_out);
  std::cout << "wrote " << dets.size() << " detections to " << dets_out << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& o, std::vector<double> sizes, std::vector<int> nums) {
  ExperimentConfig cfg = load_config(o);
  if (sizes.empty()) sizes = {0.75, 1.0, 1.25};
  if (nums.empty()) nums = {3, 5, 7};
  auto cells = run_sweep(cfg, out_root(o), sizes, nums, o.threads);
  std::string csv = (fs::path(out_root(o)) / "sweep.csv").string();
  write_sweep_csv(cells, csv);
  std::ifstream f(csv);
  std::cout << f.rdbuf();
  std::cout << "wrote " << csv << "\n";
  bool any_failed = false;
  for (const auto& c : cells) any_failed |= c.failed;
  return any_failed ? 1 : 0;
}

int cmd_gradcheck(const CommonOpts& o, const std::string& corrupt) {
  ExperimentConfig cfg = o.config_path.empty() ? tiny_gradcheck_config() : load_config(o);
  GradCheckSummary s = run_loss_gradcheck(cfg, 1e-5, corrupt);
  std::printf("%-8s %-10s %s\n", "loss", "group", "max_rel_err");
  for (const auto& r : s.rows) {
    std::printf("%-8s %-10s %.3e\n", r.loss_name.c_str(), r.group.c_str(), r.max_rel_err);
  }
  for (const auto& f : s.failures) std::printf("FAILURE %s\n", f.c_str());
  std::printf("worst: %.3e (tolerance 1e-3)\n", s.worst);
  if (!s.ok(1e-3)) {
    std::printf("gradcheck FAILED\n");
    return 1;
  }
  std::printf("gradcheck passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scopenet: coarse-to-fine localization head on synthetic scenes"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, infer_o, sweep_o, gc_o;
  std::string split = "both";
  std::string eval_ckpt, eval_data, eval_out;
  std::string infer_ckpt, infer_data, infer_out = "detections.jsonl";
  std::vector<double> sizes;
  std::vector<int> nums;
  std::string corrupt;

  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic dataset(s) to disk");
  add_common(gen, gen_o);
  gen->add_option("--split", split, "train | test | both")
      ->check(CLI::IsMember({"train", "test", "both"}));

  CLI::App* train = app.add_subcommand("train", "train and evaluate one config");
  add_common(train, train_o);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory (default: generated test split)");
  eval->add_option("--metrics-out", eval_out, "also write metrics JSON here");

  CLI::App* infer = app.add_subcommand("infer", "run inference, write detections JSONL");
  add_common(infer, infer_o);
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--data", infer_data, "dataset directory (default: generated test split)");
  infer->add_option("--detections-out", infer_out, "output JSONL path");

  CLI::App* sweep = app.add_subcommand("sweep", "bin size x bin count grid, one run per cell");
  add_common(sweep, sweep_o);
  sweep->add_option("--sizes", sizes, "bin sizes (log2 ratios)");
  sweep->add_option("--nums", nums, "bin counts");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of all loss terms");
  add_common(gc, gc_o);
  gc->add_option("--corrupt", corrupt, "negative control: corrupt this parameter's gradient");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o, split);
    if (train->parsed()) return cmd_train(train_o);
    if (eval->parsed()) return cmd_eval(eval_o, eval_ckpt, eval_data, eval_out);
    if (infer->parsed()) return cmd_infer(infer_o, infer_ckpt, infer_data, infer_out);
    if (sweep->parsed()) return cmd_sweep(sweep_o, sizes, nums);
    if (gc->parsed()) return cmd_gradcheck(gc_o, corrupt);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
