#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "scopenet/config.hpp"
#include "scopenet/eval.hpp"

namespace scopenet {

struct TrainStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

/// Per-scene targets are precomputed once (bin edges are fixed), then SGD
/// with momentum and two 10x learning-rate drops at 2/3 and 8/9 of the step
/// budget. Writes one plain-text record per step to `log` when given.
/// Aborts with an error if the loss exceeds 10x its initial value.
TrainStats train_model(const ExperimentConfig& cfg, const Model& model, ParamStore& store,
                       const Dataset& train_data, std::ostream* log);

std::vector<Detection> infer_dataset(const ExperimentConfig& cfg, const Model& model,
                                     ParamStore& store, const Dataset& data,
                                     const DetectConfig& detect_cfg);

EvalResult evaluate_detections(const std::vector<Detection>& dets, const Dataset& data);

nlohmann::json metrics_to_json(const EvalResult& r, int num_detections);
void write_detections_jsonl(const std::vector<Detection>& dets, const std::string& path);

// ---- run directories ---------------------------------------------------------

struct RunArtifacts {
  std::string run_dir;
  EvalResult metrics;
  bool from_cache = false;
};

std::string run_dir_for(const ExperimentConfig& cfg, const std::string& out_root);

/// Train + evaluate under out_root/run_<hash>/, writing resolved_config.json,
/// checkpoint.bin, train_log.txt, detections.jsonl, metrics.json and
/// pr_iou50.csv. With use_cache, an existing metrics.json short-circuits the
/// whole run.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_root,
                            bool use_cache = true, bool quiet = false);

// ---- sweep ----------------------------------------------------------------------

struct SweepCell {
  double size = 0.0;  // log2 bin ratio; 0 marks the single-bin baseline row
  int num = 1;
  EvalResult metrics;
  bool failed = false;
  std::string error;
};

/// One train+eval per (size, num) cell plus a single num=1 baseline row.
/// Failed cells are recorded and the sweep continues. threads > 1 runs cells
/// as independent workers.
std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const std::string& out_root,
                                 const std::vector<double>& sizes, const std::vector<int>& nums,
                                 int threads = 1);

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path);

// ---- gradient verification -----------------------------------------------------------

struct GradCheckSummary {
  struct Row {
    std::string loss_name;
    std::string group;  // parameter-name prefix: backbone, trunk_*, head_*, anchors
    double max_rel_err = 0.0;
  };
  std::vector<Row> rows;
  double worst = 0.0;
  std::vector<std::string> failures;
  bool ok(double rel_tol) const { return failures.empty() && worst < rel_tol; }
};

ExperimentConfig tiny_gradcheck_config();

/// Finite-difference check of every loss component and the total on a small
/// random scene with guaranteed positives. `corrupt_param` feeds the
/// negative-control hook through to the checker.
GradCheckSummary run_loss_gradcheck(const ExperimentConfig& cfg, double step = 1e-5,
                                    const std::string& corrupt_param = "");

}  // namespace scopenet
