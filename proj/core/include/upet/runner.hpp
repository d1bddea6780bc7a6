#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upet/data.hpp"
#include "upet/selftrain.hpp"

namespace upet {

using Json = nlohmann::ordered_json;

/// All defaults materialized; every flag has a config-file equivalent.
Json default_config();

/// Reads a config file, merges it over the defaults. A manifest written by
/// run_experiment is accepted too (its resolved config is extracted), so a
/// manifest can be re-run as-is.
Json load_config(const std::string& path);

/// Applies "section.key=value" onto a config; value is parsed as JSON when
/// possible, kept as a string otherwise.
void apply_override(Json& cfg, const std::string& assignment);
void apply_override_value(Json& cfg, const std::string& dotted_key, const Json& value);

struct DataBundle {
  std::vector<Example> labeled;
  std::vector<Example> unlabeled;
  std::vector<Example> test;
  DatasetSpec spec;
};

/// Materializes the dataset named by the config for one seed: loads or
/// generates, then applies the few-shot split.
DataBundle build_dataset(const Json& cfg, std::uint64_t seed);

SelfTrainConfig selftrain_config_from_json(const Json& cfg, std::uint64_t seed);
PELConfig pel_config_from_json(const Json& cfg);
LossConfig loss_config_from_json(const Json& cfg);

/// One metrics JSONL line, fixed key order (deterministic bytes).
std::string metrics_line(const IterationMetrics& m);

struct SeedResult {
  std::uint64_t seed = 0;
  double teacher_acc0 = 0.0;
  double final_teacher_acc = 0.0;
  double final_student_acc = 0.0;
  double final_macro_f1 = 0.0;
  std::size_t iterations_run = 0;
  double wall_ms = 0.0;
};

struct ExperimentSummary {
  std::vector<SeedResult> seeds;
  double mean_student_acc = 0.0;
  double std_student_acc = 0.0;
  double mean_macro_f1 = 0.0;
  double std_macro_f1 = 0.0;
  double mean_teacher_acc0 = 0.0;
  std::size_t trainable_params = 0;
};

/// Runs the configured experiment once per seed; writes manifest.json,
/// metrics_seed<seed>.jsonl, summary.csv and the final checkpoint under
/// out_dir. Wall-clock timing goes to the summary, never into the metrics
/// JSONL (those must be byte-stable across re-runs).
ExperimentSummary run_experiment(const Json& cfg, const std::string& out_dir);

/// Cartesian sweep over {"dotted.key": [values...]}; per-point failures are
/// recorded in sweep.csv and the sweep continues.
void run_sweep(const Json& base_cfg, const Json& grid, const std::string& out_dir);

}  // namespace upet
