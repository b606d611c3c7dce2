#ifndef HJBCTL_EXPERIMENT_HPP_
#define HJBCTL_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hjbctl/baseline_solver.hpp"
#include "hjbctl/hjb_trainer.hpp"
#include "hjbctl/metrics.hpp"
#include "hjbctl/pde_env.hpp"
#include "hjbctl/rl.hpp"
#include "hjbctl/value_network.hpp"

namespace hjbctl {

enum class Method { kHjb, kPpo, kTd3, kBaseline };

std::string to_string(Method m);
Method parse_method(const std::string& name);

// Everything a run needs. Every JSON field is optional; missing fields take
// the defaults of the corresponding module config, with the setup-dependent
// source strength and width taken from ProblemConfig::defaults(setup).
struct ExperimentConfig {
  Method method = Method::kHjb;
  std::uint64_t seed = 0;
  ProblemConfig problem = ProblemConfig::defaults(Setup::kHorizontal);
  // Indices into validation_params(setup); empty selects the whole grid.
  std::vector<std::size_t> validation_indices;
  HjbConfig hjb;
  ValueNetworkInit net;
  rl::RlConfig rl;
  BaselineOptions baseline;

  std::vector<ProblemParams> validation_set() const;
};

// Strict: unknown keys and wrong types raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
// Fully defaulted, pretty-printed.
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

// Sets a dotted key ("rl.lr0", "problem.n") in a JSON document. The value is
// parsed as JSON when possible and kept as a string otherwise.
std::string apply_override(const std::string& json_text, const std::string& key,
                           const std::string& value);

struct RunSummary {
  Method method = Method::kHjb;
  std::uint64_t pde_solves = 0;
  double final_mean_J = 0.0;
  std::vector<double> final_J;
  std::size_t validations = 0;
  double wall_seconds = 0.0;
};

// Writes into out_dir (created if missing):
//   config.json   the fully defaulted config
//   metrics.csv   one flushed row per validation
//   model.bin     final checkpoint, also rewritten at each validation
//   summary.json  final numbers
// The baseline method writes baseline.csv and controls.csv instead of
// metrics.csv and model.bin. `cache_path` (baseline only, may be empty) is
// read for previously solved instances and rewritten with the union.
RunSummary run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                          const std::string& cache_path = "");

// Target objective for compare: absolute, or a factor on the baseline mean.
struct Threshold {
  double value = 0.0;
  bool relative = false;
};

struct RunData {
  std::string name;
  ExperimentConfig config;
  MetricsTable metrics;
};
RunData load_run(const std::string& run_dir);

struct ComparisonRow {
  std::string run;
  Method method = Method::kHjb;
  std::uint64_t seed = 0;
  double threshold = 0.0;
  std::optional<std::uint64_t> solves_to_threshold;  // empty: not reached
  std::uint64_t final_pde_solves = 0;
  double final_mean_J = 0.0;
  std::optional<double> baseline_mean_J;
  std::optional<double> suboptimality;  // final mean J - baseline mean J
};

// First cumulative solve count whose validation mean is <= each threshold.
// Throws ConfigError when the runs were validated on different problems or
// when a relative threshold is requested without a complete baseline.
std::vector<ComparisonRow> compare_runs(const std::vector<RunData>& runs,
                                        const std::vector<Threshold>& thresholds,
                                        const std::vector<BaselineCacheEntry>& baseline);
// Columns: run,method,seed,threshold,solves_to_threshold,final_pde_solves,
// final_mean_J,baseline_mean_J,suboptimality. Missing values are "not reached"
// (solves) and "n/a" (baseline columns).
void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

// Deterministic policy stored in a run directory. For baseline runs the
// open-loop controls of validation problem `problem` are replayed.
Policy load_policy(const std::string& run_dir, std::size_t problem = 0);

struct EvaluationRow {
  ProblemParams params;
  double J = 0.0;
};
// Objectives of the run's final policy on its validation set (uncounted).
std::vector<EvaluationRow> evaluate_run(const std::string& run_dir);
void write_evaluation_csv(const std::vector<EvaluationRow>& rows, const std::string& path);

// Rolls out validation problem `problem` with the run's policy, or with
// zero control when `zero_control`, and writes <prefix>.csv and
// <prefix>.grid. Returns the objective.
double dump_episode(const std::string& run_dir, std::size_t problem, const std::string& prefix,
                    bool zero_control = false);

}  // namespace hjbctl

#endif  // HJBCTL_EXPERIMENT_HPP_
