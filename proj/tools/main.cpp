// hjbctl command-line harness. Links only the C API.
//
// Exit codes: 0 ok, 1 configuration/usage error, 2 runtime error.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "hjbctl/hjbctl.h"

namespace {

int exit_code(hjbctl_status s) {
  switch (s) {
    case HJBCTL_OK: return 0;
    case HJBCTL_ERR_CONFIG:
    case HJBCTL_ERR_ARGUMENT: return 1;
    default: return 2;
  }
}

int report(hjbctl_status s) {
  if (s != HJBCTL_OK) std::cerr << "hjbctl: " << hjbctl_last_error() << '\n';
  return exit_code(s);
}

struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string setup, method;
  std::size_t grid = 0;
  long long seed = -1;
  std::string out;
  std::string cache;
  bool print_config = false;
};

void add_run_options(CLI::App* app, RunOptions& o, bool with_method) {
  app->add_option("-c,--config", o.config_path, "JSON config file");
  app->add_option("--set", o.sets, "Override a config field, key=value (dotted keys)");
  app->add_option("--setup", o.setup, "horizontal | sinusoidal");
  if (with_method) app->add_option("--method", o.method, "hjb | ppo | td3 | baseline");
  app->add_option("--grid", o.grid, "Grid nodes per side");
  app->add_option("--seed", o.seed, "Seed for pools, initialization and sampling");
  app->add_option("-o,--out", o.out, "Run directory (default runs/<method>-<setup>-s<seed>)");
  app->add_option("--baseline-cache", o.cache, "Baseline CSV cache to read and update");
  app->add_flag("--print-config", o.print_config, "Print the effective config and exit");
}

int do_run(const RunOptions& o, const std::string& forced_method) {
  hjbctl_config* cfg = nullptr;
  hjbctl_status s = o.config_path.empty() ? hjbctl_config_from_json(nullptr, &cfg)
                                          : hjbctl_config_from_file(o.config_path.c_str(), &cfg);
  if (s != HJBCTL_OK) return report(s);
  auto set = [&](const std::string& key, const std::string& value) {
    if (s == HJBCTL_OK) s = hjbctl_config_set(cfg, key.c_str(), value.c_str());
  };
  if (!o.setup.empty()) set("setup", "\"" + o.setup + "\"");
  const std::string method = forced_method.empty() ? o.method : forced_method;
  if (!method.empty()) set("method", "\"" + method + "\"");
  if (o.grid) set("problem.n", std::to_string(o.grid));
  if (o.seed >= 0) set("seed", std::to_string(o.seed));
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      hjbctl_config_free(cfg);
      std::cerr << "hjbctl: --set expects key=value, got '" << kv << "'\n";
      return 1;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  char* json = nullptr;
  if (s == HJBCTL_OK) s = hjbctl_config_to_json(cfg, &json);
  if (s != HJBCTL_OK) {
    hjbctl_config_free(cfg);
    return report(s);
  }
  if (o.print_config) {
    std::cout << json;
    hjbctl_string_free(json);
    hjbctl_config_free(cfg);
    return 0;
  }
  std::string out = o.out;
  if (out.empty()) {
    // Name the directory from the effective config.
    const std::string text(json);
    auto field = [&](const std::string& key) {
      const auto p = text.find("\"" + key + "\": ");
      if (p == std::string::npos) return std::string("x");
      auto b = p + key.size() + 4;
      auto e = text.find_first_of(",\n", b);
      std::string v = text.substr(b, e - b);
      if (!v.empty() && v.front() == '"') v = v.substr(1, v.size() - 2);
      return v;
    };
    out = "runs/" + field("method") + "-" + field("setup") + "-s" + field("seed");
  }
  hjbctl_string_free(json);
  hjbctl_run_summary summary{};
  s = hjbctl_run(cfg, out.c_str(), o.cache.empty() ? nullptr : o.cache.c_str(), &summary);
  hjbctl_config_free(cfg);
  if (s != HJBCTL_OK) return report(s);
  std::printf("%s: final mean J %.6g, %llu training solves, %zu validations, %.1f s\n", out.c_str(),
              summary.final_mean_J, static_cast<unsigned long long>(summary.pde_solves),
              summary.validations, summary.wall_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HJB value-function control of advection-diffusion, with RL and adjoint baselines"};
  app.require_subcommand(1);
  std::size_t workers = 0;
  app.add_option("--workers", workers, "Worker threads (default HJBCTL_WORKERS or all cores)");

  RunOptions train_opts;
  auto* train = app.add_subcommand("train", "Train a method and write a run directory");
  train->alias("run");
  add_run_options(train, train_opts, true);

  RunOptions base_opts;
  auto* baseline = app.add_subcommand("baseline", "Solve the validation problems with L-BFGS");
  add_run_options(baseline, base_opts, false);

  std::vector<std::string> runs;
  std::vector<double> thresholds, relative;
  std::string base_csv, compare_out;
  auto* compare = app.add_subcommand("compare", "Solves-to-threshold table over run directories");
  compare->add_option("runs", runs, "Run directories (at least two)")->required();
  compare->add_option("-t,--threshold", thresholds, "Absolute objective threshold");
  compare->add_option("-r,--relative", relative, "Threshold as a factor of the baseline mean");
  compare->add_option("-b,--baseline", base_csv, "Baseline CSV (cache or a baseline run's baseline.csv)");
  compare->add_option("-o,--out", compare_out, "Output CSV (default stdout)");

  std::string eval_run, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Objective of a run's final policy per validation problem");
  evaluate->add_option("run", eval_run, "Run directory")->required();
  evaluate->add_option("-o,--out", eval_out, "Output CSV (default <run>/evaluation.csv)");

  std::string dump_run, dump_prefix;
  std::size_t dump_problem = 0;
  bool dump_zero = false;
  auto* dump = app.add_subcommand("dump-episode", "Write one episode as CSV plus grid snapshots");
  dump->add_option("run", dump_run, "Run directory")->required();
  dump->add_option("-p,--problem", dump_problem, "Validation problem index");
  dump->add_option("-o,--out", dump_prefix, "Output prefix (default <run>/episode_<k>)");
  dump->add_flag("--zero-control", dump_zero, "Use u = 0 instead of the run's policy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (workers) hjbctl_set_workers(workers);

  if (*train) return do_run(train_opts, "");
  if (*baseline) return do_run(base_opts, "baseline");
  if (*compare) {
    std::vector<const char*> dirs;
    for (const auto& r : runs) dirs.push_back(r.c_str());
    char* text = nullptr;
    const hjbctl_status s = hjbctl_compare(
        dirs.data(), dirs.size(), thresholds.data(), thresholds.size(), relative.data(),
        relative.size(), base_csv.empty() ? nullptr : base_csv.c_str(),
        compare_out.empty() ? nullptr : compare_out.c_str(), compare_out.empty() ? &text : nullptr);
    if (s != HJBCTL_OK) return report(s);
    if (text) std::cout << text;
    hjbctl_string_free(text);
    return 0;
  }
  if (*evaluate) {
    if (eval_out.empty()) eval_out = eval_run + "/evaluation.csv";
    double mean = 0.0;
    const hjbctl_status s = hjbctl_evaluate(eval_run.c_str(), eval_out.c_str(), &mean);
    if (s != HJBCTL_OK) return report(s);
    std::printf("mean J %.6g (%s)\n", mean, eval_out.c_str());
    return 0;
  }
  if (*dump) {
    if (dump_prefix.empty()) dump_prefix = dump_run + "/episode_" + std::to_string(dump_problem);
    double J = 0.0;
    const hjbctl_status s =
        hjbctl_dump_episode(dump_run.c_str(), dump_problem, dump_prefix.c_str(), dump_zero ? 1 : 0, &J);
    if (s != HJBCTL_OK) return report(s);
    std::printf("J %.6g -> %s.csv, %s.grid\n", J, dump_prefix.c_str(), dump_prefix.c_str());
    return 0;
  }
  return 1;
}
