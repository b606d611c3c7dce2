#include "hjbctl/hjbctl.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "hjbctl/experiment.hpp"
#include "hjbctl/parallel.hpp"

struct hjbctl_config {
  std::string json;  // accepted document; always parses
};

struct hjbctl_system {
  hjbctl::FemSystemPtr sys;
};

namespace {

thread_local std::string g_last_error;

hjbctl_status fail(hjbctl_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
hjbctl_status guarded(F&& f) {
  try {
    f();
    return HJBCTL_OK;
  } catch (const hjbctl::ConfigError& e) {
    return fail(HJBCTL_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(HJBCTL_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(HJBCTL_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(HJBCTL_ERR_RUNTIME, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

}  // namespace

extern "C" {

const char* hjbctl_version(void) { return "0.1.0"; }
const char* hjbctl_last_error(void) { return g_last_error.c_str(); }

void hjbctl_set_workers(size_t n) { hjbctl::set_worker_count(n); }
size_t hjbctl_workers(void) { return hjbctl::worker_count(); }
uint64_t hjbctl_pde_solves(void) { return hjbctl::pde_solve_counter().load(); }

hjbctl_status hjbctl_config_from_json(const char* json, hjbctl_config** out) {
  if (!out) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_config_from_json: out is null");
  *out = nullptr;
  return guarded([&] {
    std::string text = json && *json ? json : "{}";
    hjbctl::parse_config(text);
    *out = new hjbctl_config{std::move(text)};
  });
}

hjbctl_status hjbctl_config_from_file(const char* path, hjbctl_config** out) {
  if (!path || !out) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_config_from_file: null argument");
  *out = nullptr;
  return guarded([&] {
    std::FILE* f = std::fopen(path, "rb");
    if (!f) throw hjbctl::ConfigError(std::string("cannot open config ") + path);
    std::string text;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) text.append(buf, n);
    std::fclose(f);
    hjbctl::parse_config(text);
    *out = new hjbctl_config{std::move(text)};
  });
}

hjbctl_status hjbctl_config_set(hjbctl_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_config_set: null argument");
  return guarded([&] {
    std::string next = hjbctl::apply_override(config->json, key, value);
    hjbctl::parse_config(next);
    config->json = std::move(next);
  });
}

hjbctl_status hjbctl_config_to_json(const hjbctl_config* config, char** out) {
  if (!config || !out) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_config_to_json: null argument");
  *out = nullptr;
  return guarded([&] { *out = dup_string(hjbctl::config_to_json(hjbctl::parse_config(config->json))); });
}

void hjbctl_config_free(hjbctl_config* config) { delete config; }
void hjbctl_string_free(char* s) { std::free(s); }

hjbctl_status hjbctl_run(const hjbctl_config* config, const char* out_dir,
                         const char* baseline_cache, hjbctl_run_summary* summary) {
  if (!config || !out_dir) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_run: null argument");
  return guarded([&] {
    hjbctl::RunSummary s = hjbctl::run_experiment(hjbctl::parse_config(config->json), out_dir,
                                                  baseline_cache ? baseline_cache : "");
    if (summary) *summary = {s.pde_solves, s.final_mean_J, s.validations, s.wall_seconds};
  });
}

hjbctl_status hjbctl_compare(const char* const* run_dirs, size_t n_runs, const double* thresholds,
                             size_t n_thresholds, const double* relative, size_t n_relative,
                             const char* baseline_csv, const char* out_csv, char** text) {
  if (!run_dirs || n_runs < 2) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_compare: need at least two runs");
  if ((n_thresholds && !thresholds) || (n_relative && !relative)) {
    return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_compare: null threshold array");
  }
  if (n_thresholds + n_relative == 0) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_compare: no thresholds");
  if (text) *text = nullptr;
  return guarded([&] {
    std::vector<hjbctl::RunData> runs;
    for (size_t i = 0; i < n_runs; ++i) {
      if (!run_dirs[i]) throw hjbctl::ConfigError("hjbctl_compare: null run directory");
      runs.push_back(hjbctl::load_run(run_dirs[i]));
    }
    std::vector<hjbctl::Threshold> ts;
    for (size_t i = 0; i < n_thresholds; ++i) ts.push_back({thresholds[i], false});
    for (size_t i = 0; i < n_relative; ++i) ts.push_back({relative[i], true});
    std::vector<hjbctl::BaselineCacheEntry> base;
    if (baseline_csv && *baseline_csv) base = hjbctl::read_baseline_cache(baseline_csv);
    const auto rows = hjbctl::compare_runs(runs, ts, base);
    if (out_csv && *out_csv) hjbctl::write_comparison_csv(rows, out_csv);
    if (text) *text = dup_string(hjbctl::comparison_csv(rows));
  });
}

hjbctl_status hjbctl_evaluate(const char* run_dir, const char* out_csv, double* mean_J) {
  if (!run_dir) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_evaluate: null run directory");
  return guarded([&] {
    const auto rows = hjbctl::evaluate_run(run_dir);
    if (out_csv && *out_csv) hjbctl::write_evaluation_csv(rows, out_csv);
    double acc = 0.0;
    for (const auto& r : rows) acc += r.J;
    if (mean_J) *mean_J = acc / static_cast<double>(rows.size());
  });
}

hjbctl_status hjbctl_dump_episode(const char* run_dir, size_t problem, const char* prefix,
                                  int zero_control, double* objective) {
  if (!run_dir || !prefix) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_dump_episode: null argument");
  return guarded([&] {
    const double J = hjbctl::dump_episode(run_dir, problem, prefix, zero_control != 0);
    if (objective) *objective = J;
  });
}

hjbctl_status hjbctl_system_create(const hjbctl_config* config, double x1, double x2, double v,
                                   hjbctl_system** out) {
  if (!config || !out) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_system_create: null argument");
  *out = nullptr;
  return guarded([&] {
    const hjbctl::ExperimentConfig c = hjbctl::parse_config(config->json);
    if (!std::isfinite(x1) || !std::isfinite(x2) || !std::isfinite(v)) {
      throw hjbctl::ConfigError("hjbctl_system_create: non-finite parameter");
    }
    if (c.problem.setup == hjbctl::Setup::kHorizontal && v != 0.0) {
      throw hjbctl::ConfigError("hjbctl_system_create: the horizontal setup has no phase v");
    }
    hjbctl::ProblemParams y{x1, x2, v, c.problem.setup};
    *out = new hjbctl_system{hjbctl::FemSystem::assemble(c.problem, y)};
  });
}

size_t hjbctl_system_nodes(const hjbctl_system* sys) { return sys ? sys->sys->nodes() : 0; }
size_t hjbctl_system_steps(const hjbctl_system* sys) { return sys ? sys->sys->config().steps : 0; }

hjbctl_status hjbctl_system_objective(const hjbctl_system* sys, const double* controls, size_t n,
                                      double* J, double* grad) {
  if (!sys || !controls || !J) return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_system_objective: null argument");
  if (n != 2 * sys->sys->config().steps) {
    return fail(HJBCTL_ERR_ARGUMENT, "hjbctl_system_objective: expected " +
                                         std::to_string(2 * sys->sys->config().steps) + " controls");
  }
  return guarded([&] {
    std::span<const double> u(controls, n);
    if (grad) {
      hjbctl::ObjectiveGrad og = hjbctl::objective_and_grad(*sys->sys, u);
      *J = og.J;
      std::copy(og.grad.begin(), og.grad.end(), grad);
    } else {
      *J = hjbctl::objective(*sys->sys, u);
    }
  });
}

void hjbctl_system_free(hjbctl_system* sys) { delete sys; }

}  // extern "C"
