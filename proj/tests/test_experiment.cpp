#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hjbctl/experiment.hpp"

using namespace hjbctl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Tiny runs: 6x6 grid, 3 steps, two validation problems.
ExperimentConfig tiny(Method m, std::vector<std::size_t> val = {0, 1}) {
  std::string text = R"({"problem": {"n": 6, "steps": 3},
    "hjb": {"iterations": 4, "batch": 2, "pool": 4, "validate_every": 2, "width": 6, "depth": 1, "lr0": 0.01,
            "lr_floor": 0.001},
    "rl": {"max_solves": 18, "validate_every_solves": 9, "envs": 3, "pool": 4, "minibatch": 4,
           "conv": [2, 2, 2], "dense": [4, 4], "td3_batch": 4, "td3_warmup": 3},
    "baseline": {"restarts": 1, "max_iter": 50}})";
  text = apply_override(text, "method", "\"" + to_string(m) + "\"");
  ExperimentConfig c = parse_config(text);
  c.validation_indices = std::move(val);
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig d = parse_config("");
  CHECK(d.method == Method::kHjb);
  CHECK(d.problem.setup == Setup::kHorizontal);
  CHECK(d.problem.c == 5.0);
  CHECK(d.validation_set().size() == 10);
  const ExperimentConfig s = parse_config(R"({"setup": "sinusoidal", "seed": 7, "validation_indices": [0, 29]})");
  CHECK(s.problem.c == 0.5);
  CHECK(s.problem.sigma_s == 0.025);
  CHECK(s.validation_set().size() == 2);
  CHECK(s.validation_set()[1] == validation_params(Setup::kSinusoidal)[29]);
  CHECK(s.hjb.seed == 7);
  CHECK(s.rl.seed == 7);
  CHECK(s.net.seed == 7);
  CHECK(s.baseline.seed == 7);

  // The printed config parses back to itself.
  const std::string once = config_to_json(s);
  CHECK(config_to_json(parse_config(once)) == once);

  CHECK_THROWS_AS(parse_config(R"({"problem": {"nn": 4}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": "one"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"method": "sarsa"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"validation_indices": [10]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"hjb": {"batch": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_method("PPO "), ConfigError);
  for (Method m : {Method::kHjb, Method::kPpo, Method::kTd3, Method::kBaseline}) CHECK(parse_method(to_string(m)) == m);

  std::string t = apply_override("{}", "rl.lr0", "0.5");
  t = apply_override(t, "setup", "sinusoidal");  // not JSON, kept as a string
  const ExperimentConfig o = parse_config(t);
  CHECK(o.rl.lr0 == 0.5);
  CHECK(o.problem.setup == Setup::kSinusoidal);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("training runs") {
  TempDir tmp("hjbctl_experiment_runs");
  const ExperimentConfig hjb = tiny(Method::kHjb);
  RunSummary s = run_experiment(hjb, tmp / "hjb_a");
  run_experiment(hjb, tmp / "hjb_b");
  for (const char* f : {"config.json", "metrics.csv", "model.bin", "summary.json"}) {
    CHECK(fs::exists(tmp.path / "hjb_a" / f));
  }
  // Same seed, same bytes.
  CHECK(slurp(tmp.path / "hjb_a" / "metrics.csv") == slurp(tmp.path / "hjb_b" / "metrics.csv"));
  CHECK(slurp(tmp.path / "hjb_a" / "model.bin") == slurp(tmp.path / "hjb_b" / "model.bin"));
  CHECK(s.pde_solves == 4 * 2 * 3);
  CHECK(s.validations == 3);

  MetricsTable mt = read_metrics_csv(tmp / "hjb_a/metrics.csv");
  CHECK(mt.validation_count == 2);
  CHECK(mt.comment.find("method=hjb") != std::string::npos);
  CHECK(mt.columns.front() == "iter");
  CHECK(mt.columns.back() == "lr");
  REQUIRE(mt.rows.size() == 3);
  for (std::size_t i = 1; i < mt.rows.size(); ++i) CHECK(mt.rows[i].pde_solves > mt.rows[i - 1].pde_solves);
  CHECK(mt.rows.back().mean_val_J == s.final_mean_J);

  // The stored model reproduces the final validation.
  const auto ev = evaluate_run(tmp / "hjb_a");
  REQUIRE(ev.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(ev[i].J == doctest::Approx(mt.rows.back().val_J[i]).epsilon(1e-12));
  write_evaluation_csv(ev, tmp / "eval.csv");
  CHECK(slurp(tmp.path / "eval.csv").rfind("setup,x1,x2,v,J\n", 0) == 0);

  // Zero control matches the zero-head first validation.
  const double J0 = dump_episode(tmp / "hjb_a", 1, tmp / "ep", true);
  CHECK(J0 == doctest::Approx(mt.rows.front().val_J[1]).epsilon(1e-14));
  CHECK(fs::file_size(tmp.path / "ep.grid") == 8 + 24 + 4 * (8 + 36 * 8));
  CHECK_THROWS_AS(dump_episode(tmp / "hjb_a", 2, tmp / "ep"), ConfigError);

  const ExperimentConfig ppo = tiny(Method::kPpo);
  RunSummary ps = run_experiment(ppo, tmp / "ppo");
  CHECK(ps.pde_solves == 18);
  const ExperimentConfig td3 = tiny(Method::kTd3);
  RunSummary ts = run_experiment(td3, tmp / "td3");
  CHECK(ts.pde_solves == 18);
  CHECK(evaluate_run(tmp / "ppo")[0].J == doctest::Approx(read_metrics_csv(tmp / "ppo/metrics.csv").rows.back().val_J[0]).epsilon(1e-12));
  CHECK(evaluate_run(tmp / "td3")[1].J == doctest::Approx(ts.final_J[1]).epsilon(1e-12));

  SUBCASE("comparison") {
    std::vector<RunData> runs{load_run(tmp / "hjb_a"), load_run(tmp / "ppo")};
    CHECK(runs[0].config.method == Method::kHjb);
    const double first = runs[0].metrics.rows.front().mean_val_J;
    auto rows = compare_runs(runs, {{1e-9, false}, {first, false}}, {});
    REQUIRE(rows.size() == 4);
    CHECK_FALSE(rows[0].solves_to_threshold.has_value());
    CHECK(rows[1].solves_to_threshold == 0u);
    CHECK_FALSE(rows[0].baseline_mean_J.has_value());
    const std::string csv = comparison_csv(rows);
    CHECK(csv.rfind("run,method,seed,threshold,solves_to_threshold,final_pde_solves,final_mean_J,baseline_mean_J,suboptimality\n", 0) == 0);
    CHECK(csv.find("not reached") != std::string::npos);
    CHECK(csv.find("n/a") != std::string::npos);

    // A run compared with itself produces identical columns.
    auto self = compare_runs({runs[0], runs[0]}, {{0.5, false}}, {});
    CHECK(self[0].solves_to_threshold == self[1].solves_to_threshold);
    CHECK(self[0].final_mean_J == self[1].final_mean_J);

    CHECK_THROWS_AS(compare_runs(runs, {{1.1, true}}, {}), ConfigError);
    run_experiment(tiny(Method::kHjb, {0, 2}), tmp / "other");
    CHECK_THROWS_AS(compare_runs({runs[0], load_run(tmp / "other")}, {{0.1, false}}, {}), ConfigError);
  }

  SUBCASE("baseline runs and relative thresholds") {
    const std::string cache = tmp / "cache.csv";
    RunSummary bs = run_experiment(tiny(Method::kBaseline), tmp / "base", cache);
    CHECK(fs::exists(tmp.path / "base" / "baseline.csv"));
    CHECK(fs::exists(tmp.path / "base" / "controls.csv"));
    const auto entries = read_baseline_cache(cache);
    REQUIRE(entries.size() == 2);
    CHECK(bs.final_mean_J == doctest::Approx(0.5 * (entries[0].J + entries[1].J)).epsilon(1e-14));
    // Replaying the stored controls reproduces the optimum.
    const auto ev = evaluate_run(tmp / "base");
    CHECK(ev[0].J == doctest::Approx(entries[0].J).epsilon(1e-10));
    CHECK(ev[1].J == doctest::Approx(entries[1].J).epsilon(1e-10));

    std::vector<RunData> runs{load_run(tmp / "hjb_a"), load_run(tmp / "ppo")};
    auto rows = compare_runs(runs, {{2.0, true}}, entries);
    REQUIRE(rows[0].baseline_mean_J.has_value());
    CHECK(*rows[0].baseline_mean_J == doctest::Approx(bs.final_mean_J));
    CHECK(rows[0].threshold == doctest::Approx(2.0 * bs.final_mean_J));
    CHECK(*rows[1].suboptimality == doctest::Approx(rows[1].final_mean_J - bs.final_mean_J));
    for (const auto& r : rows) CHECK(r.final_mean_J >= bs.final_mean_J - 1e-12);
  }
}
