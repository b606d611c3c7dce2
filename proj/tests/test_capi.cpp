// Exercises the shared library through the C header only.
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "hjbctl/hjbctl.h"

namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({"problem": {"n": 6, "steps": 3}, "validation_indices": [0, 1],
  "hjb": {"iterations": 2, "batch": 2, "pool": 4, "width": 4, "depth": 1, "lr0": 0.01, "lr_floor": 0.001}})";

}  // namespace

TEST_CASE("configs") {
  CHECK(std::strlen(hjbctl_version()) > 0);
  hjbctl_config* cfg = nullptr;
  REQUIRE(hjbctl_config_from_json(nullptr, &cfg) == HJBCTL_OK);
  CHECK(hjbctl_config_set(cfg, "rl.lr0", "0.25") == HJBCTL_OK);
  char* json = nullptr;
  REQUIRE(hjbctl_config_to_json(cfg, &json) == HJBCTL_OK);
  CHECK(std::string(json).find("\"lr0\": 0.25") != std::string::npos);
  hjbctl_string_free(json);

  // A rejected override leaves the config untouched.
  CHECK(hjbctl_config_set(cfg, "problem.nope", "1") == HJBCTL_ERR_CONFIG);
  CHECK(std::string(hjbctl_last_error()).find("nope") != std::string::npos);
  CHECK(hjbctl_config_set(cfg, "problem.n", "\"big\"") == HJBCTL_ERR_CONFIG);
  REQUIRE(hjbctl_config_to_json(cfg, &json) == HJBCTL_OK);
  CHECK(std::string(json).find("nope") == std::string::npos);
  hjbctl_string_free(json);
  hjbctl_config_free(cfg);

  hjbctl_config* bad = nullptr;
  CHECK(hjbctl_config_from_json("{\"seed\": -", &bad) == HJBCTL_ERR_CONFIG);
  CHECK(bad == nullptr);
  CHECK(hjbctl_config_from_file("/nonexistent.json", &bad) == HJBCTL_ERR_CONFIG);
  CHECK(hjbctl_config_from_json("{}", nullptr) == HJBCTL_ERR_ARGUMENT);
  CHECK(hjbctl_config_set(nullptr, "seed", "1") == HJBCTL_ERR_ARGUMENT);
  hjbctl_config_free(nullptr);
  hjbctl_string_free(nullptr);

  const size_t saved = hjbctl_workers();
  hjbctl_set_workers(2);
  CHECK(hjbctl_workers() == 2);
  hjbctl_set_workers(saved);
}

TEST_CASE("systems") {
  hjbctl_config* cfg = nullptr;
  REQUIRE(hjbctl_config_from_json(R"({"problem": {"n": 8, "steps": 4}})", &cfg) == HJBCTL_OK);
  hjbctl_system* sys = nullptr;
  REQUIRE(hjbctl_system_create(cfg, 0.2, 0.45, 0.0, &sys) == HJBCTL_OK);
  CHECK(hjbctl_system_nodes(sys) == 64);
  CHECK(hjbctl_system_steps(sys) == 4);
  std::vector<double> u{-0.3, 0.2, 0.1, -0.4, 0.5, 0.0, -0.2, 0.3}, g(8);
  double J = 0.0;
  const uint64_t before = hjbctl_pde_solves();
  REQUIRE(hjbctl_system_objective(sys, u.data(), u.size(), &J, g.data()) == HJBCTL_OK);
  CHECK(hjbctl_pde_solves() > before);
  CHECK(J > 0.0);
  // Directional derivative against a central difference.
  std::vector<double> up = u, dn = u;
  double Jp = 0.0, Jm = 0.0, dir = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    const double d = (i % 3 == 0 ? 1.0 : -0.5);
    up[i] += 1e-6 * d;
    dn[i] -= 1e-6 * d;
    dir += g[i] * d;
  }
  hjbctl_system_objective(sys, up.data(), up.size(), &Jp, nullptr);
  hjbctl_system_objective(sys, dn.data(), dn.size(), &Jm, nullptr);
  CHECK(dir == doctest::Approx((Jp - Jm) / 2e-6).epsilon(1e-6));
  CHECK(hjbctl_system_objective(sys, u.data(), 7, &J, nullptr) == HJBCTL_ERR_ARGUMENT);
  hjbctl_system_free(sys);
  CHECK(hjbctl_system_create(cfg, 0.2, 0.45, 0.5, &sys) == HJBCTL_ERR_CONFIG);
  hjbctl_config_free(cfg);
}

TEST_CASE("runs, comparison and dumps") {
  const fs::path dir = fs::temp_directory_path() / "hjbctl_capi_test";
  fs::remove_all(dir);
  hjbctl_config* cfg = nullptr;
  REQUIRE(hjbctl_config_from_json(kTiny, &cfg) == HJBCTL_OK);
  hjbctl_run_summary a{}, b{};
  REQUIRE(hjbctl_run(cfg, (dir / "a").c_str(), nullptr, &a) == HJBCTL_OK);
  REQUIRE(hjbctl_config_set(cfg, "method", "\"ppo\"") == HJBCTL_OK);
  REQUIRE(hjbctl_config_set(cfg, "rl.max_solves", "6") == HJBCTL_OK);
  REQUIRE(hjbctl_config_set(cfg, "rl.envs", "2") == HJBCTL_OK);
  REQUIRE(hjbctl_run(cfg, (dir / "b").c_str(), nullptr, &b) == HJBCTL_OK);
  CHECK(a.pde_solves == 12);
  CHECK(b.pde_solves == 6);
  CHECK(a.validations >= 2);

  const std::string sa = (dir / "a").string(), sb = (dir / "b").string();
  const char* runs[] = {sa.c_str(), sb.c_str()};
  const double th[] = {1e-12};
  char* text = nullptr;
  REQUIRE(hjbctl_compare(runs, 2, th, 1, nullptr, 0, nullptr, nullptr, &text) == HJBCTL_OK);
  CHECK(std::string(text).find("not reached") != std::string::npos);
  hjbctl_string_free(text);
  const double rel[] = {1.5};
  CHECK(hjbctl_compare(runs, 2, nullptr, 0, rel, 1, nullptr, nullptr, nullptr) == HJBCTL_ERR_CONFIG);
  CHECK(hjbctl_compare(runs, 1, th, 1, nullptr, 0, nullptr, nullptr, nullptr) == HJBCTL_ERR_ARGUMENT);

  double mean = 0.0;
  REQUIRE(hjbctl_evaluate(sa.c_str(), (dir / "eval.csv").c_str(), &mean) == HJBCTL_OK);
  CHECK(mean == doctest::Approx(a.final_mean_J).epsilon(1e-12));
  double J = 0.0;
  REQUIRE(hjbctl_dump_episode(sa.c_str(), 0, (dir / "ep").c_str(), 0, &J) == HJBCTL_OK);
  CHECK(fs::exists(dir / "ep.csv"));
  CHECK(fs::exists(dir / "ep.grid"));
  CHECK(hjbctl_dump_episode(sa.c_str(), 9, (dir / "ep").c_str(), 0, &J) == HJBCTL_ERR_CONFIG);
  CHECK(hjbctl_evaluate((dir / "missing").c_str(), nullptr, &mean) == HJBCTL_ERR_CONFIG);

  CHECK(hjbctl_config_set(cfg, "problem.ds", "-1") == HJBCTL_ERR_CONFIG);
  CHECK(hjbctl_run(nullptr, (dir / "c").c_str(), nullptr, nullptr) == HJBCTL_ERR_ARGUMENT);
  hjbctl_config_free(cfg);
  fs::remove_all(dir);
}
