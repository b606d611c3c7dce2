#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fd.hpp"
#include "hjbctl/baseline_solver.hpp"

using namespace hjbctl;
using testing::central_diff;
using testing::rel_err;

namespace {

ProblemConfig small(std::size_t n, std::size_t steps) {
  ProblemConfig cfg = ProblemConfig::defaults(Setup::kHorizontal);
  cfg.n = n;
  cfg.steps = steps;
  return cfg;
}

const ProblemParams kY{0.2, 0.45, 0.0, Setup::kHorizontal};

}  // namespace

TEST_CASE("objective without a source") {
  // A sink with no source keeps the concentration non-positive, so only the
  // control energy remains.
  ProblemConfig cfg = small(8, 6);
  cfg.c = 0.0;
  auto sys = FemSystem::assemble(cfg, kY);
  std::mt19937_64 rng(1);
  std::vector<double> u(12);
  for (std::size_t i = 0; i < 6; ++i) {
    u[2 * i] = -std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    u[2 * i + 1] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  }
  double energy = 0.0;
  for (double v : u) energy += 0.5 * v * v * cfg.ds;
  const ObjectiveGrad og = objective_and_grad(*sys, u);
  CHECK(og.J == doctest::Approx(energy).epsilon(1e-14));
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(og.grad[i] == doctest::Approx(cfg.ds * u[i]).epsilon(1e-12));
}

TEST_CASE("adjoint gradient") {
  auto sys = FemSystem::assemble(small(8, 5), kY);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> u = testing::uniform(10, rng, -1.5, 1.5);
    const ObjectiveGrad og = objective_and_grad(*sys, u);
    CHECK(og.J == doctest::Approx(objective(*sys, u)).epsilon(1e-14));
    const auto fd = central_diff([&](const std::vector<double>& x) { return objective(*sys, x); }, u, 1e-6);
    CHECK(rel_err(og.grad, fd) < 1e-5);
  }

  // The objective equals an open-loop rollout of the same controls.
  std::vector<double> u = testing::uniform(10, rng, -1.0, 1.0);
  std::size_t k = 0;
  EpisodeRecord ep = rollout(*sys, [&](const FemSystem&, double, const State&) {
    std::array<double, 2> c{u[2 * k], u[2 * k + 1]};
    ++k;
    return c;
  });
  CHECK(objective(*sys, u) == doctest::Approx(ep.objective).epsilon(1e-13));
  CHECK_THROWS_AS(objective(*sys, std::vector<double>(9, 0.0)), DimensionError);
}

TEST_CASE("L-BFGS on a quadratic") {
  // f = (x - x*)^T A (x - x*) / 2 with a well-conditioned SPD A.
  const std::size_t n = 10;
  std::mt19937_64 rng(3);
  std::vector<double> xs = testing::uniform(n, rng, -2.0, 2.0);
  std::vector<std::vector<double>> B(n, testing::uniform(n, rng));
  for (auto& r : B) r = testing::uniform(n, rng);
  std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    A[i][i] = 1.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) A[i][j] += 0.1 * B[k][i] * B[k][j];
  }
  ObjectiveFn f = [&](std::span<const double> x, std::span<double> g) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double ai = 0.0;
      for (std::size_t j = 0; j < n; ++j) ai += A[i][j] * (x[j] - xs[j]);
      if (!g.empty()) g[i] = ai;
      v += 0.5 * (x[i] - xs[i]) * ai;
    }
    return v;
  };
  LbfgsOptions opt;
  opt.memory = n;
  opt.max_iter = 2 * n;
  // The smallest eigenvalue is at least one, so |x - x*| <= |grad|.
  opt.tol = 5e-9;
  LbfgsResult r = minimize_lbfgs(f, std::vector<double>(n, 0.0), opt);
  CHECK(r.converged);
  CHECK(r.iterations <= 2 * n);
  for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(r.x[i] - xs[i]) < 1e-8);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);
  CHECK(r.history.front() == doctest::Approx(f(std::vector<double>(n, 0.0), {})));

  opt.max_iter = 1;
  LbfgsResult cut = minimize_lbfgs(f, std::vector<double>(n, 0.0), opt);
  CHECK_FALSE(cut.converged);
  CHECK(cut.iterations <= 1);
  CHECK(cut.f < r.history.front());
}

TEST_CASE("baseline instance") {
  auto sys = FemSystem::assemble(small(8, 5), kY);
  BaselineOptions opt;
  opt.restarts = 0;
  BaselineResult a = solve_instance(*sys, opt);
  BaselineResult b = solve_instance(*sys, opt);
  CHECK(a.J == b.J);
  CHECK(a.controls == b.controls);
  CHECK(a.best_start == 0);
  CHECK(a.J_zero == objective(*sys, std::vector<double>(10, 0.0)));
  CHECK(a.J <= a.J_zero);
  CHECK(a.J == doctest::Approx(objective(*sys, a.controls)).epsilon(1e-14));
  CHECK(a.best.grad_inf <= opt.lbfgs.tol);
  for (std::size_t i = 1; i < a.best.history.size(); ++i) CHECK(a.best.history[i] <= a.best.history[i - 1]);

  opt.restarts = 2;
  opt.seed = 4;
  BaselineResult m = solve_instance(*sys, opt);
  CHECK(m.start_objectives.size() == 3);
  CHECK(m.J <= a.J + 1e-12);
  CHECK(m.J == doctest::Approx(*std::min_element(m.start_objectives.begin(), m.start_objectives.end())));
  CHECK(solve_instance(*sys, opt).J == m.J);

  CHECK(suboptimality(0.3, 0.25) == doctest::Approx(0.05));
  CHECK(suboptimality(0.25, 0.25) == 0.0);
}

TEST_CASE("baseline cache") {
  std::vector<BaselineCacheEntry> entries;
  entries.push_back({ProblemParams{0.125, 0.4, -0.35, Setup::kSinusoidal}, 32, 25, 0.0123456789012345, 42, 3e-5, 1.5, true});
  entries.push_back({ProblemParams{0.2, 0.5, 0.0, Setup::kHorizontal}, 16, 25, 0.0841, 17, 2e-4, 0.25, false});
  const auto path = std::filesystem::temp_directory_path() / "hjbctl_cache_test.csv";
  write_baseline_cache(path.string(), entries);
  const auto back = read_baseline_cache(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].params == entries[0].params);
  CHECK(back[0].J == entries[0].J);
  CHECK(back[0].iterations == 42);
  CHECK(back[1].converged == false);
  CHECK(back[1].n == 16);

  auto hit = find_baseline(back, entries[1].params, 16, 25);
  REQUIRE(hit.has_value());
  CHECK(hit->J == 0.0841);
  CHECK_FALSE(find_baseline(back, entries[1].params, 32, 25).has_value());
  CHECK_FALSE(find_baseline(back, ProblemParams{0.2, 0.51, 0.0, Setup::kHorizontal}, 16, 25).has_value());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_baseline_cache(path.string()), Error);
}
