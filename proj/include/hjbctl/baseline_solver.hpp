#ifndef HJBCTL_BASELINE_SOLVER_HPP_
#define HJBCTL_BASELINE_SOLVER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hjbctl/pde_env.hpp"

namespace hjbctl {

// Open-loop control sequence flattened as (u1_0, u2_0, u1_1, u2_1, ...).
struct ObjectiveGrad {
  double J = 0.0;
  std::vector<double> grad;
};

// Discrete objective of a fixed control sequence and its exact gradient by a
// reverse sweep through the implicit-Euler solves.
ObjectiveGrad objective_and_grad(const FemSystem& sys, std::span<const double> controls);
double objective(const FemSystem& sys, std::span<const double> controls);

// f(x), writing the gradient into `grad`.
using ObjectiveFn = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
  std::size_t memory = 10;
  std::size_t max_iter = 500;
  double tol = 1e-4;  // on the max-norm of the gradient
  std::size_t max_fallbacks = 50;
};

struct LbfgsResult {
  std::vector<double> x;
  double f = 0.0;
  double grad_inf = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t fallback_steps = 0;
  bool converged = false;
  std::vector<double> history;  // f at x0 and after every accepted iterate
  std::string message;
};

// L-BFGS with a strong-Wolfe line search. When the line search fails a
// backtracking steepest-descent step is taken and the quasi-Newton memory is
// reset.
LbfgsResult minimize_lbfgs(const ObjectiveFn& f, std::vector<double> x0,
                           const LbfgsOptions& options = {});

struct BaselineOptions {
  LbfgsOptions lbfgs;
  // Random restarts after the zero-control start; draws are N(0, 1).
  std::size_t restarts = 3;
  std::uint64_t seed = 0;
};

struct BaselineResult {
  std::vector<double> controls;
  double J = 0.0;
  double J_zero = 0.0;  // objective of the zero control
  std::size_t best_start = 0;
  LbfgsResult best;
  std::vector<double> start_objectives;
  double wall_seconds = 0.0;
};

BaselineResult solve_instance(const FemSystem& sys, const BaselineOptions& options = {});

// Absolute gap J_method - J_baseline.
double suboptimality(double J_method, double J_baseline);

struct BaselineCacheEntry {
  ProblemParams params;
  std::size_t n = 0;
  std::size_t steps = 0;
  double J = 0.0;
  std::size_t iterations = 0;
  double grad_inf = 0.0;
  double wall_seconds = 0.0;
  bool converged = false;
};

// CSV with header setup,x1,x2,v,n,steps,J,iterations,grad_inf,wall_seconds,converged.
void write_baseline_cache(const std::string& path, const std::vector<BaselineCacheEntry>& entries);
std::vector<BaselineCacheEntry> read_baseline_cache(const std::string& path);
std::optional<BaselineCacheEntry> find_baseline(const std::vector<BaselineCacheEntry>& entries,
                                                const ProblemParams& y, std::size_t n,
                                                std::size_t steps);

}  // namespace hjbctl

#endif  // HJBCTL_BASELINE_SOLVER_HPP_
