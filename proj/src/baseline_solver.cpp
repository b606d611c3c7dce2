#include "hjbctl/baseline_solver.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "hjbctl/parallel.hpp"

namespace hjbctl {

ObjectiveGrad objective_and_grad(const FemSystem& sys, std::span<const double> controls) {
  const auto& cfg = sys.config();
  if (controls.size() != 2 * cfg.steps) {
    throw DimensionError("objective_and_grad: expected " + std::to_string(2 * cfg.steps) +
                         " controls, got " + std::to_string(controls.size()));
  }
  ad::Tape tape;
  ad::Var u = tape.variable(Tensor::from(std::vector<double>(controls.begin(), controls.end())));
  State z0 = initial_state(sys);
  TapedState z{tape.constant(Tensor::from(z0.a)), tape.constant(Tensor::scalar(z0.alpha))};
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    z = step(sys, z, ad::element(u, 2 * i), ad::element(u, 2 * i + 1));
  }
  ad::Var J = ad::add(ad::scale(ad::sum(ad::square(u)), 0.5 * cfg.ds), terminal_cost(sys, z.a));
  tape.backward(J);
  Tensor g = tape.grad(u);
  return {J.item(), std::vector<double>(g.data(), g.data() + g.size())};
}

double objective(const FemSystem& sys, std::span<const double> controls) {
  const auto& cfg = sys.config();
  if (controls.size() != 2 * cfg.steps) throw DimensionError("objective: control length mismatch");
  State z = initial_state(sys);
  double run = 0.0;
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    std::array<double, 2> u{controls[2 * i], controls[2 * i + 1]};
    run += running_cost(u, cfg.ds);
    z = step(sys, z, u);
  }
  return run + terminal_cost(sys, z.a);
}

namespace {

class CeresAdapter final : public ceres::FirstOrderFunction {
 public:
  CeresAdapter(const ObjectiveFn& f, int n, std::size_t& evals) : f_(f), n_(n), evals_(evals) {}

  bool Evaluate(const double* x, double* cost, double* gradient) const override {
    std::vector<double> scratch;
    std::span<double> g;
    if (gradient != nullptr) {
      g = std::span<double>(gradient, static_cast<std::size_t>(n_));
    } else {
      scratch.resize(static_cast<std::size_t>(n_));
      g = scratch;
    }
    try {
      *cost = f_(std::span<const double>(x, static_cast<std::size_t>(n_)), g);
    } catch (const Error&) {
      return false;
    }
    ++evals_;
    return std::isfinite(*cost);
  }
  int NumParameters() const override { return n_; }

 private:
  const ObjectiveFn& f_;
  int n_;
  std::size_t& evals_;
};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

LbfgsResult minimize_lbfgs(const ObjectiveFn& f, std::vector<double> x0,
                           const LbfgsOptions& options) {
  const std::size_t n = x0.size();
  if (n == 0) throw ConfigError("minimize_lbfgs: empty decision vector");
  LbfgsResult r;
  r.x = std::move(x0);
  std::vector<double> g(n);
  r.f = f(r.x, g);
  ++r.evaluations;
  r.grad_inf = max_abs(g);
  r.history.push_back(r.f);
  if (!std::isfinite(r.f)) throw NumericError("minimize_lbfgs: non-finite objective at start");

  while (true) {
    if (r.grad_inf < options.tol) {
      r.converged = true;
      break;
    }
    if (r.iterations >= options.max_iter) {
      r.message = "iteration limit reached";
      break;
    }
    ceres::GradientProblemSolver::Options opt;
    opt.line_search_direction_type = ceres::LBFGS;
    opt.line_search_type = ceres::WOLFE;
    opt.max_lbfgs_rank = static_cast<int>(options.memory);
    opt.max_num_iterations = static_cast<int>(options.max_iter - r.iterations);
    opt.gradient_tolerance = options.tol;
    opt.function_tolerance = 0.0;
    opt.parameter_tolerance = 0.0;
    opt.logging_type = ceres::SILENT;
    opt.minimizer_progress_to_stdout = false;

    ceres::GradientProblem problem(new CeresAdapter(f, static_cast<int>(n), r.evaluations));
    ceres::GradientProblemSolver::Summary summary;
    std::vector<double> x = r.x;
    ceres::Solve(opt, problem, x.data(), &summary);

    for (std::size_t k = 1; k < summary.iterations.size(); ++k) {
      if (summary.iterations[k].step_is_successful) r.history.push_back(summary.iterations[k].cost);
    }
    if (!summary.iterations.empty()) r.iterations += summary.iterations.size() - 1;
    if (summary.final_cost <= r.f && std::isfinite(summary.final_cost)) {
      r.x = x;
      r.f = f(r.x, g);
      ++r.evaluations;
      r.grad_inf = max_abs(g);
    }
    r.message = summary.message;
    if (summary.termination_type == ceres::CONVERGENCE && r.grad_inf < options.tol) {
      r.converged = true;
      break;
    }
    if (summary.termination_type == ceres::NO_CONVERGENCE) continue;

    // Line search failed: backtracking steepest descent from the best point.
    if (r.fallback_steps >= options.max_fallbacks || r.iterations >= options.max_iter) break;
    ++r.fallback_steps;
    ++r.iterations;
    double t = 1.0 / std::max(1.0, std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0)));
    bool moved = false;
    std::vector<double> trial(n), gt(n);
    for (int k = 0; k < 40 && !moved; ++k, t *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = r.x[i] - t * g[i];
      double ft = f(trial, gt);
      ++r.evaluations;
      if (std::isfinite(ft) && ft < r.f - 1e-4 * t * std::inner_product(g.begin(), g.end(), g.begin(), 0.0)) {
        r.x = trial;
        r.f = ft;
        g = gt;
        r.grad_inf = max_abs(g);
        r.history.push_back(r.f);
        moved = true;
      }
    }
    if (!moved) {
      r.message = "steepest-descent fallback made no progress";
      break;
    }
  }
  return r;
}

BaselineResult solve_instance(const FemSystem& sys, const BaselineOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 2 * sys.config().steps;
  ObjectiveFn f = [&sys](std::span<const double> x, std::span<double> grad) {
    ObjectiveGrad og = objective_and_grad(sys, x);
    std::copy(og.grad.begin(), og.grad.end(), grad.begin());
    return og.J;
  };

  BaselineResult out;
  out.J_zero = objective(sys, std::vector<double>(n, 0.0));
  for (std::size_t start = 0; start <= options.restarts; ++start) {
    std::vector<double> x0(n, 0.0);
    if (start > 0) {
      std::mt19937_64 rng(derive_seed(options.seed, start));
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : x0) v = normal(rng);
    }
    LbfgsResult r = minimize_lbfgs(f, std::move(x0), options.lbfgs);
    out.start_objectives.push_back(r.f);
    if (start == 0 || r.f < out.best.f) {
      out.best = std::move(r);
      out.best_start = start;
    }
  }
  out.controls = out.best.x;
  out.J = out.best.f;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double suboptimality(double J_method, double J_baseline) {
  if (!std::isfinite(J_method) || !std::isfinite(J_baseline)) {
    throw NumericError("suboptimality: non-finite objective");
  }
  return J_method - J_baseline;
}

void write_baseline_cache(const std::string& path, const std::vector<BaselineCacheEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("write_baseline_cache: cannot open " + path);
  os << "setup,x1,x2,v,n,steps,J,iterations,grad_inf,wall_seconds,converged\n";
  os << std::setprecision(17);
  for (const auto& e : entries) {
    os << to_string(e.params.setup) << ',' << e.params.x1 << ',' << e.params.x2 << ','
       << e.params.v << ',' << e.n << ',' << e.steps << ',' << e.J << ',' << e.iterations << ','
       << e.grad_inf << ',' << e.wall_seconds << ',' << (e.converged ? 1 : 0) << '\n';
  }
  if (!os) throw Error("write_baseline_cache: write failed for " + path);
}

std::vector<BaselineCacheEntry> read_baseline_cache(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_baseline_cache: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("setup,x1,x2,v,n,steps,J", 0) != 0) {
    throw Error("read_baseline_cache: " + path + " has an unexpected header");
  }
  std::vector<BaselineCacheEntry> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) c.push_back(cell);
    if (c.size() != 11) throw Error("read_baseline_cache: malformed row in " + path);
    BaselineCacheEntry e;
    e.params = ProblemParams{std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), parse_setup(c[0])};
    e.n = std::stoull(c[4]);
    e.steps = std::stoull(c[5]);
    e.J = std::stod(c[6]);
    e.iterations = std::stoull(c[7]);
    e.grad_inf = std::stod(c[8]);
    e.wall_seconds = std::stod(c[9]);
    e.converged = c[10] == "1";
    out.push_back(e);
  }
  return out;
}

std::optional<BaselineCacheEntry> find_baseline(const std::vector<BaselineCacheEntry>& entries,
                                                const ProblemParams& y, std::size_t n,
                                                std::size_t steps) {
  for (const auto& e : entries) {
    if (e.params == y && e.n == n && e.steps == steps) return e;
  }
  return std::nullopt;
}

}  // namespace hjbctl
