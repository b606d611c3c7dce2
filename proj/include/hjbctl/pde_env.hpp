#ifndef HJBCTL_PDE_ENV_HPP_
#define HJBCTL_PDE_ENV_HPP_

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hjbctl/sparse.hpp"
#include "hjbctl/tape.hpp"

namespace hjbctl {

enum class Setup { kHorizontal, kSinusoidal };

std::string to_string(Setup setup);
Setup parse_setup(const std::string& name);
// Number of parameter components fed to policies: 2 (horizontal) or 3.
std::size_t param_dim(Setup setup);

struct ProblemParams {
  double x1 = 0.175;  // source x1-location
  double x2 = 0.5;    // source x2-location
  double v = 0.0;     // velocity phase; only meaningful for sinusoidal
  Setup setup = Setup::kHorizontal;

  std::vector<double> as_vector() const;
  friend bool operator==(const ProblemParams&, const ProblemParams&) = default;
};

// Uniform draws: x1 ~ U(0.1, 0.25), x2 ~ U(0.2, 0.8), v ~ U(-0.425, 0).
// v is drawn (and the generator advanced) only for the sinusoidal setup.
ProblemParams sample_params(Setup setup, std::mt19937_64& rng);

std::array<double, 2> velocity(const ProblemParams& y, double x1, double x2);

// Uniform n x n node grid on [0,1]^2; node (i, j) sits at (i h, j h) with
// h = 1/(n-1) and flat index j*n + i.
struct GridSpec {
  std::size_t n = 32;

  double h() const { return 1.0 / static_cast<double>(n - 1); }
  double coord(std::size_t i) const { return static_cast<double>(i) * h(); }
  std::size_t nodes() const { return n * n; }
  std::size_t index(std::size_t i, std::size_t j) const { return j * n + i; }
  double x1(std::size_t node) const { return coord(node % n); }
  double x2(std::size_t node) const { return coord(node / n); }
  bool in_target(std::size_t node) const { return x1(node) > 0.75; }
};

struct ProblemConfig {
  Setup setup = Setup::kHorizontal;
  std::size_t n = 32;
  double kappa = 0.008;
  double c = 5.0;
  double sigma_s = 0.01;
  double rho = 40.0;
  std::size_t steps = 25;
  double ds = 0.02;
  // Nominal final time. Informational: the simulated horizon is steps * ds.
  double horizon = 0.75;
  double alpha0 = 0.5;
  // Multiplies the velocity field; 0 gives pure diffusion.
  double velocity_scale = 1.0;
  // Adds streamline diffusion to the advection matrix; without it the
  // Galerkin advection operator is unusable at the cell Peclet numbers of
  // the horizontal setup.
  bool streamline_diffusion = true;
  // Upwind inflow term int_{inflow} |eps . n| a w: clean fluid enters
  // through inflow boundaries. Without it the convective form lets inflow
  // boundaries inject mass.
  bool inflow_boundary = true;

  // Horizontal: c = 5, sigma_s = 0.01. Sinusoidal: c = 0.5, sigma_s = 0.025.
  static ProblemConfig defaults(Setup setup);
  GridSpec grid() const { return GridSpec{n}; }
};

// Sink profile Q(x1, x2; alpha) = 25 exp(-(|x1 - 0.6|/0.025 + |x2 - alpha|/0.15)).
double sink_density(double x1, double x2, double alpha);
double source_density(const ProblemConfig& cfg, const ProblemParams& y,
                      double x1, double x2);

// Global count of forward implicit-Euler solves.
std::atomic<std::uint64_t>& pde_solve_counter();

// While any instance is alive, forward solves are not counted. Used for
// validation rollouts, which measure a policy rather than train it.
class UncountedSolves {
 public:
  UncountedSolves();
  ~UncountedSolves();
  UncountedSolves(const UncountedSolves&) = delete;
  UncountedSolves& operator=(const UncountedSolves&) = delete;
};

// P1 finite-element discretization of
//   da/ds = kappa Lap(a) - eps_y . grad(a) + phi_y + u1 Q(alpha)
// on the structured triangulation. Boundaries are zero-flux except for the
// upwind inflow term (see ProblemConfig). Time stepping uses the lumped
// (row-sum) mass, so the control column of the semi-discrete system is
// M_L^{-1} q(alpha).
class FemSystem {
 public:
  static std::shared_ptr<const FemSystem> assemble(const ProblemConfig& cfg,
                                                   const ProblemParams& y);

  const ProblemConfig& config() const { return cfg_; }
  const ProblemParams& params() const { return params_; }
  GridSpec grid() const { return cfg_.grid(); }
  std::size_t nodes() const { return grid().nodes(); }
  // Concentrations plus sink location.
  std::size_t state_dim() const { return nodes() + 1; }

  const SparseMatrix& mass() const { return mass_; }
  const std::vector<double>& lumped_mass() const { return lumped_; }
  const SparseMatrix& stiffness() const { return stiffness_; }
  // Galerkin advection plus streamline diffusion and inflow term (when enabled).
  const SparseMatrix& advection() const { return advection_; }
  // kappa K + C
  const SparseMatrix& transport() const { return transport_; }
  const std::vector<double>& source_load() const { return source_; }
  const LinearSolver& implicit_operator() const { return *solver_; }
  // rho h^2 on target nodes, zero elsewhere.
  const std::vector<double>& terminal_weights() const { return terminal_weights_; }

  // Sink load q_i(alpha) = int Q(x; alpha) psi_i(x) dx with psi_i the
  // tensor-product hat of node i; separable, so each factor is an exact 1D
  // quadrature split at the kernel's kink. Smooth in alpha.
  std::vector<double> sink_load(double alpha) const;
  // M_L^{-1} q(alpha), the a-block of g.
  std::vector<double> sink_profile(double alpha) const;
  ad::Var sink_profile(ad::Var alpha) const;

  // Continuous-time drift for the concentrations: M_L^{-1}(phi - (kappa K + C) a).
  std::vector<double> drift(const std::vector<double>& a) const;
  ad::Var drift(ad::Var a) const;

 private:
  FemSystem() = default;

  ProblemConfig cfg_;
  ProblemParams params_;
  SparseMatrix mass_;
  std::vector<double> lumped_;
  std::vector<double> inv_lumped_;
  SparseMatrix stiffness_;
  SparseMatrix advection_;
  SparseMatrix transport_;
  std::vector<double> source_;
  std::vector<double> terminal_weights_;
  std::vector<double> sink_x1_;  // 25 int exp(-|x1 - 0.6|/0.025) psi_i(x1) dx1
  std::unique_ptr<LinearSolver> solver_;
};

using FemSystemPtr = std::shared_ptr<const FemSystem>;

struct State {
  std::vector<double> a;
  double alpha = 0.5;

  // z = (a, alpha)
  std::vector<double> z() const;
};

State initial_state(const FemSystem& sys);

// alpha' = clamp(alpha + u2 ds, 0, 1), then
// (M_L + ds (kappa K + C)) a' = M_L a + ds (phi + u1 q(alpha')).
State step(const FemSystem& sys, const State& z, std::array<double, 2> u);

struct TapedState {
  ad::Var a;
  ad::Var alpha;
};
TapedState step(const FemSystem& sys, const TapedState& z, ad::Var u1, ad::Var u2);

double running_cost(std::array<double, 2> u, double ds);
double terminal_cost(const FemSystem& sys, const std::vector<double>& a);
ad::Var terminal_cost(const FemSystem& sys, ad::Var a);
// Gradient of the terminal cost w.r.t. z = (a, alpha); the alpha entry is 0.
std::vector<double> terminal_cost_grad(const FemSystem& sys, const std::vector<double>& a);

struct EpisodeRecord {
  std::vector<double> times;            // s_0..s_N
  std::vector<State> states;            // z_0..z_N
  std::vector<std::array<double, 2>> controls;  // u_0..u_{N-1}
  std::vector<double> rewards;          // r_0..r_N; r_N is the terminal cost
  double running = 0.0;
  double terminal = 0.0;
  double objective = 0.0;
  double ds = 0.0;

  std::size_t steps() const { return controls.size(); }
  // Objective recomputed from stored controls and final state.
  double recompute_objective(const FemSystem& sys) const;
};

// Control for time s and state z of the problem `sys` (parameters via
// sys.params()).
using Policy =
    std::function<std::array<double, 2>(const FemSystem& sys, double s, const State& z)>;

EpisodeRecord rollout(const FemSystem& sys, const Policy& policy);

// Fixed validation grid: x1 in {0.125, 0.225} x x2 in {0.25, 0.4, 0.5, 0.6,
// 0.75}, and for the sinusoidal setup v in {-0.35, -0.2125, -0.1}.
std::vector<ProblemParams> validation_params(Setup setup);
std::vector<FemSystemPtr> assemble_all(const ProblemConfig& cfg,
                                       const std::vector<ProblemParams>& params);
// Objective of `policy` on each system, in parallel and without counting
// solves. The policy must be safe to call concurrently.
std::vector<double> evaluate_policy(const std::vector<FemSystemPtr>& systems,
                                    const Policy& policy);

// Episode CSV: s,alpha,u1,u2,r with one row per time point.
void write_episode_csv(const EpisodeRecord& ep, const std::string& path);
// Concentration frames: "HJBGRID1", u64 nx, u64 ny, u64 frames, then per
// frame a double time followed by nx*ny doubles (x1 fastest).
void write_grid_snapshots(const EpisodeRecord& ep, const GridSpec& grid,
                          const std::string& path);

}  // namespace hjbctl

#endif  // HJBCTL_PDE_ENV_HPP_
