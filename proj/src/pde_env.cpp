#include "hjbctl/pde_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "hjbctl/parallel.hpp"

namespace hjbctl {

namespace {
constexpr double kSinkX1 = 0.6;
constexpr double kSinkWidthX1 = 0.025;
constexpr double kSinkWidthX2 = 0.15;
}  // namespace

std::string to_string(Setup setup) {
  return setup == Setup::kHorizontal ? "horizontal" : "sinusoidal";
}

Setup parse_setup(const std::string& name) {
  if (name == "horizontal") return Setup::kHorizontal;
  if (name == "sinusoidal") return Setup::kSinusoidal;
  throw ConfigError("unknown setup '" + name + "' (expected horizontal|sinusoidal)");
}

std::size_t param_dim(Setup setup) { return setup == Setup::kHorizontal ? 2 : 3; }

std::vector<double> ProblemParams::as_vector() const {
  if (setup == Setup::kHorizontal) return {x1, x2};
  return {x1, x2, v};
}

ProblemParams sample_params(Setup setup, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux1(0.1, 0.25), ux2(0.2, 0.8), uv(-0.425, 0.0);
  ProblemParams y;
  y.setup = setup;
  y.x1 = ux1(rng);
  y.x2 = ux2(rng);
  y.v = setup == Setup::kSinusoidal ? uv(rng) : 0.0;
  return y;
}

std::array<double, 2> velocity(const ProblemParams& y, double x1, double /*x2*/) {
  if (y.setup == Setup::kHorizontal) return {25.0, 0.0};
  const double wave = std::cos(1.1 - x1) * std::sin(4.0 * std::numbers::pi * (x1 - y.v));
  const double radicand = 0.9 * 0.9 - (0.75 * wave) * (0.75 * wave);
  if (radicand < 0.0) throw NumericError("velocity: negative radicand");
  return {(1.0 + x1) * std::sqrt(radicand), -0.9 * wave};
}

ProblemConfig ProblemConfig::defaults(Setup setup) {
  ProblemConfig cfg;
  cfg.setup = setup;
  if (setup == Setup::kSinusoidal) {
    cfg.c = 0.5;
    cfg.sigma_s = 0.025;
  }
  return cfg;
}

double sink_density(double x1, double x2, double alpha) {
  return 25.0 * std::exp(-(std::abs(x1 - kSinkX1) / kSinkWidthX1 + std::abs(x2 - alpha) / kSinkWidthX2));
}

double source_density(const ProblemConfig& cfg, const ProblemParams& y, double x1,
                      double x2) {
  return (cfg.c / cfg.sigma_s) *
         std::exp(-(std::abs(x1 - y.x1) + std::abs(x2 - y.x2)) / cfg.sigma_s);
}

std::atomic<std::uint64_t>& pde_solve_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

namespace {
std::atomic<int> g_uncounted{0};

void count_solve() {
  if (g_uncounted.load() == 0) pde_solve_counter().fetch_add(1);
}
}  // namespace

UncountedSolves::UncountedSolves() { g_uncounted.fetch_add(1); }
UncountedSolves::~UncountedSolves() { g_uncounted.fetch_sub(1); }

namespace {

struct Element {
  std::array<std::size_t, 3> nodes;
  std::array<double, 3> x;
  std::array<double, 3> y;
  double area;
  std::array<double, 3> bx;  // d(lambda_k)/dx1
  std::array<double, 3> by;  // d(lambda_k)/dx2
};

std::vector<Element> triangulate(const GridSpec& g) {
  std::vector<Element> elems;
  elems.reserve(2 * (g.n - 1) * (g.n - 1));
  auto make = [&](std::array<std::size_t, 3> nd) {
    Element e;
    e.nodes = nd;
    for (int k = 0; k < 3; ++k) {
      e.x[k] = g.x1(nd[k]);
      e.y[k] = g.x2(nd[k]);
    }
    double det = (e.x[1] - e.x[0]) * (e.y[2] - e.y[0]) - (e.x[2] - e.x[0]) * (e.y[1] - e.y[0]);
    e.area = 0.5 * std::abs(det);
    e.bx = {(e.y[1] - e.y[2]) / det, (e.y[2] - e.y[0]) / det, (e.y[0] - e.y[1]) / det};
    e.by = {(e.x[2] - e.x[1]) / det, (e.x[0] - e.x[2]) / det, (e.x[1] - e.x[0]) / det};
    elems.push_back(e);
  };
  for (std::size_t j = 0; j + 1 < g.n; ++j) {
    for (std::size_t i = 0; i + 1 < g.n; ++i) {
      std::size_t p00 = g.index(i, j), p10 = g.index(i + 1, j);
      std::size_t p01 = g.index(i, j + 1), p11 = g.index(i + 1, j + 1);
      make({p00, p10, p11});
      make({p00, p11, p01});
    }
  }
  return elems;
}

// Integral over [lo, hi] of exp(-|x - c|/w) psi(x), psi the hat of node xk
// with spacing h, and its derivative in c. Pieces are split at c so the
// 8-point Gauss-Legendre rule only sees smooth integrands.
std::array<double, 2> kernel_moment(double lo, double hi, double c, double w, double xk,
                                    double h) {
  static constexpr std::array<double, 8> kX = {
      -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
      0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
  static constexpr std::array<double, 8> kW = {
      0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
      0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
  std::array<double, 2> acc{0.0, 0.0};
  auto piece = [&](double a, double b) {
    if (b <= a) return;
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (std::size_t k = 0; k < kX.size(); ++k) {
      const double x = mid + half * kX[k];
      const double psi = 1.0 - std::abs(x - xk) / h;
      const double e = std::exp(-std::abs(x - c) / w) * psi * half * kW[k];
      acc[0] += e;
      acc[1] += (x > c ? 1.0 : -1.0) * e / w;
    }
  };
  if (c > lo && c < hi) {
    piece(lo, c);
    piece(c, hi);
  } else {
    piece(lo, hi);
  }
  return acc;
}

// Load of the 1D kernel exp(-|x - c|/w) against every hat of an n-node grid.
void hat_loads(std::size_t n, double c, double w, std::vector<double>& value,
               std::vector<double>* dc) {
  const double h = 1.0 / static_cast<double>(n - 1);
  value.assign(n, 0.0);
  if (dc) dc->assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double xk = static_cast<double>(k) * h;
    for (double side : {-1.0, 1.0}) {
      const double lo = side < 0 ? xk - h : xk, hi = side < 0 ? xk : xk + h;
      if (lo < -1e-12 || hi > 1.0 + 1e-12) continue;
      auto m = kernel_moment(lo, hi, c, w, xk, h);
      value[k] += m[0];
      if (dc) (*dc)[k] += m[1];
    }
  }
}

// Load vector of a density by composite centroid quadrature on s*s
// sub-triangles per element.
std::vector<double> load_vector(const GridSpec& g, const std::vector<Element>& elems,
                                const std::function<double(double, double)>& f,
                                std::size_t s) {
  std::vector<double> load(g.nodes(), 0.0);
  const double sd = static_cast<double>(s);
  for (const Element& e : elems) {
    const double w = e.area / (sd * sd);
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    auto visit = [&](double l1, double l2) {
      double l0 = 1.0 - l1 - l2;
      double px = l0 * e.x[0] + l1 * e.x[1] + l2 * e.x[2];
      double py = l0 * e.y[0] + l1 * e.y[1] + l2 * e.y[2];
      double fv = f(px, py) * w;
      acc[0] += fv * l0;
      acc[1] += fv * l1;
      acc[2] += fv * l2;
    };
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; i + j < s; ++j) {
        visit((static_cast<double>(i) + 1.0 / 3.0) / sd, (static_cast<double>(j) + 1.0 / 3.0) / sd);
        if (i + j + 2 <= s) {
          visit((static_cast<double>(i) + 2.0 / 3.0) / sd, (static_cast<double>(j) + 2.0 / 3.0) / sd);
        }
      }
    }
    for (int k = 0; k < 3; ++k) load[e.nodes[k]] += acc[k];
  }
  return load;
}

}  // namespace

std::shared_ptr<const FemSystem> FemSystem::assemble(const ProblemConfig& cfg,
                                                     const ProblemParams& y) {
  if (cfg.n < 4) throw ConfigError("FemSystem: grid must have at least 4 nodes per side");
  if (!(cfg.ds > 0.0) || cfg.steps == 0) throw ConfigError("FemSystem: need ds > 0 and steps >= 1");
  if (y.setup != cfg.setup) throw ConfigError("FemSystem: parameter setup does not match config");
  std::shared_ptr<FemSystem> sys(new FemSystem());
  sys->cfg_ = cfg;
  sys->params_ = y;
  const GridSpec g = cfg.grid();
  const std::size_t nn = g.nodes();
  const auto elems = triangulate(g);
  auto field = [&](double x1, double x2) {
    std::array<double, 2> v = velocity(y, x1, x2);
    return std::array<double, 2>{cfg.velocity_scale * v[0], cfg.velocity_scale * v[1]};
  };

  std::vector<Triplet> mt, kt, ct;
  mt.reserve(9 * elems.size());
  kt.reserve(9 * elems.size());
  ct.reserve(9 * elems.size());
  for (const Element& e : elems) {
    // Edge-midpoint rule, exact for quadratics; lambda_k is 0 or 1/2 there.
    std::array<std::array<double, 3>, 3> lam{};
    std::array<std::array<double, 2>, 3> vel{};
    for (int q = 0; q < 3; ++q) {
      int a = q, b = (q + 1) % 3;
      lam[q][a] = 0.5;
      lam[q][b] = 0.5;
      vel[q] = field(0.5 * (e.x[a] + e.x[b]), 0.5 * (e.y[a] + e.y[b]));
    }
    // Streamline diffusion: tau (eps . grad w)(eps . grad a) with the
    // optimal 1D weighting tau = h/(2|eps|) (coth Pe - 1/Pe).
    double tau = 0.0;
    std::array<double, 2> vc = field((e.x[0] + e.x[1] + e.x[2]) / 3.0,
                                        (e.y[0] + e.y[1] + e.y[2]) / 3.0);
    std::array<double, 3> stream{};
    if (cfg.streamline_diffusion) {
      double speed = std::hypot(vc[0], vc[1]);
      if (speed > 0.0) {
        double he = std::sqrt(2.0 * e.area);
        double pe = speed * he / (2.0 * cfg.kappa);
        double xi = pe > 1e-3 ? 1.0 / std::tanh(pe) - 1.0 / pe : pe / 3.0;
        tau = he / (2.0 * speed) * xi;
      }
      for (int k = 0; k < 3; ++k) stream[k] = vc[0] * e.bx[k] + vc[1] * e.by[k];
    }
    for (int k = 0; k < 3; ++k) {
      for (int l = 0; l < 3; ++l) {
        double m = e.area / 12.0 * (k == l ? 2.0 : 1.0);
        double kk = e.area * (e.bx[k] * e.bx[l] + e.by[k] * e.by[l]);
        double cc = 0.0;
        for (int q = 0; q < 3; ++q) {
          cc += (e.area / 3.0) * lam[q][k] * (vel[q][0] * e.bx[l] + vel[q][1] * e.by[l]);
        }
        cc += tau * e.area * stream[k] * stream[l];
        mt.push_back({e.nodes[k], e.nodes[l], m});
        kt.push_back({e.nodes[k], e.nodes[l], kk});
        ct.push_back({e.nodes[k], e.nodes[l], cc});
      }
    }
  }
  if (cfg.inflow_boundary) {
    // int_{inflow} |eps . n| a w ds, two-point Gauss per boundary edge.
    const double gp = 0.5 / std::sqrt(3.0);
    auto edge = [&](std::size_t p, std::size_t q, double nx, double ny) {
      const double len = g.h();
      for (double t : {0.5 - gp, 0.5 + gp}) {
        const double px = (1.0 - t) * g.x1(p) + t * g.x1(q);
        const double py = (1.0 - t) * g.x2(p) + t * g.x2(q);
        std::array<double, 2> v = field(px, py);
        const double inflow = std::max(0.0, -(v[0] * nx + v[1] * ny));
        if (inflow == 0.0) continue;
        const std::array<double, 2> lam{1.0 - t, t};
        const std::array<std::size_t, 2> nd{p, q};
        for (int k = 0; k < 2; ++k) {
          for (int l = 0; l < 2; ++l) {
            ct.push_back({nd[k], nd[l], 0.5 * len * inflow * lam[k] * lam[l]});
          }
        }
      }
    };
    for (std::size_t k = 0; k + 1 < g.n; ++k) {
      edge(g.index(k, 0), g.index(k + 1, 0), 0.0, -1.0);
      edge(g.index(k, g.n - 1), g.index(k + 1, g.n - 1), 0.0, 1.0);
      edge(g.index(0, k), g.index(0, k + 1), -1.0, 0.0);
      edge(g.index(g.n - 1, k), g.index(g.n - 1, k + 1), 1.0, 0.0);
    }
  }
  sys->mass_ = SparseMatrix::from_triplets(nn, nn, std::move(mt));
  sys->mass_.check_symmetric(1e-15);
  sys->stiffness_ = SparseMatrix::from_triplets(nn, nn, std::move(kt));
  sys->stiffness_.check_symmetric(1e-12);
  sys->advection_ = SparseMatrix::from_triplets(nn, nn, std::move(ct));
  sys->lumped_ = sys->mass_.row_sums();
  sys->inv_lumped_.resize(nn);
  for (std::size_t i = 0; i < nn; ++i) sys->inv_lumped_[i] = 1.0 / sys->lumped_[i];
  sys->transport_ = sys->advection_.add(sys->stiffness_, cfg.kappa);

  // Sub-element resolution fine enough to resolve the source width.
  const std::size_t sub = std::max<std::size_t>(
      4, static_cast<std::size_t>(std::ceil(3.0 * g.h() / cfg.sigma_s)));
  sys->source_ = load_vector(
      g, elems, [&](double a, double b) { return source_density(cfg, y, a, b); }, sub);

  sys->terminal_weights_.assign(nn, 0.0);
  for (std::size_t i = 0; i < nn; ++i) {
    if (g.in_target(i)) sys->terminal_weights_[i] = cfg.rho * g.h() * g.h();
  }

  hat_loads(cfg.n, kSinkX1, kSinkWidthX1, sys->sink_x1_, nullptr);
  for (double& v : sys->sink_x1_) v *= 25.0;

  SparseMatrix op = SparseMatrix::diagonal(sys->lumped_).add(sys->transport_, cfg.ds);
  sys->solver_ = std::make_unique<LinearSolver>(op);
  return sys;
}

std::vector<double> FemSystem::sink_load(double alpha) const {
  const std::size_t n = cfg_.n;
  std::vector<double> bx2;
  hat_loads(n, alpha, kSinkWidthX2, bx2, nullptr);
  std::vector<double> q(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) q[j * n + i] = sink_x1_[i] * bx2[j];
  }
  return q;
}

std::vector<double> FemSystem::sink_profile(double alpha) const {
  std::vector<double> q = sink_load(alpha);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] *= inv_lumped_[i];
  return q;
}

ad::Var FemSystem::sink_profile(ad::Var alpha) const {
  if (alpha.size() != 1) throw DimensionError("sink_profile: alpha must be scalar");
  const std::size_t n = cfg_.n;
  std::vector<double> bx2, dbx2;
  hat_loads(n, alpha.item(), kSinkWidthX2, bx2, &dbx2);
  Tensor q(n * n), dq(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = j * n + i;
      q[k] = sink_x1_[i] * bx2[j] * inv_lumped_[k];
      dq[k] = sink_x1_[i] * dbx2[j] * inv_lumped_[k];
    }
  }
  return alpha.tape().record(ad::Op::kCustom, std::move(q), {alpha},
                             [dq = std::move(dq)](ad::Tape& t, std::uint32_t self) {
                               if (Tensor* ga = t.accumulator(t.parent(self, 0))) {
                                 const Tensor& g = t.upstream(self);
                                 double s = 0.0;
                                 for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * dq[i];
                                 (*ga)[0] += s;
                               }
                             });
}

std::vector<double> FemSystem::drift(const std::vector<double>& a) const {
  std::vector<double> ta = transport_ * std::span<const double>(a);
  for (std::size_t i = 0; i < ta.size(); ++i) ta[i] = (source_[i] - ta[i]) * inv_lumped_[i];
  return ta;
}

ad::Var FemSystem::drift(ad::Var a) const {
  Tensor neg_inv(inv_lumped_.size());
  Tensor shift(inv_lumped_.size());
  for (std::size_t i = 0; i < neg_inv.size(); ++i) {
    neg_inv[i] = -inv_lumped_[i];
    shift[i] = source_[i] * inv_lumped_[i];
  }
  return ad::affine_const(ad::matvec(transport_, a), neg_inv, shift);
}

std::vector<double> State::z() const {
  std::vector<double> out = a;
  out.push_back(alpha);
  return out;
}

State initial_state(const FemSystem& sys) {
  return State{std::vector<double>(sys.nodes(), 0.0), sys.config().alpha0};
}

State step(const FemSystem& sys, const State& z, std::array<double, 2> u) {
  if (!std::isfinite(u[0]) || !std::isfinite(u[1])) throw NumericError("step: non-finite control");
  if (z.a.size() != sys.nodes()) throw DimensionError("step: state size mismatch");
  const double ds = sys.config().ds;
  State next;
  next.alpha = std::clamp(z.alpha + u[1] * ds, 0.0, 1.0);
  std::vector<double> q = sys.sink_profile(next.alpha);
  const auto& m = sys.lumped_mass();
  const auto& phi = sys.source_load();
  std::vector<double> rhs(z.a.size());
  for (std::size_t i = 0; i < rhs.size(); ++i) {
    rhs[i] = m[i] * (z.a[i] + ds * u[0] * q[i]) + ds * phi[i];
  }
  next.a = sys.implicit_operator().solve(rhs);
  count_solve();
  return next;
}

TapedState step(const FemSystem& sys, const TapedState& z, ad::Var u1, ad::Var u2) {
  const double ds = sys.config().ds;
  TapedState next;
  next.alpha = ad::clamp(ad::add(z.alpha, ad::scale(u2, ds)), 0.0, 1.0);
  ad::Var q = sys.sink_profile(next.alpha);
  ad::Var a_plus = ad::add(z.a, ad::scale(ad::scale_by(q, u1), ds));
  Tensor m = Tensor::from(sys.lumped_mass());
  Tensor shift = Tensor::from(sys.source_load());
  for (std::size_t i = 0; i < shift.size(); ++i) shift[i] *= ds;
  ad::Var rhs = ad::affine_const(a_plus, m, shift);
  next.a = ad::solve(sys.implicit_operator(), rhs);
  count_solve();
  return next;
}

double running_cost(std::array<double, 2> u, double ds) {
  return 0.5 * ds * (u[0] * u[0] + u[1] * u[1]);
}

double terminal_cost(const FemSystem& sys, const std::vector<double>& a) {
  const auto& w = sys.terminal_weights();
  double g = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) g += w[i] * std::max(a[i], 0.0);
  return g;
}

ad::Var terminal_cost(const FemSystem& sys, ad::Var a) {
  return ad::sum(ad::mul_const(ad::relu(a), Tensor::from(sys.terminal_weights())));
}

std::vector<double> terminal_cost_grad(const FemSystem& sys, const std::vector<double>& a) {
  const auto& w = sys.terminal_weights();
  std::vector<double> g(a.size() + 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = a[i] > 0.0 ? w[i] : 0.0;
  return g;
}

double EpisodeRecord::recompute_objective(const FemSystem& sys) const {
  double run = 0.0;
  for (const auto& u : controls) run += running_cost(u, ds);
  return run + terminal_cost(sys, states.back().a);
}

EpisodeRecord rollout(const FemSystem& sys, const Policy& policy) {
  const auto& cfg = sys.config();
  EpisodeRecord ep;
  ep.ds = cfg.ds;
  State z = initial_state(sys);
  double s = 0.0;
  ep.times.push_back(s);
  ep.states.push_back(z);
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    std::array<double, 2> u = policy(sys, s, z);
    double r = running_cost(u, cfg.ds);
    z = step(sys, z, u);
    s = static_cast<double>(i + 1) * cfg.ds;
    ep.controls.push_back(u);
    ep.rewards.push_back(r);
    ep.running += r;
    ep.times.push_back(s);
    ep.states.push_back(z);
  }
  ep.terminal = terminal_cost(sys, z.a);
  ep.rewards.push_back(ep.terminal);
  ep.objective = ep.running + ep.terminal;
  return ep;
}

std::vector<ProblemParams> validation_params(Setup setup) {
  std::vector<double> vs = setup == Setup::kSinusoidal
                               ? std::vector<double>{-0.35, -0.2125, -0.1}
                               : std::vector<double>{0.0};
  std::vector<ProblemParams> out;
  for (double v : vs) {
    for (double x1 : {0.125, 0.225}) {
      for (double x2 : {0.25, 0.4, 0.5, 0.6, 0.75}) {
        out.push_back(ProblemParams{x1, x2, v, setup});
      }
    }
  }
  return out;
}

std::vector<FemSystemPtr> assemble_all(const ProblemConfig& cfg,
                                       const std::vector<ProblemParams>& params) {
  std::vector<FemSystemPtr> out(params.size());
  parallel_for(params.size(), [&](std::size_t i) { out[i] = FemSystem::assemble(cfg, params[i]); });
  return out;
}

std::vector<double> evaluate_policy(const std::vector<FemSystemPtr>& systems,
                                    const Policy& policy) {
  UncountedSolves guard;
  std::vector<double> out(systems.size());
  parallel_for(systems.size(), [&](std::size_t i) { out[i] = rollout(*systems[i], policy).objective; });
  return out;
}

void write_episode_csv(const EpisodeRecord& ep, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("write_episode_csv: cannot open " + path);
  os << "s,alpha,u1,u2,r\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ep.times.size(); ++i) {
    double u1 = i < ep.controls.size() ? ep.controls[i][0] : 0.0;
    double u2 = i < ep.controls.size() ? ep.controls[i][1] : 0.0;
    os << ep.times[i] << ',' << ep.states[i].alpha << ',' << u1 << ',' << u2 << ','
       << ep.rewards[i] << '\n';
  }
}

void write_grid_snapshots(const EpisodeRecord& ep, const GridSpec& grid,
                          const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("write_grid_snapshots: cannot open " + path);
  const char magic[8] = {'H', 'J', 'B', 'G', 'R', 'I', 'D', '1'};
  os.write(magic, 8);
  std::uint64_t header[3] = {grid.n, grid.n, ep.states.size()};
  os.write(reinterpret_cast<const char*>(header), sizeof header);
  for (std::size_t f = 0; f < ep.states.size(); ++f) {
    double s = ep.times[f];
    os.write(reinterpret_cast<const char*>(&s), sizeof s);
    const auto& a = ep.states[f].a;
    os.write(reinterpret_cast<const char*>(a.data()),
             static_cast<std::streamsize>(a.size() * sizeof(double)));
  }
  if (!os) throw Error("write_grid_snapshots: write failed for " + path);
}

}  // namespace hjbctl
