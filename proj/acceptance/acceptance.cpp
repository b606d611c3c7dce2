// Acceptance checks. Prints one PASS/FAIL line per criterion, followed by
// indented details. Exits non-zero when a criterion fails that was not
// listed with --expect-fail.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hjbctl/baseline_solver.hpp"
#include "hjbctl/experiment.hpp"
#include "hjbctl/hjb_trainer.hpp"
#include "hjbctl/parallel.hpp"
#include "hjbctl/rl.hpp"

using namespace hjbctl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;
};

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double central(const std::function<double(double)>& f, double h) { return (f(h) - f(-h)) / (2.0 * h); }

double rel_norm(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

ValueNetwork random_net(std::size_t width, std::size_t depth, std::size_t d, std::size_t q,
                        std::uint64_t seed, double scale) {
  ValueNetwork net(width, depth, d, q);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Tensor* p : net.parameters())
    for (double& v : p->values()) v = n(rng);
  return net;
}

ProblemConfig problem(Setup setup, std::size_t n, std::size_t steps) {
  ProblemConfig cfg = ProblemConfig::defaults(setup);
  cfg.n = n;
  cfg.steps = steps;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome a1_gradient_fidelity() {
  Outcome o;
  const ProblemConfig cfg = problem(Setup::kHorizontal, 4, 2);
  auto sys = FemSystem::assemble(cfg, ProblemParams{0.175, 0.45, 0.0, Setup::kHorizontal});
  ValueNetwork net = random_net(4, 2, sys->state_dim(), 2, 101, 0.3);
  const HjbWeights beta{1.0, 1.0, 1.0};
  BatchGradient bg = hjb_batch_gradient(net, {sys.get()}, beta);

  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t p = 0; p < bg.grads.size(); ++p)
    for (std::size_t i = 0; i < bg.grads[p].size(); ++i) all.emplace_back(p, i);
  std::mt19937_64 rng(102);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(24);

  std::vector<double> g, fd;
  double worst = 0.0;
  for (auto [p, i] : all) {
    auto f = [&](double h) {
      ValueNetwork m = net;
      (*m.parameters()[p])[i] += h;
      ad::Tape tape;
      auto w = m.bind(tape, false);
      UncountedSolves quiet;
      return hjb_episode(tape, m, w, *sys, beta).loss.item();
    };
    g.push_back(bg.grads[p][i]);
    fd.push_back(central(f, 1e-6));
    worst = std::max(worst, std::abs(g.back() - fd.back()) / std::max(std::abs(fd.back()), 1e-6));
  }
  const double rel = rel_norm(g, fd);
  o.pass = rel < 1e-4 && worst < 1e-4;
  o.details.push_back(fmt("24 weight components, 4x4 grid, N=2, width 4, depth 2: relative error %.2e (norm), %.2e (worst component)", rel, worst));
  return o;
}

Outcome a2_adjoint_fidelity() {
  Outcome o;
  double worst = 0.0;
  for (Setup setup : {Setup::kHorizontal, Setup::kSinusoidal}) {
    const ProblemConfig cfg = problem(setup, 8, 5);
    const ProblemParams y = setup == Setup::kHorizontal ? ProblemParams{0.175, 0.45, 0.0, setup}
                                                        : ProblemParams{0.175, 0.45, -0.2, setup};
    auto sys = FemSystem::assemble(cfg, y);
    std::mt19937_64 rng(setup == Setup::kHorizontal ? 201 : 202);
    std::normal_distribution<double> n(0.0, 0.5);
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> u(10);
      for (double& v : u) v = n(rng);
      const ObjectiveGrad og = objective_and_grad(*sys, u);
      std::vector<double> fd(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) {
        fd[i] = central([&](double h) {
          std::vector<double> x = u;
          x[i] += h;
          return objective(*sys, x);
        }, 1e-6);
      }
      const double rel = rel_norm(og.grad, fd);
      worst = std::max(worst, rel);
      o.details.push_back(fmt("%s trial %d: relative error %.2e", to_string(setup).c_str(), trial, rel));
    }
  }
  o.pass = worst < 1e-5;
  return o;
}

Outcome a3_conservation() {
  Outcome o;
  ProblemConfig cfg = problem(Setup::kHorizontal, 16, 100);
  cfg.velocity_scale = 0.0;
  cfg.c = 0.0;
  auto sys = FemSystem::assemble(cfg, ProblemParams{0.175, 0.45, 0.0, Setup::kHorizontal});
  std::mt19937_64 rng(301);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  State z{std::vector<double>(sys->nodes()), 0.5};
  for (double& v : z.a) v = u(rng);
  const auto& m = sys->lumped_mass();
  double prev = std::inner_product(m.begin(), m.end(), z.a.begin(), 0.0), worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    z = step(*sys, z, {0.0, 0.0});
    const double total = std::inner_product(m.begin(), m.end(), z.a.begin(), 0.0);
    worst = std::max(worst, std::abs(total - prev));
    prev = total;
  }
  o.pass = worst < 1e-10;
  o.details.push_back(fmt("16x16, 100 steps: max per-step drift of the lumped mass %.2e (total %.6f)", worst, prev));
  return o;
}

Outcome a4_feedback_optimality() {
  Outcome o;
  const ProblemConfig cfg = problem(Setup::kSinusoidal, 8, 25);
  std::mt19937_64 rng(401);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int dominated = 0, matched = 0;
  double worst_gap = 0.0, max_u = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    std::mt19937_64 prng(rng());
    ProblemParams y = sample_params(Setup::kSinusoidal, prng);
    auto sys = FemSystem::assemble(cfg, y);
    ValueNetwork net = random_net(8, 2, sys->state_dim(), 3, rng(), 0.25);
    State z{std::vector<double>(sys->nodes()), 0.1 + 0.8 * unit(rng)};
    for (double& v : z.a) v = 0.5 * unit(rng);
    const double s = 0.5 * unit(rng);

    const std::array<double, 2> us = feedback_control(net, *sys, s, z);
    // Hamiltonian objective p.(f + g u) - |u|^2/2 at p = -grad_z Phi,
    // assembled from the system matrices.
    const InputGradient ig = net.grad_input(NetInput{s, z.z(), y.as_vector()});
    const std::vector<double> f = sys->drift(z.a);
    const std::vector<double> q = sys->sink_profile(z.alpha);
    double pf = 0.0, c1 = 0.0;
    for (std::size_t i = 0; i < sys->nodes(); ++i) {
      pf -= ig.dz[i] * f[i];
      c1 -= ig.dz[i] * q[i];
    }
    const double c2 = -ig.dz.back();
    auto h = [&](double u1, double u2) { return pf + c1 * u1 + c2 * u2 - 0.5 * (u1 * u1 + u2 * u2); };

    const double hs = h(us[0], us[1]);
    bool all = true;
    std::normal_distribution<double> pert(0.0, 0.1);
    for (int k = 0; k < 100; ++k) all = all && hs >= h(us[0] + pert(rng), us[1] + pert(rng));
    dominated += all ? 1 : 0;

    // Dense grid search on [-4, 4]^2 with spacing 0.005.
    double best = -1e300, b1 = 0.0, b2 = 0.0;
    for (int i = -800; i <= 800; ++i) {
      const double u1 = 0.005 * i;
      for (int j = -800; j <= 800; ++j) {
        const double u2 = 0.005 * j;
        const double v = h(u1, u2);
        if (v > best) best = v, b1 = u1, b2 = u2;
      }
    }
    const double gap = std::max(std::abs(b1 - us[0]), std::abs(b2 - us[1]));
    worst_gap = std::max(worst_gap, gap);
    max_u = std::max({max_u, std::abs(us[0]), std::abs(us[1])});
    matched += gap < 1e-2 ? 1 : 0;
  }
  o.pass = dominated == 50 && matched == 50 && max_u < 4.0;
  o.details.push_back(fmt("%d/50 pairs beat all 100 perturbations; %d/50 within 1e-2 of the grid argmax (worst %.2e, max |u| %.3f)",
                          dominated, matched, worst_gap, max_u));
  return o;
}

// dz/ds = a z + b u on the real line.
class ScalarLqr final : public ControlAffineModel {
 public:
  ScalarLqr(double a, double b) : a_(a), b_(b) {}
  std::size_t state_dim() const override { return 1; }
  std::size_t control_dim() const override { return 1; }
  ad::Var drift(double, ad::Var z) const override { return ad::scale(z, a_); }
  ad::Var gain_t(double, ad::Var, ad::Var p) const override { return ad::scale(p, b_); }

 private:
  double a_, b_;
};

Outcome a5_lqr_residual() {
  Outcome o;
  // Running cost u^2/2, terminal cost P_T z^2/2: Phi = P(t) z^2 / 2 with
  // -P' = 2 a P - b^2 P^2, solved through Q = 1/P: Q' = 2 a Q - b^2.
  const double a = 0.7, b = 1.3, T = 1.0, PT = 2.5;
  const double qinf = b * b / (2.0 * a);
  auto P = [&](double t) { return 1.0 / (qinf + (1.0 / PT - qinf) * std::exp(2.0 * a * (t - T))); };
  ScalarLqr model(a, b);
  std::mt19937_64 rng(501);
  std::uniform_real_distribution<double> tt(0.0, T), zz(-2.0, 2.0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double t = tt(rng), z = zz(rng);
    const double p = P(t), dp = -2.0 * a * p + b * b * p * p;
    ad::Tape tape;
    const double r = hjb_residual(model, t, tape.constant(Tensor::scalar(z)), tape.constant(Tensor::scalar(0.5 * dp * z * z)),
                                  tape.constant(Tensor::scalar(p * z)))
                         .item();
    worst = std::max(worst, std::abs(r));
  }
  o.pass = worst < 1e-8;
  o.details.push_back(fmt("100 random (t, z): max |residual| %.2e", worst));
  return o;
}

Outcome a8_rl_properties() {
  using namespace hjbctl::rl;
  Outcome o;
  const ProblemConfig pc = problem(Setup::kHorizontal, 8, 5);
  RlConfig rc;
  rc.conv = {2, 3, 2};
  rc.dense = {8, 8};
  auto s1 = FemSystem::assemble(pc, ProblemParams{0.2, 0.5, 0.0, Setup::kHorizontal});
  auto s2 = FemSystem::assemble(pc, ProblemParams{0.15, 0.3, 0.0, Setup::kHorizontal});
  PpoAgent agent = PpoAgent::create(rc, pc);
  TransitionBatch batch = collect_episodes(agent, {s1.get(), s2.get()}, {1, 2}, rc, true);
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto adv = normalized_advantages(batch.advantages);

  PpoLoss L = ppo_loss(agent, batch, adv, idx, rc, nullptr);
  const bool ratio_one = L.max_ratio_deviation == 0.0;
  o.details.push_back(fmt("PPO ratio at collection weights: max |ratio - 1| = %.1e", L.max_ratio_deviation));

  PpoGrads zg;
  ppo_loss(agent, batch, std::vector<double>(batch.size(), 0.0), idx, rc, &zg);
  bool zero = zg.log_var[0] == 0.0 && zg.log_var[1] == 0.0;
  for (const Tensor& t : zg.actor)
    for (double v : t.values()) zero = zero && v == 0.0;
  o.details.push_back(std::string("zero advantages give a zero actor gradient: ") + (zero ? "yes" : "no"));

  Td3Agent td3 = Td3Agent::create(rc, pc);
  std::mt19937_64 rng(801);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix next(16, static_cast<Eigen::Index>(td3.actor.spec().input_size()));
  for (Eigen::Index i = 0; i < next.rows(); ++i)
    for (Eigen::Index j = 0; j < next.cols(); ++j) next(i, j) = n(rng);
  std::vector<double> rew(16), done(16);
  for (std::size_t i = 0; i < 16; ++i) rew[i] = -std::abs(n(rng)), done[i] = i % 3 == 0 ? 1.0 : 0.0;
  std::array<std::vector<double>, 2> each;
  const auto y = td3_targets(td3, next, rew, done, rc, rng, &each);
  bool twin = true;
  for (std::size_t i = 0; i < y.size(); ++i) {
    twin = twin && y[i] == std::min(each[0][i], each[1][i]);
    if (done[i] == 1.0) twin = twin && y[i] == rew[i];
  }
  o.details.push_back(std::string("TD3 target is the exact twin minimum, and r on terminal transitions: ") + (twin ? "yes" : "no"));

  ConvNet copy = td3.critics[0];
  copy.soft_update(td3.critics[1], 1.0);
  ConvNet keep = td3.critics[0];
  keep.soft_update(td3.critics[1], 0.0);
  const bool soft = copy == td3.critics[1] && keep == td3.critics[0];
  o.details.push_back(std::string("soft update identities (tau = 1 copies, tau = 0 keeps): ") + (soft ? "yes" : "no"));

  bool recursion = true;
  for (const EpisodeRecord& ep : batch.episodes) {
    const auto R = returns_to_go(ep.rewards, 1.0);
    for (std::size_t i = 0; i + 1 < R.size(); ++i) recursion = recursion && R[i] == ep.rewards[i] + R[i + 1];
    recursion = recursion && R.back() == ep.rewards.back();
  }
  o.details.push_back(std::string("R_i = r_i + R_{i+1} holds exactly: ") + (recursion ? "yes" : "no"));
  o.pass = ratio_one && zero && twin && soft && recursion;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Column `col` of a CSV file without its header.
std::vector<std::string> csv_column(const fs::path& p, std::size_t col) {
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  std::vector<std::string> out;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t k = 0; k <= col; ++k) std::getline(ss, cell, ',');
    out.push_back(cell);
  }
  return out;
}

Outcome a9_determinism(const fs::path& work) {
  Outcome o;
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  const std::string base = R"({"setup": "sinusoidal", "seed": 9, "problem": {"n": 8, "steps": 5},
    "validation_indices": [0, 7, 15],
    "hjb": {"iterations": 6, "batch": 3, "pool": 8, "validate_every": 2, "width": 8, "depth": 2, "lr0": 0.01,
            "lr_floor": 0.001},
    "rl": {"max_solves": 200, "validate_every_solves": 80, "envs": 4, "pool": 8, "minibatch": 8,
           "conv": [2, 2, 2], "dense": [8, 8], "td3_batch": 8, "td3_warmup": 20},
    "baseline": {"restarts": 1, "max_iter": 40}})";
  bool all = true;
  for (Method m : {Method::kHjb, Method::kPpo, Method::kTd3, Method::kBaseline}) {
    ExperimentConfig cfg = parse_config(apply_override(base, "method", "\"" + to_string(m) + "\""));
    const std::string name = to_string(m);
    run_experiment(cfg, (dir / (name + "_a")).string());
    run_experiment(cfg, (dir / (name + "_b")).string());
    bool same = true;
    if (m == Method::kBaseline) {
      same = csv_column(dir / (name + "_a") / "baseline.csv", 6) == csv_column(dir / (name + "_b") / "baseline.csv", 6) &&
             slurp(dir / (name + "_a") / "controls.csv") == slurp(dir / (name + "_b") / "controls.csv");
    } else {
      same = slurp(dir / (name + "_a") / "metrics.csv") == slurp(dir / (name + "_b") / "metrics.csv") &&
             slurp(dir / (name + "_a") / "model.bin") == slurp(dir / (name + "_b") / "model.bin");
    }
    auto ea = evaluate_run((dir / (name + "_a")).string());
    auto eb = evaluate_run((dir / (name + "_b")).string());
    for (std::size_t i = 0; i < ea.size(); ++i) same = same && ea[i].J == eb[i].J;
    dump_episode((dir / (name + "_a")).string(), 1, (dir / (name + "_ep1")).string());
    dump_episode((dir / (name + "_b")).string(), 1, (dir / (name + "_ep2")).string());
    same = same && slurp(dir / (name + "_ep1.csv")) == slurp(dir / (name + "_ep2.csv")) &&
           slurp(dir / (name + "_ep1.grid")) == slurp(dir / (name + "_ep2.grid"));
    o.details.push_back(name + ": train, evaluate and dump-episode outputs " + (same ? "bit-identical" : "DIFFER"));
    all = all && same;
  }
  auto c1 = comparison_csv(compare_runs({load_run((dir / "hjb_a").string()), load_run((dir / "ppo_a").string())}, {{0.05, false}}, {}));
  auto c2 = comparison_csv(compare_runs({load_run((dir / "hjb_b").string()), load_run((dir / "ppo_b").string())}, {{0.05, false}}, {}));
  // Run names differ between the copies; compare everything after them.
  auto strip = [](const std::string& s) {
    std::stringstream in(s), out;
    std::string line;
    while (std::getline(in, line)) out << line.substr(line.find(',')) << '\n';
    return out.str();
  };
  const bool cmp = strip(c1) == strip(c2);
  o.details.push_back(std::string("compare: ") + (cmp ? "bit-identical" : "DIFFER"));
  o.details.push_back(fmt("worker count %zu", worker_count()));
  o.pass = all && cmp;
  return o;
}

// ---------------------------------------------------------------------------
// Desk-scale comparisons.

struct DeskRun {
  RunData data;
  RunSummary summary;
};

DeskRun train(const ExperimentConfig& cfg, const fs::path& dir) {
  DeskRun r;
  r.summary = run_experiment(cfg, dir.string());
  r.data = load_run(dir.string());
  return r;
}

std::optional<std::uint64_t> solves_to(const DeskRun& r, double threshold) {
  return compare_runs({r.data, r.data}, {{threshold, false}}, {})[0].solves_to_threshold;
}

std::string solves_text(const std::optional<std::uint64_t>& s) {
  return s ? std::to_string(*s) : std::string("not reached");
}

ExperimentConfig desk_config(Setup setup, Method m, std::uint64_t seed) {
  std::string text = R"({"problem": {"n": 16},
    "hjb": {"beta": [1, 0.1, 0.01], "lr0": 0.01, "lr_floor": 0.001, "batch": 4, "iterations": 1000000}})";
  text = apply_override(text, "setup", "\"" + to_string(setup) + "\"");
  text = apply_override(text, "method", "\"" + to_string(m) + "\"");
  text = apply_override(text, "seed", std::to_string(seed));
  return parse_config(text);
}

double mean_of(const std::vector<BaselineCacheEntry>& e) {
  double s = 0.0;
  for (const auto& x : e) s += x.J;
  return s / static_cast<double>(e.size());
}

Outcome a6_horizontal_comparison(const fs::path& work) {
  Outcome o;
  const fs::path dir = work / "a6";
  fs::remove_all(dir);
  ExperimentConfig bc = desk_config(Setup::kHorizontal, Method::kBaseline, 1);
  run_experiment(bc, (dir / "baseline").string(), (dir / "cache.csv").string());
  const auto base = read_baseline_cache((dir / "cache.csv").string());
  bool converged = base.size() == 10;
  std::size_t max_it = 0;
  double max_g = 0.0;
  for (const auto& e : base) {
    converged = converged && (e.grad_inf < 1e-4 || e.iterations >= 500);
    max_it = std::max(max_it, e.iterations);
    max_g = std::max(max_g, e.grad_inf);
  }
  const double Jb = mean_of(base), threshold = 1.25 * Jb;
  o.details.push_back(fmt("(i) baseline on 10 problems: %s (max |grad|_inf %.1e, max %zu iterations), mean J %.5f",
                          converged ? "converged" : "NOT converged", max_g, max_it, Jb));
  o.details.push_back(fmt("threshold 1.25 x baseline mean = %.5f", threshold));

  int ordered = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig hc = desk_config(Setup::kHorizontal, Method::kHjb, seed);
    hc.hjb.max_solves = 3000;
    hc.hjb.validate_every = 1;
    DeskRun h = train(hc, dir / fmt("hjb_s%llu", static_cast<unsigned long long>(seed)));
    const auto hs = solves_to(h, threshold);
    // PPO only has to be followed to 3x the HJB count: reaching the
    // threshold by then fails (iii), otherwise it needs more (or never gets
    // there within 20,000) and (iii) holds.
    ExperimentConfig pc = desk_config(Setup::kHorizontal, Method::kPpo, seed);
    pc.rl.max_solves = hs ? std::min<std::uint64_t>(20000, 3 * *hs) : 20000;
    pc.rl.validate_every_solves = pc.rl.envs * pc.problem.steps;
    DeskRun p = train(pc, dir / fmt("ppo_s%llu", static_cast<unsigned long long>(seed)));
    const auto ps = solves_to(p, threshold);
    const double J0 = h.data.metrics.rows.front().mean_val_J;
    const bool ii = hs.has_value() && *hs <= 3000;
    const bool iii = ii && (!ps || *ps > 3 * *hs);
    ordered += (ii && iii) ? 1 : 0;
    o.details.push_back(fmt("seed %llu: HJB solves to threshold %s (J at 0 solves %.5f, final %.5f @ %llu); PPO %s within %llu (final %.5f); (ii) %s, (iii) %s",
                            static_cast<unsigned long long>(seed), solves_text(hs).c_str(), J0,
                            h.summary.final_mean_J, static_cast<unsigned long long>(h.summary.pde_solves),
                            solves_text(ps).c_str(), static_cast<unsigned long long>(pc.rl.max_solves),
                            p.summary.final_mean_J, ii ? "holds" : "fails", iii ? "holds" : "fails"));
  }
  o.details.push_back(fmt("ordering holds for %d of 3 seeds", ordered));
  o.pass = converged && ordered >= 2;
  return o;
}

Outcome a7_sinusoidal_suboptimality(const fs::path& work) {
  Outcome o;
  const fs::path dir = work / "a7";
  fs::remove_all(dir);
  const std::vector<std::size_t> subset{1, 8, 11, 18, 21, 28};
  const std::uint64_t budget = 20000;
  ExperimentConfig bc = desk_config(Setup::kSinusoidal, Method::kBaseline, 1);
  bc.validation_indices = subset;
  run_experiment(bc, (dir / "baseline").string(), (dir / "cache.csv").string());
  const auto base = read_baseline_cache((dir / "cache.csv").string());
  const double Jb = mean_of(base);
  o.details.push_back(fmt("6 problems (v in {-0.35, -0.2125, -0.1} x (x1, x2) in {(0.125, 0.4), (0.225, 0.6)}), equal budget %llu solves; baseline mean J %.5f",
                          static_cast<unsigned long long>(budget), Jb));
  int wins = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::map<Method, double> gap;
    for (Method m : {Method::kHjb, Method::kPpo, Method::kTd3}) {
      ExperimentConfig c = desk_config(Setup::kSinusoidal, m, seed);
      c.validation_indices = subset;
      c.hjb.max_solves = budget;
      c.hjb.validate_every = 10;
      c.rl.max_solves = budget;
      DeskRun r = train(c, dir / fmt("%s_s%llu", to_string(m).c_str(), static_cast<unsigned long long>(seed)));
      gap[m] = suboptimality(r.summary.final_mean_J, Jb);
    }
    const bool win = gap[Method::kHjb] < gap[Method::kPpo] && gap[Method::kHjb] < gap[Method::kTd3];
    wins += win ? 1 : 0;
    o.details.push_back(fmt("seed %llu: gap HJB %.5f, PPO %.5f, TD3 %.5f -> %s", static_cast<unsigned long long>(seed),
                            gap[Method::kHjb], gap[Method::kPpo], gap[Method::kTd3], win ? "HJB smallest" : "HJB not smallest"));
  }
  o.details.push_back(fmt("HJB gap smallest on %d of 3 seeds", wins));
  o.pass = wins >= 2;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks A1-A9"};
  std::vector<std::string> only, expect_fail;
  std::string work = "acceptance_runs";
  app.add_option("--only", only, "Run only these criteria (e.g. A1 A3)")->delimiter(',');
  app.add_option("--expect-fail", expect_fail, "Criteria whose failure is known and documented")->delimiter(',');
  app.add_option("--work-dir", work, "Directory for run outputs");
  CLI11_PARSE(app, argc, argv);

  const fs::path wd(work);
  fs::create_directories(wd);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1 gradient fidelity", a1_gradient_fidelity},
      {"A2 adjoint fidelity", a2_adjoint_fidelity},
      {"A3 conservation", a3_conservation},
      {"A4 feedback optimality", a4_feedback_optimality},
      {"A5 HJB residual oracle", a5_lqr_residual},
      {"A6 desk-scale method comparison", [&] { return a6_horizontal_comparison(wd); }},
      {"A7 suboptimality trend", [&] { return a7_sinusoidal_suboptimality(wd); }},
      {"A8 RL unit properties", a8_rl_properties},
      {"A9 determinism", [&] { return a9_determinism(wd); }},
  };
  const std::set<std::string> selected(only.begin(), only.end());
  const std::set<std::string> expected(expect_fail.begin(), expect_fail.end());
  int unexpected = 0;
  for (const auto& [name, fn] : criteria) {
    const std::string id = name.substr(0, 2);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.details.push_back(std::string("error: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", name.c_str(), secs);
    for (const auto& d : out.details) std::printf("    %s\n", d.c_str());
    if (!out.pass && expected.count(id)) std::printf("    known failure, see the decisions log\n");
    if (!out.pass && !expected.count(id)) ++unexpected;
    std::fflush(stdout);
  }
  return unexpected == 0 ? 0 : 1;
}
