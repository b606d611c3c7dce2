#include <doctest.h>

#include <cmath>
#include <random>

#include "fd.hpp"
#include "hjbctl/hjb_trainer.hpp"
#include "hjbctl/optim.hpp"
#include "hjbctl/parallel.hpp"

using namespace hjbctl;
using testing::central_diff;
using testing::rel_err;

namespace {

// dz/ds = A z + B u with diagonal A and a dense constant B.
class LinearModel final : public ControlAffineModel {
 public:
  LinearModel(std::vector<double> a, std::vector<std::vector<double>> b) : a_(std::move(a)), b_(std::move(b)) {}
  std::size_t state_dim() const override { return a_.size(); }
  std::size_t control_dim() const override { return b_[0].size(); }
  ad::Var drift(double, ad::Var z) const override {
    return ad::mul_const(z, Tensor::from(a_));
  }
  ad::Var gain_t(double, ad::Var, ad::Var p) const override {
    Tensor bt(control_dim(), state_dim());
    for (std::size_t i = 0; i < state_dim(); ++i)
      for (std::size_t j = 0; j < control_dim(); ++j) bt(j, i) = b_[i][j];
    return ad::matvec(p.tape().constant(std::move(bt)), p);
  }
  std::vector<double> a_;
  std::vector<std::vector<double>> b_;
};

ValueNetwork random_net(std::size_t width, std::size_t depth, std::size_t d, std::size_t q,
                        std::uint64_t seed, double scale) {
  ValueNetwork net(width, depth, d, q);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Tensor* p : net.parameters())
    for (double& v : p->values()) v = n(rng);
  return net;
}

std::vector<double> flatten(const ValueNetwork& net) {
  std::vector<double> out;
  for (const Tensor* p : const_cast<ValueNetwork&>(net).parameters())
    out.insert(out.end(), p->data(), p->data() + p->size());
  return out;
}

void unflatten(ValueNetwork& net, const std::vector<double>& th) {
  std::size_t off = 0;
  for (Tensor* p : net.parameters())
    for (double& v : p->values()) v = th[off++];
}

ProblemConfig tiny_problem(std::size_t n, std::size_t steps) {
  ProblemConfig cfg = ProblemConfig::defaults(Setup::kHorizontal);
  cfg.n = n;
  cfg.steps = steps;
  return cfg;
}

}  // namespace

TEST_CASE("Hamiltonian") {
  LinearModel m({0.5, -1.0, 2.0}, {{1.0, 0.0}, {0.3, -0.7}, {0.0, 2.0}});
  ad::Tape tape;
  const std::vector<double> zv{0.2, -0.4, 1.1}, pv{0.6, 0.1, -0.3};
  ad::Var z = tape.constant(Tensor::from(zv)), p = tape.constant(Tensor::from(pv));
  const double H = hamiltonian(m, 0.0, z, p).item();

  // p.(f + g u) - |u|^2 / 2 is maximized by u = g^T p.
  auto objective = [&](double u1, double u2) {
    double v = 0.0;
    for (std::size_t i = 0; i < 3; ++i) v += pv[i] * (m.a_[i] * zv[i] + m.b_[i][0] * u1 + m.b_[i][1] * u2);
    return v - 0.5 * (u1 * u1 + u2 * u2);
  };
  const Tensor ustar = m.gain_t(0.0, z, p).value();
  CHECK(H == doctest::Approx(objective(ustar[0], ustar[1])).epsilon(1e-14));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.1);
  for (int t = 0; t < 50; ++t) CHECK(objective(ustar[0] + n(rng), ustar[1] + n(rng)) < H);
  double best = -1e300;
  for (int i = -200; i <= 200; ++i)
    for (int j = -200; j <= 200; ++j) best = std::max(best, objective(0.01 * i, 0.01 * j));
  CHECK(best <= H);
  CHECK(H - best < 1e-4);

  ad::Var zero = tape.constant(Tensor::from(std::vector<double>(3, 0.0)));
  CHECK(hamiltonian(m, 0.0, z, zero).item() == 0.0);

  // Feedback is the negated maximizer at p = -grad Phi.
  const Tensor u = feedback_control(m, 0.0, z, p).value();
  CHECK(u[0] == -ustar[0]);
  CHECK(u[1] == -ustar[1]);
}

TEST_CASE("residual vanishes on the Riccati value function") {
  // dz_i/ds = a_i z_i + b_i u_i, terminal cost P_T |z|^2 / 2. With Q = 1/P,
  // Q' = 2 a Q - b^2 is linear and Phi = sum P_i(s) z_i^2 / 2.
  const std::vector<double> a{0.4, -0.8}, b{1.0, 0.5};
  LinearModel m(a, {{b[0], 0.0}, {0.0, b[1]}});
  const double T = 1.0, PT = 3.0;
  auto P = [&](std::size_t i, double s) {
    const double qinf = b[i] * b[i] / (2.0 * a[i]);
    return 1.0 / (qinf + (1.0 / PT - qinf) * std::exp(2.0 * a[i] * (s - T)));
  };
  auto dP = [&](std::size_t i, double s) { return -2.0 * a[i] * P(i, s) + b[i] * b[i] * P(i, s) * P(i, s); };
  for (double s : {0.0, 0.3, 0.9}) {
    const std::vector<double> zv{0.7, -1.5};
    ad::Tape tape;
    double phis = 0.0;
    std::vector<double> gz(2);
    for (std::size_t i = 0; i < 2; ++i) {
      phis += 0.5 * dP(i, s) * zv[i] * zv[i];
      gz[i] = P(i, s) * zv[i];
    }
    const double r = hjb_residual(m, s, tape.constant(Tensor::from(zv)), tape.constant(Tensor::scalar(phis)),
                                  tape.constant(Tensor::from(gz)))
                         .item();
    CHECK(std::abs(r) < 1e-8);
    // The wrong sign on the value derivative is detected.
    const double wrong = hjb_residual(m, s, tape.constant(Tensor::from(zv)), tape.constant(Tensor::scalar(-phis)),
                                      tape.constant(Tensor::from(gz)))
                             .item();
    CHECK(std::abs(wrong) > 1e-3);
  }
}

TEST_CASE("feedback on the PDE model") {
  auto sys = FemSystem::assemble(tiny_problem(8, 4), ProblemParams{0.2, 0.5, 0.0, Setup::kHorizontal});
  ValueNetwork zero(4, 1, sys->state_dim(), 2);
  State z = initial_state(*sys);
  CHECK(feedback_control(zero, *sys, 0.0, z) == std::array<double, 2>{0.0, 0.0});

  // u = -(q(alpha) . grad_a Phi, d Phi / d alpha), with q the nodal sink profile.
  ValueNetwork net = random_net(5, 2, sys->state_dim(), 2, 3, 0.4);
  std::mt19937_64 rng(4);
  z.a = testing::uniform(sys->nodes(), rng, 0.0, 0.2);
  z.alpha = 0.43;
  const auto g = net.grad_input(NetInput{0.1, z.z(), sys->params().as_vector()});
  const auto q = sys->sink_profile(z.alpha);
  double u1 = 0.0;
  for (std::size_t i = 0; i < sys->nodes(); ++i) u1 -= q[i] * g.dz[i];
  const auto u = feedback_control(net, *sys, 0.1, z);
  CHECK(u[0] == doctest::Approx(u1).epsilon(1e-12));
  CHECK(u[1] == doctest::Approx(-g.dz.back()).epsilon(1e-12));
}

TEST_CASE("episode loss") {
  const ProblemConfig cfg = tiny_problem(4, 2);
  auto sys = FemSystem::assemble(cfg, ProblemParams{0.2, 0.45, 0.0, Setup::kHorizontal});
  ValueNetwork net = random_net(4, 2, sys->state_dim(), 2, 11, 0.3);

  SUBCASE("beta = 0 leaves the objective alone") {
    ad::Tape tape;
    auto w = net.bind(tape, false);
    TapedEpisode ep = hjb_episode(tape, net, w, *sys, HjbWeights{0.0, 0.0, 0.0});
    CHECK(ep.breakdown.penalty() == 0.0);
    CHECK(ep.loss.item() == doctest::Approx(ep.record.objective).epsilon(1e-14));
    CHECK(hjb_penalty(net, ep.record, *sys, HjbWeights{0.0, 0.0, 0.0}).penalty() == 0.0);
  }

  SUBCASE("taped episode matches the plain rollout") {
    ad::Tape tape;
    auto w = net.bind(tape, false);
    const HjbWeights beta{1.0, 0.1, 0.01};
    TapedEpisode ep = hjb_episode(tape, net, w, *sys, beta);
    EpisodeRecord plain = rollout(*sys, feedback_policy(net));
    CHECK(ep.record.objective == doctest::Approx(plain.objective).epsilon(1e-10));
    for (std::size_t i = 0; i < plain.steps(); ++i) {
      CHECK(ep.record.controls[i][0] == doctest::Approx(plain.controls[i][0]).epsilon(1e-10));
      CHECK(ep.record.controls[i][1] == doctest::Approx(plain.controls[i][1]).epsilon(1e-10));
    }
    const HjbLossBreakdown fixed = hjb_penalty(net, ep.record, *sys, beta);
    CHECK(fixed.residual == doctest::Approx(ep.breakdown.residual).epsilon(1e-10));
    CHECK(fixed.terminal_value == doctest::Approx(ep.breakdown.terminal_value).epsilon(1e-10));
    CHECK(fixed.terminal_grad == doctest::Approx(ep.breakdown.terminal_grad).epsilon(1e-10));
    CHECK(ep.loss.item() == doctest::Approx(ep.breakdown.total()).epsilon(1e-12));
  }

  SUBCASE("weight gradient against finite differences") {
    const HjbWeights beta{1.0, 0.5, 0.1};
    BatchGradient bg = hjb_batch_gradient(net, {sys.get()}, beta);
    std::vector<double> g;
    for (const Tensor& t : bg.grads) g.insert(g.end(), t.data(), t.data() + t.size());
    auto f = [&](const std::vector<double>& th) {
      ValueNetwork m = net;
      unflatten(m, th);
      ad::Tape tape;
      auto w = m.bind(tape, false);
      UncountedSolves quiet;
      return hjb_episode(tape, m, w, *sys, beta).loss.item();
    };
    CHECK(rel_err(g, central_diff(f, flatten(net), 1e-6)) < 1e-4);
  }
}

TEST_CASE("batch gradient is the mean over the batch and independent of workers") {
  const ProblemConfig cfg = tiny_problem(6, 3);
  auto s1 = FemSystem::assemble(cfg, ProblemParams{0.2, 0.45, 0.0, Setup::kHorizontal});
  auto s2 = FemSystem::assemble(cfg, ProblemParams{0.12, 0.7, 0.0, Setup::kHorizontal});
  ValueNetwork net = random_net(4, 1, s1->state_dim(), 2, 21, 0.3);
  const HjbWeights beta{1.0, 0.1, 0.01};
  const std::size_t saved = worker_count();
  set_worker_count(1);
  BatchGradient one = hjb_batch_gradient(net, {s1.get(), s2.get()}, beta);
  set_worker_count(3);
  BatchGradient many = hjb_batch_gradient(net, {s1.get(), s2.get()}, beta);
  set_worker_count(saved);
  BatchGradient a = hjb_batch_gradient(net, {s1.get()}, beta);
  BatchGradient b = hjb_batch_gradient(net, {s2.get()}, beta);
  for (std::size_t p = 0; p < one.grads.size(); ++p) {
    for (std::size_t i = 0; i < one.grads[p].size(); ++i) {
      CHECK(one.grads[p][i] == many.grads[p][i]);
      CHECK(one.grads[p][i] == doctest::Approx(0.5 * (a.grads[p][i] + b.grads[p][i])).epsilon(1e-12));
    }
  }
  CHECK(one.mean.J == doctest::Approx(0.5 * (a.mean.J + b.mean.J)).epsilon(1e-14));
  CHECK_THROWS_AS(hjb_batch_gradient(net, {}, beta), ConfigError);
}

TEST_CASE("trainer") {
  ProblemConfig problem = tiny_problem(8, 5);
  HjbConfig cfg;
  cfg.beta = {1.0, 0.1, 0.01};
  cfg.lr0 = 0.01;
  cfg.batch = 2;
  cfg.pool = 4;
  cfg.iterations = 6;
  cfg.validate_every = 3;
  cfg.seed = 5;
  ValueNetworkInit init;
  init.width = 8;
  init.depth = 2;
  init.seed = 5;
  auto validation = assemble_all(problem, validation_params(Setup::kHorizontal));
  validation.resize(3);

  HjbTrainer trainer(cfg, problem, init);
  CHECK(trainer.pool().size() == 4);
  std::vector<MetricsRow> sunk;
  const std::uint64_t before = pde_solve_counter().load();
  HjbTrainResult r = trainer.train(validation, [&](const MetricsRow& row) { sunk.push_back(row); });
  CHECK(pde_solve_counter().load() - before == r.pde_solves);
  CHECK(r.pde_solves == 6 * 2 * 5);
  REQUIRE(r.validation.size() == 3);
  CHECK(r.validation[0].iter == 0);
  CHECK(r.validation[0].pde_solves == 0);
  CHECK(r.validation[1].iter == 3);
  CHECK(r.validation[2].pde_solves == 60);
  CHECK(sunk.size() == 3);
  for (const auto& row : r.validation) {
    CHECK(row.val_J.size() == 3);
    CHECK(std::isfinite(row.mean_val_J));
    CHECK(row.loss_terms.size() == hjb_loss_names().size());
  }
  // The zero-head initialization validates as the uncontrolled system.
  const auto zero = evaluate_policy(validation, [](const FemSystem&, double, const State&) {
    return std::array<double, 2>{0.0, 0.0};
  });
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.validation[0].val_J[i] == zero[i]);
  for (const auto& h : r.history) {
    CHECK(std::isfinite(h.mean.total()));
    // One epoch is pool / batch = 2 iterations.
    CHECK(h.lr == decayed_learning_rate(0.01, cfg.decay, cfg.lr_floor, (h.iter - 1) * 2 / 4));
  }

  // Validation does not touch the weights.
  const auto hash = weight_hash(r.net);
  validate(r.net, validation);
  CHECK(weight_hash(r.net) == hash);

  // Same seed, same run.
  HjbTrainResult again = HjbTrainer(cfg, problem, init).train(validation);
  CHECK(again.net == r.net);
  CHECK(again.validation.back().mean_val_J == r.validation.back().mean_val_J);

  // The solve budget stops training before it would be exceeded.
  cfg.max_solves = 25;
  HjbTrainResult capped = HjbTrainer(cfg, problem, init).train(validation);
  CHECK(capped.pde_solves == 20);
  CHECK(capped.validation.back().iter == 2);

  cfg.max_solves = 0;
  cfg.beta.beta2 = -1.0;
  CHECK_THROWS_AS(HjbTrainer(cfg, problem, init), ConfigError);
  cfg.beta.beta2 = 0.1;
  cfg.batch = 5;
  CHECK_THROWS_AS(HjbTrainer(cfg, problem, init), ConfigError);
}
