#include "hjbctl/hjb_trainer.hpp"

#include <cmath>
#include <memory>
#include <random>

#include "hjbctl/optim.hpp"
#include "hjbctl/parallel.hpp"

namespace hjbctl {

ad::Var PdeControlModel::drift(double /*s*/, ad::Var z) const {
  const std::size_t n = sys_.nodes();
  ad::Var fa = sys_.drift(ad::slice(z, 0, n));
  return ad::concat({fa, z.tape().constant(Tensor::scalar(0.0))});
}

ad::Var PdeControlModel::gain_t(double /*s*/, ad::Var z, ad::Var p) const {
  const std::size_t n = sys_.nodes();
  ad::Var q = sys_.sink_profile(ad::element(z, n));
  return ad::concat({ad::dot(q, ad::slice(p, 0, n)), ad::element(p, n)});
}

ad::Var hamiltonian(const ControlAffineModel& model, double s, ad::Var z, ad::Var p) {
  ad::Var gt = model.gain_t(s, z, p);
  return ad::add(ad::dot(p, model.drift(s, z)), ad::scale(ad::sum(ad::square(gt)), 0.5));
}

ad::Var feedback_control(const ControlAffineModel& model, double s, ad::Var z,
                         ad::Var grad_z) {
  return ad::neg(model.gain_t(s, z, grad_z));
}

ad::Var hjb_residual(const ControlAffineModel& model, double s, ad::Var z,
                     ad::Var dphi_ds, ad::Var grad_z) {
  return ad::sub(dphi_ds, hamiltonian(model, s, z, ad::neg(grad_z)));
}

namespace {

struct NetEval {
  ad::Var value;
  ad::Var dphi_ds;
  ad::Var grad_z;
};

NetEval evaluate(const ValueNetwork& net, const ValueNetwork::Bound& w, double s,
                 ad::Var z, const std::vector<double>& y) {
  ad::Var input = net.assemble_input(z.tape(), s, z, y);
  auto vg = net.value_and_grad(w, input);
  return {vg.value, ad::element(vg.grad, 0), ad::slice(vg.grad, 1, net.state_dim())};
}

std::array<double, 2> to_pair(ad::Var u) { return {u.value()[0], u.value()[1]}; }

std::vector<double> to_vector(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

}  // namespace

std::array<double, 2> feedback_control(const ValueNetwork& net, const FemSystem& sys,
                                       double s, const State& z) {
  ad::Tape tape;
  ValueNetwork::Bound w = net.bind(tape, false);
  ad::Var zv = tape.constant(Tensor::from(z.z()));
  NetEval e = evaluate(net, w, s, zv, sys.params().as_vector());
  PdeControlModel model(sys);
  return to_pair(feedback_control(model, s, zv, e.grad_z));
}

Policy feedback_policy(const ValueNetwork& net) {
  auto shared = std::make_shared<const ValueNetwork>(net);
  return [shared](const FemSystem& sys, double s, const State& z) {
    return feedback_control(*shared, sys, s, z);
  };
}

TapedEpisode hjb_episode(ad::Tape& tape, const ValueNetwork& net,
                         const ValueNetwork::Bound& w, const FemSystem& sys,
                         const HjbWeights& beta) {
  const auto& cfg = sys.config();
  const double ds = cfg.ds;
  const std::vector<double> y = sys.params().as_vector();
  PdeControlModel model(sys);

  TapedEpisode out;
  EpisodeRecord& rec = out.record;
  rec.ds = ds;
  State z0 = initial_state(sys);
  TapedState z{tape.constant(Tensor::from(z0.a)), tape.constant(Tensor::scalar(z0.alpha))};
  rec.times.push_back(0.0);
  rec.states.push_back(z0);

  ad::Var running = tape.constant(Tensor::scalar(0.0));
  ad::Var residual = tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    const double s = static_cast<double>(i) * ds;
    ad::Var zv = ad::concat({z.a, z.alpha});
    NetEval e = evaluate(net, w, s, zv, y);
    ad::Var u = feedback_control(model, s, zv, e.grad_z);
    residual = ad::add(residual, ad::abs(hjb_residual(model, s, zv, e.dphi_ds, e.grad_z)));
    ad::Var cost = ad::scale(ad::sum(ad::square(u)), 0.5 * ds);
    running = ad::add(running, cost);
    z = step(sys, z, ad::element(u, 0), ad::element(u, 1));

    rec.controls.push_back(to_pair(u));
    rec.rewards.push_back(cost.item());
    rec.times.push_back(static_cast<double>(i + 1) * ds);
    rec.states.push_back(State{to_vector(z.a.value()), z.alpha.item()});
  }
  residual = ad::scale(residual, ds);

  const double s_end = static_cast<double>(cfg.steps) * ds;
  ad::Var zv = ad::concat({z.a, z.alpha});
  NetEval e = evaluate(net, w, s_end, zv, y);
  ad::Var G = terminal_cost(sys, z.a);
  ad::Var tv = ad::abs(ad::sub(G, e.value));
  Tensor dG = Tensor::from(terminal_cost_grad(sys, rec.states.back().a));
  ad::Var tg = ad::sum(ad::abs(ad::sub(e.grad_z, tape.constant(std::move(dG)))));

  rec.running = running.item();
  rec.terminal = G.item();
  rec.rewards.push_back(rec.terminal);
  rec.objective = rec.running + rec.terminal;

  HjbLossBreakdown& b = out.breakdown;
  b.J = rec.objective;
  b.residual = beta.beta1 * residual.item();
  b.terminal_value = beta.beta2 * tv.item();
  b.terminal_grad = beta.beta3 * tg.item();

  ad::Var loss = ad::add(running, G);
  if (beta.beta1 != 0.0) loss = ad::add(loss, ad::scale(residual, beta.beta1));
  if (beta.beta2 != 0.0) loss = ad::add(loss, ad::scale(tv, beta.beta2));
  if (beta.beta3 != 0.0) loss = ad::add(loss, ad::scale(tg, beta.beta3));
  out.loss = loss;
  return out;
}

HjbLossBreakdown hjb_penalty(const ValueNetwork& net, const EpisodeRecord& episode,
                             const FemSystem& sys, const HjbWeights& beta) {
  if (episode.states.size() != episode.steps() + 1 || episode.steps() == 0) {
    throw DimensionError("hjb_penalty: incomplete episode");
  }
  ad::Tape tape;
  ValueNetwork::Bound w = net.bind(tape, false);
  PdeControlModel model(sys);
  const std::vector<double> y = sys.params().as_vector();
  HjbLossBreakdown b;
  double residual = 0.0;
  for (std::size_t i = 0; i < episode.steps(); ++i) {
    ad::Var zv = tape.constant(Tensor::from(episode.states[i].z()));
    NetEval e = evaluate(net, w, episode.times[i], zv, y);
    residual += std::abs(hjb_residual(model, episode.times[i], zv, e.dphi_ds, e.grad_z).item());
  }
  const State& last = episode.states.back();
  ad::Var zv = tape.constant(Tensor::from(last.z()));
  NetEval e = evaluate(net, w, episode.times.back(), zv, y);
  const double G = terminal_cost(sys, last.a);
  const std::vector<double> dG = terminal_cost_grad(sys, last.a);
  double tg = 0.0;
  for (std::size_t k = 0; k < dG.size(); ++k) tg += std::abs(dG[k] - e.grad_z.value()[k]);
  b.J = episode.objective;
  b.residual = beta.beta1 * residual * episode.ds;
  b.terminal_value = beta.beta2 * std::abs(G - e.value.item());
  b.terminal_grad = beta.beta3 * tg;
  return b;
}

BatchGradient hjb_batch_gradient(const ValueNetwork& net,
                                 const std::vector<const FemSystem*>& batch,
                                 const HjbWeights& beta) {
  if (batch.empty()) throw ConfigError("hjb_batch_gradient: empty batch");
  const std::size_t np = net.parameters().size();
  std::vector<std::vector<Tensor>> grads(batch.size());
  std::vector<HjbLossBreakdown> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t k) {
    ad::Tape tape;
    ValueNetwork::Bound w = net.bind(tape, true);
    TapedEpisode ep = hjb_episode(tape, net, w, *batch[k], beta);
    tape.backward(ep.loss);
    grads[k].reserve(np);
    for (std::size_t p = 0; p < np; ++p) grads[k].push_back(tape.grad(w.params[p]));
    parts[k] = ep.breakdown;
  });

  BatchGradient out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.grads = std::move(grads[0]);
  for (std::size_t k = 1; k < batch.size(); ++k) {
    for (std::size_t p = 0; p < np; ++p) {
      auto dst = out.grads[p].values();
      auto src = grads[k][p].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  for (Tensor& g : out.grads) {
    for (double& v : g.values()) v *= inv;
  }
  for (const auto& b : parts) {
    out.mean.J += b.J * inv;
    out.mean.residual += b.residual * inv;
    out.mean.terminal_value += b.terminal_value * inv;
    out.mean.terminal_grad += b.terminal_grad * inv;
  }
  return out;
}

ValidationResult validate(const ValueNetwork& net, const std::vector<FemSystemPtr>& systems) {
  ValidationResult r;
  r.per_problem = evaluate_policy(systems, feedback_policy(net));
  for (double j : r.per_problem) r.mean += j;
  if (!r.per_problem.empty()) r.mean /= static_cast<double>(r.per_problem.size());
  return r;
}

HjbTrainer::HjbTrainer(HjbConfig config, ProblemConfig problem, ValueNetworkInit init)
    : config_(config), problem_(problem), init_(init) {
  const HjbWeights& b = config_.beta;
  if (b.beta1 < 0.0 || b.beta2 < 0.0 || b.beta3 < 0.0) {
    throw ConfigError("HjbConfig: beta weights must be non-negative");
  }
  if (config_.lr_floor > config_.lr0) throw ConfigError("HjbConfig: lr_floor exceeds lr0");
  if (config_.batch == 0 || config_.batch > config_.pool) {
    throw ConfigError("HjbConfig: need 1 <= batch <= pool");
  }
  std::mt19937_64 rng(derive_seed(config_.seed, 1));
  std::vector<ProblemParams> params;
  for (std::size_t i = 0; i < config_.pool; ++i) params.push_back(sample_params(problem_.setup, rng));
  pool_ = assemble_all(problem_, params);
}

HjbTrainResult HjbTrainer::train(
    const std::vector<FemSystemPtr>& validation, const MetricsSink& sink,
    const std::function<void(const HjbIterationStats&, const ValueNetwork&)>& on_iter) {
  HjbTrainResult result;
  result.net = ValueNetwork::initialize(problem_.grid().nodes() + 1, param_dim(problem_.setup), init_);
  ValueNetwork& net = result.net;
  if (config_.mass_scaled_input) {
    const double h = problem_.grid().h();
    const double w = problem_.rho * h * h;
    for (std::size_t i = 0; i < problem_.grid().nodes(); ++i) net.input_scale()[1 + i] = w;
  }
  Adam adam;
  std::mt19937_64 rng(derive_seed(config_.seed, 2));
  std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
  const std::uint64_t per_iter = config_.batch * problem_.steps;

  HjbIterationStats last;
  auto measure = [&](std::size_t iter) {
    ValidationResult v = validate(net, validation);
    MetricsRow row;
    row.iter = iter;
    row.pde_solves = result.pde_solves;
    row.mean_val_J = v.mean;
    row.val_J = v.per_problem;
    row.loss_terms = {last.mean.total(), last.mean.J, last.mean.residual,
                      last.mean.terminal_value, last.mean.terminal_grad};
    row.lr = last.lr;
    result.validation.push_back(row);
    if (sink) sink(row);
  };
  measure(0);

  std::size_t iter = 0;
  while (iter < config_.iterations) {
    if (config_.max_solves != 0 && result.pde_solves + per_iter > config_.max_solves) break;
    std::vector<const FemSystem*> batch;
    for (std::size_t k = 0; k < config_.batch; ++k) batch.push_back(pool_[pick(rng)].get());
    const double lr = decayed_learning_rate(config_.lr0, config_.decay, config_.lr_floor,
                                            iter * config_.batch / config_.pool);
    BatchGradient bg = hjb_batch_gradient(net, batch, config_.beta);
    if (!std::isfinite(bg.mean.total())) {
      throw NumericError("HJB training: non-finite loss at iteration " + std::to_string(iter + 1));
    }
    std::vector<Tensor*> params = net.parameters();
    adam.step(params, bg.grads, lr);
    ++iter;
    result.pde_solves += per_iter;

    last = HjbIterationStats{iter, result.pde_solves, bg.mean, lr};
    result.history.push_back(last);
    if (on_iter) on_iter(last, net);
    if (config_.validate_every != 0 && iter % config_.validate_every == 0) measure(iter);
  }
  if (result.validation.back().iter != iter) measure(iter);
  return result;
}

std::vector<std::string> hjb_loss_names() {
  return {"loss", "J", "residual", "terminal_value", "terminal_grad"};
}

}  // namespace hjbctl
