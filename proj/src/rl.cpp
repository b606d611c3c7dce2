#include "hjbctl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>

#include "hjbctl/parallel.hpp"

namespace hjbctl::rl {

namespace {

constexpr char kPpoMagic[8] = {'H', 'J', 'B', 'P', 'P', 'O', '0', '1'};
constexpr char kTd3Magic[8] = {'H', 'J', 'B', 'T', 'D', '3', '0', '1'};
constexpr char kNormMagic[8] = {'H', 'J', 'B', 'N', 'O', 'R', 'M', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("checkpoint: truncated stream");
  return v;
}
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
double read_f64(std::istream& is) {
  double v = 0.0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("checkpoint: truncated stream");
  return v;
}
void expect_magic(std::istream& is, const char (&magic)[8], const std::string& what) {
  char m[8];
  is.read(m, sizeof m);
  if (!is || !std::equal(m, m + 8, magic)) throw Error(what + ": bad magic");
}

Matrix rows_of(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), static_cast<Eigen::Index>(rows[i].size()));
  }
  return m;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(idx[k]));
  }
  return out;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite loss");
}

std::vector<FemSystemPtr> sample_pool(const ProblemConfig& problem, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 1));
  std::vector<ProblemParams> params;
  for (std::size_t i = 0; i < n; ++i) params.push_back(sample_params(problem.setup, rng));
  return assemble_all(problem, params);
}

MetricsRow validation_row(std::size_t iter, std::uint64_t solves, const std::vector<double>& per,
                          std::vector<double> losses, double lr) {
  MetricsRow row;
  row.iter = iter;
  row.pde_solves = solves;
  row.val_J = per;
  row.mean_val_J = per.empty() ? 0.0
                               : std::accumulate(per.begin(), per.end(), 0.0) /
                                     static_cast<double>(per.size());
  row.loss_terms = std::move(losses);
  row.lr = lr;
  return row;
}

}  // namespace

std::size_t observation_channels(Setup setup) { return 3 + param_dim(setup); }

std::vector<double> observation(const FemSystem& sys, double s, const State& z) {
  const std::size_t nn = sys.nodes();
  if (z.a.size() != nn) throw DimensionError("observation: state size mismatch");
  const std::vector<double> y = sys.params().as_vector();
  std::vector<double> obs;
  obs.reserve((3 + y.size()) * nn);
  obs.insert(obs.end(), z.a.begin(), z.a.end());
  obs.insert(obs.end(), nn, z.alpha);
  obs.insert(obs.end(), nn, s);
  for (double v : y) obs.insert(obs.end(), nn, v);
  return obs;
}

ObsNormalizer::ObsNormalizer(std::size_t dim, double rate, double eps)
    : rate_(rate), eps_(eps), mean_(dim, 0.0), var_(dim, 1.0) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("ObsNormalizer: rate must be in (0, 1]");
}

void ObsNormalizer::update(const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != dim()) throw DimensionError("ObsNormalizer::update: width");
  if (batch.rows() == 0) return;
  const double inv = 1.0 / static_cast<double>(batch.rows());
  for (std::size_t j = 0; j < dim(); ++j) {
    const auto col = batch.col(static_cast<Eigen::Index>(j));
    mean_[j] = (1.0 - rate_) * mean_[j] + rate_ * (col.sum() * inv);
    const double m = mean_[j];
    double sq = 0.0;
    for (Eigen::Index b = 0; b < col.size(); ++b) sq += (col(b) - m) * (col(b) - m);
    var_[j] = (1.0 - rate_) * var_[j] + rate_ * (sq * inv);
  }
  ++updates_;
}

Matrix ObsNormalizer::normalize(const Matrix& batch) const {
  if (static_cast<std::size_t>(batch.cols()) != dim()) throw DimensionError("ObsNormalizer::normalize: width");
  Matrix out(batch.rows(), batch.cols());
  for (std::size_t j = 0; j < dim(); ++j) {
    const double scale = 1.0 / std::sqrt(var_[j] + eps_);
    const auto jj = static_cast<Eigen::Index>(j);
    out.col(jj) = (batch.col(jj).array() - mean_[j]) * scale;
  }
  return out;
}

void ObsNormalizer::save(std::ostream& os) const {
  os.write(kNormMagic, sizeof kNormMagic);
  write_f64(os, rate_);
  write_f64(os, eps_);
  write_u64(os, updates_);
  write_u64(os, mean_.size());
  for (double v : mean_) write_f64(os, v);
  for (double v : var_) write_f64(os, v);
}

ObsNormalizer ObsNormalizer::load(std::istream& is) {
  expect_magic(is, kNormMagic, "ObsNormalizer::load");
  ObsNormalizer n;
  n.rate_ = read_f64(is);
  n.eps_ = read_f64(is);
  n.updates_ = read_u64(is);
  const std::uint64_t d = read_u64(is);
  if (d > (1ULL << 28)) throw Error("ObsNormalizer::load: corrupt size");
  n.mean_.resize(d);
  n.var_.resize(d);
  for (double& v : n.mean_) v = read_f64(is);
  for (double& v : n.var_) v = read_f64(is);
  return n;
}

void RlConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("RlConfig: gamma must be in (0, 1]");
  if (!(clip > 0.0)) throw ConfigError("RlConfig: clip must be positive");
  if (critic_weight < 0.0) throw ConfigError("RlConfig: critic weight must be non-negative");
  if (lr_floor > lr0) throw ConfigError("RlConfig: lr_floor exceeds lr0");
  if (envs == 0 || pool == 0 || minibatch == 0 || epochs == 0 || td3_batch == 0 || td3_delay == 0) {
    throw ConfigError("RlConfig: sizes must be positive");
  }
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("RlConfig: gae_lambda must be in [0, 1]");
  if (!(td3_tau > 0.0 && td3_tau <= 1.0)) throw ConfigError("RlConfig: td3_tau must be in (0, 1]");
  if (!(td3_reward_scale > 0.0)) throw ConfigError("RlConfig: td3_reward_scale must be positive");
  if (!(td3_max_action > 0.0)) throw ConfigError("RlConfig: td3_max_action must be positive");
}

ConvNetSpec actor_spec(const RlConfig& config, const ProblemConfig& problem) {
  ConvNetSpec s;
  s.channels = observation_channels(problem.setup);
  s.grid = problem.n;
  s.conv = config.conv;
  s.dense = config.dense;
  s.outputs = 2;
  return s;
}

ConvNetSpec critic_spec(const RlConfig& config, const ProblemConfig& problem,
                        std::size_t extra_inputs) {
  ConvNetSpec s = actor_spec(config, problem);
  s.outputs = 1;
  s.extra_inputs = extra_inputs;
  return s;
}

double gaussian_log_prob(const double* u, const double* mean, const double* log_var,
                         std::size_t dim) {
  double lp = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = u[j] - mean[j];
    lp -= 0.5 * (d * d * std::exp(-log_var[j]) + log_var[j] + std::log(2.0 * std::numbers::pi));
  }
  return lp;
}

ActResult act(const GaussianActor& actor, const Matrix& obs, std::mt19937_64& rng,
              bool deterministic) {
  if (obs.rows() != 1) throw DimensionError("act: expects a single observation row");
  Matrix mean = actor.net.forward(obs);
  ActResult r;
  for (std::size_t j = 0; j < 2; ++j) {
    r.u[j] = mean(0, static_cast<Eigen::Index>(j));
    if (!deterministic) {
      std::normal_distribution<double> normal(0.0, 1.0);
      r.u[j] += std::exp(0.5 * actor.log_var[j]) * normal(rng);
    }
  }
  r.log_prob = gaussian_log_prob(r.u.data(), mean.data(), actor.log_var.data(), 2);
  if (!std::isfinite(r.log_prob)) throw NumericError("act: non-finite log-probability");
  return r;
}

PpoAgent PpoAgent::create(const RlConfig& config, const ProblemConfig& problem) {
  PpoAgent a;
  a.actor.net = ConvNet::orthogonal(actor_spec(config, problem), derive_seed(config.seed, 10), 0.01);
  a.actor.log_var = Tensor(2, config.init_log_var);
  a.critic = ConvNet::orthogonal(critic_spec(config, problem, 0), derive_seed(config.seed, 11), 1.0);
  a.normalizer = ObsNormalizer(a.actor.net.spec().input_size(), config.ema_rate);
  return a;
}

void PpoAgent::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("PpoAgent::save: cannot open " + path);
  os.write(kPpoMagic, sizeof kPpoMagic);
  actor.net.save(os);
  write_tensor(os, actor.log_var);
  critic.save(os);
  normalizer.save(os);
  if (!os) throw Error("PpoAgent::save: write failed for " + path);
}

PpoAgent PpoAgent::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("PpoAgent::load: cannot open " + path);
  expect_magic(is, kPpoMagic, "PpoAgent::load");
  PpoAgent a;
  a.actor.net = ConvNet::load(is);
  a.actor.log_var = read_tensor(is);
  a.critic = ConvNet::load(is);
  a.normalizer = ObsNormalizer::load(is);
  return a;
}

Matrix td3_action(const ConvNet& actor, const Matrix& obs, double bound, ConvNet::Cache* cache) {
  Matrix raw = actor.forward(obs, nullptr, cache);
  return bound * raw.array().tanh().matrix();
}

Policy mean_policy(const ConvNet& actor, const ObsNormalizer& normalizer, double bound) {
  auto net = std::make_shared<const ConvNet>(actor);
  auto norm = std::make_shared<const ObsNormalizer>(normalizer);
  return [net, norm, bound](const FemSystem& sys, double s, const State& z) {
    const std::vector<double> o = observation(sys, s, z);
    Matrix row = Eigen::Map<const Eigen::RowVectorXd>(o.data(), static_cast<Eigen::Index>(o.size()));
    Matrix obs = norm->normalize(row);
    Matrix mean = bound > 0.0 ? td3_action(*net, obs, bound) : net->forward(obs);
    return std::array<double, 2>{mean(0, 0), mean(0, 1)};
  };
}

std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma) {
  std::vector<double> R(rewards.size());
  double acc = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    acc = rewards[k] + (k + 1 == rewards.size() ? 0.0 : gamma * acc);
    R[k] = acc;
  }
  return R;
}

std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        double gamma, double lambda) {
  const std::size_t n = values.size();
  if (rewards.size() != n + 1) throw DimensionError("gae: expected N + 1 rewards for N values");
  std::vector<double> adv(n);
  double next_value = rewards[n];
  double acc = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double delta = rewards[k] + gamma * next_value - values[k];
    acc = delta + gamma * lambda * acc;
    adv[k] = acc;
    next_value = values[k];
  }
  return adv;
}

TransitionBatch collect_episodes(PpoAgent& agent, const std::vector<const FemSystem*>& systems,
                                 const std::vector<std::uint64_t>& seeds, const RlConfig& config,
                                 bool update_normalizer) {
  const std::size_t E = systems.size();
  if (E == 0) throw ConfigError("collect_episodes: need at least one environment");
  if (seeds.size() != E) throw DimensionError("collect_episodes: one seed per environment");
  const ProblemConfig& pc = systems[0]->config();
  const std::size_t N = pc.steps;
  const double ds = pc.ds;

  std::vector<std::mt19937_64> rngs;
  for (std::uint64_t s : seeds) rngs.emplace_back(s);
  std::vector<State> z(E);
  std::vector<EpisodeRecord> eps(E);
  std::vector<bool> valid(E, true);
  for (std::size_t e = 0; e < E; ++e) {
    z[e] = initial_state(*systems[e]);
    eps[e].ds = ds;
    eps[e].times.push_back(0.0);
    eps[e].states.push_back(z[e]);
  }
  std::vector<Matrix> obs_steps, act_steps;
  std::vector<std::vector<double>> logp(E), values(E);

  for (std::size_t i = 0; i < N; ++i) {
    const double s = static_cast<double>(i) * ds;
    std::vector<std::vector<double>> raw(E);
    for (std::size_t e = 0; e < E; ++e) raw[e] = observation(*systems[e], s, z[e]);
    Matrix raw_m = rows_of(raw);
    if (update_normalizer) agent.normalizer.update(raw_m);
    Matrix obs = agent.normalizer.normalize(raw_m);
    Matrix mean = agent.actor.net.forward(obs);
    Matrix v = agent.critic.forward(obs);
    Matrix acts(static_cast<Eigen::Index>(E), 2);
    for (std::size_t e = 0; e < E; ++e) {
      const auto ee = static_cast<Eigen::Index>(e);
      std::array<double, 2> u{};
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t j = 0; j < 2; ++j) {
        u[j] = mean(ee, static_cast<Eigen::Index>(j)) +
               std::exp(0.5 * agent.actor.log_var[j]) * normal(rngs[e]);
      }
      acts(ee, 0) = u[0];
      acts(ee, 1) = u[1];
      logp[e].push_back(gaussian_log_prob(u.data(), mean.row(ee).data(), agent.actor.log_var.data(), 2));
      values[e].push_back(v(ee, 0));
      eps[e].controls.push_back(u);
      eps[e].rewards.push_back(running_cost(u, ds));
    }
    parallel_for(E, [&](std::size_t e) {
      if (!valid[e]) return;
      try {
        z[e] = step(*systems[e], z[e], eps[e].controls.back());
      } catch (const NumericError&) {
        valid[e] = false;
      }
    });
    for (std::size_t e = 0; e < E; ++e) {
      eps[e].times.push_back(static_cast<double>(i + 1) * ds);
      eps[e].states.push_back(z[e]);
    }
    obs_steps.push_back(std::move(obs));
    act_steps.push_back(std::move(acts));
  }

  TransitionBatch b;
  std::size_t T = 0;
  for (std::size_t e = 0; e < E; ++e) {
    if (valid[e]) T += N;
  }
  const auto D = obs_steps[0].cols();
  b.obs.resize(static_cast<Eigen::Index>(T), D);
  b.actions.resize(static_cast<Eigen::Index>(T), 2);
  Eigen::Index row = 0;
  for (std::size_t e = 0; e < E; ++e) {
    if (!valid[e]) continue;
    EpisodeRecord& ep = eps[e];
    ep.terminal = terminal_cost(*systems[e], z[e].a);
    ep.running = std::accumulate(ep.rewards.begin(), ep.rewards.end(), 0.0);
    ep.rewards.push_back(ep.terminal);
    ep.objective = ep.running + ep.terminal;
    const std::vector<double> R = returns_to_go(ep.rewards, config.gamma);
    const std::vector<double> A = gae(ep.rewards, values[e], config.gamma, config.gae_lambda);
    for (std::size_t i = 0; i < N; ++i, ++row) {
      const auto ee = static_cast<Eigen::Index>(e);
      b.obs.row(row) = obs_steps[i].row(ee);
      b.actions.row(row) = act_steps[i].row(ee);
      b.log_probs.push_back(logp[e][i]);
      b.rewards.push_back(ep.rewards[i]);
      b.returns.push_back(R[i]);
      b.values.push_back(values[e][i]);
      b.advantages.push_back(A[i]);
      b.value_targets.push_back(A[i] + values[e][i]);
    }
    b.episodes.push_back(std::move(ep));
  }
  return b;
}

std::vector<double> normalized_advantages(const std::vector<double>& advantages) {
  if (advantages.empty()) return {};
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (advantages[i] - mean) / (sd + 1e-8);
  return out;
}

namespace {

// d log pi / d mean and d log pi / d log_var for one row.
void log_prob_grads(const double* u, const double* mean, const double* log_var, double* d_mean,
                    double* d_log_var) {
  for (std::size_t j = 0; j < 2; ++j) {
    const double inv_var = std::exp(-log_var[j]);
    const double d = u[j] - mean[j];
    d_mean[j] = d * inv_var;
    d_log_var[j] = -0.5 + 0.5 * d * d * inv_var;
  }
}

}  // namespace

PpoLoss ppo_loss(const PpoAgent& agent, const TransitionBatch& batch,
                 const std::vector<double>& adv, const std::vector<std::size_t>& idx,
                 const RlConfig& config, PpoGrads* grads) {
  if (idx.empty()) throw ConfigError("ppo_loss: empty minibatch");
  const double m = static_cast<double>(idx.size());
  Matrix obs = select_rows(batch.obs, idx);
  ConvNet::Cache actor_cache, critic_cache;
  Matrix mean = agent.actor.net.forward(obs, nullptr, grads ? &actor_cache : nullptr);
  Matrix value = agent.critic.forward(obs, nullptr, grads ? &critic_cache : nullptr);
  const double* lv = agent.actor.log_var.data();

  PpoLoss L;
  Matrix d_mean = Matrix::Zero(mean.rows(), 2);
  Matrix d_value(value.rows(), 1);
  Tensor d_log_var(2);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const std::size_t t = idx[k];
    const double* u = batch.actions.row(static_cast<Eigen::Index>(t)).data();
    const double lp = gaussian_log_prob(u, mean.row(kk).data(), lv, 2);
    const double ratio = std::exp(lp - batch.log_probs[t]);
    const double A = -adv[t];
    const double clipped = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    const double s1 = ratio * A, s2 = clipped * A;
    L.policy -= std::min(s1, s2) / m;
    L.approx_kl += (batch.log_probs[t] - lp) / m;
    if (std::abs(ratio - 1.0) > config.clip) L.clip_fraction += 1.0 / m;
    L.max_ratio_deviation = std::max(L.max_ratio_deviation, std::abs(ratio - 1.0));
    const double dv = value(kk, 0) - batch.value_targets[t];
    L.value += config.critic_weight * dv * dv / m;
    if (grads) {
      const double g_ratio = s1 <= s2 ? A : 0.0;
      const double g_lp = -g_ratio * ratio / m;
      double dm[2], dl[2];
      log_prob_grads(u, mean.row(kk).data(), lv, dm, dl);
      for (std::size_t j = 0; j < 2; ++j) {
        d_mean(kk, static_cast<Eigen::Index>(j)) = g_lp * dm[j];
        d_log_var[j] += g_lp * dl[j];
      }
      d_value(kk, 0) = 2.0 * config.critic_weight * dv / m;
    }
  }
  check_finite(L.policy + L.value, "ppo_loss");
  if (grads) {
    grads->actor = agent.actor.net.zero_grads();
    agent.actor.net.backward(actor_cache, d_mean, grads->actor);
    grads->log_var = d_log_var;
    grads->critic = agent.critic.zero_grads();
    agent.critic.backward(critic_cache, d_value, grads->critic);
  }
  return L;
}

PpoGrads reinforce_grads(const PpoAgent& agent, const TransitionBatch& batch,
                         const std::vector<double>& adv, const std::vector<std::size_t>& idx) {
  const double m = static_cast<double>(idx.size());
  Matrix obs = select_rows(batch.obs, idx);
  ConvNet::Cache cache;
  Matrix mean = agent.actor.net.forward(obs, nullptr, &cache);
  const double* lv = agent.actor.log_var.data();
  Matrix d_mean(mean.rows(), 2);
  Tensor d_log_var(2);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double* u = batch.actions.row(static_cast<Eigen::Index>(idx[k])).data();
    double dm[2], dl[2];
    log_prob_grads(u, mean.row(kk).data(), lv, dm, dl);
    const double w = adv[idx[k]] / m;  // -mean(-adv * grad log pi)
    for (std::size_t j = 0; j < 2; ++j) {
      d_mean(kk, static_cast<Eigen::Index>(j)) = w * dm[j];
      d_log_var[j] += w * dl[j];
    }
  }
  PpoGrads g;
  g.actor = agent.actor.net.zero_grads();
  agent.actor.net.backward(cache, d_mean, g.actor);
  g.log_var = d_log_var;
  return g;
}

PpoUpdateStats ppo_update(PpoAgent& agent, PpoOptimizers& opt, const TransitionBatch& batch,
                          const RlConfig& config, double lr, std::mt19937_64& rng) {
  if (batch.size() == 0) throw ConfigError("ppo_update: empty batch");
  const std::vector<double> adv = normalized_advantages(batch.advantages);
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  PpoUpdateStats st;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_kl = 0.0;
    std::size_t mbs = 0;
    for (std::size_t start = 0; start < order.size(); start += config.minibatch) {
      const std::size_t end = std::min(order.size(), start + config.minibatch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      PpoGrads g;
      PpoLoss L = ppo_loss(agent, batch, adv, idx, config, &g);
      std::vector<Tensor*> ap = agent.actor.net.parameters();
      ap.push_back(&agent.actor.log_var);
      g.actor.push_back(g.log_var);
      opt.actor.step(ap, g.actor, lr);
      std::vector<Tensor*> cp = agent.critic.parameters();
      opt.critic.step(cp, g.critic, lr);
      st.last = L;
      st.mean_policy += L.policy;
      st.mean_value += L.value;
      epoch_kl += L.approx_kl;
      ++steps;
      ++mbs;
    }
    ++st.epochs_run;
    if (config.target_kl > 0.0 && epoch_kl / static_cast<double>(mbs) > config.target_kl) {
      st.kl_stop = true;
      break;
    }
  }
  st.mean_policy /= static_cast<double>(steps);
  st.mean_value /= static_cast<double>(steps);
  return st;
}

Td3Agent Td3Agent::create(const RlConfig& config, const ProblemConfig& problem) {
  Td3Agent a;
  a.actor = ConvNet::orthogonal(actor_spec(config, problem), derive_seed(config.seed, 20), 0.01);
  for (std::size_t k = 0; k < 2; ++k) {
    a.critics[k] = ConvNet::orthogonal(critic_spec(config, problem, 2), derive_seed(config.seed, 21 + k), 1.0);
  }
  a.actor_target = a.actor;
  a.critic_targets = a.critics;
  a.normalizer = ObsNormalizer(a.actor.spec().input_size(), config.ema_rate);
  return a;
}

void Td3Agent::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("Td3Agent::save: cannot open " + path);
  os.write(kTd3Magic, sizeof kTd3Magic);
  actor.save(os);
  for (const ConvNet& c : critics) c.save(os);
  actor_target.save(os);
  for (const ConvNet& c : critic_targets) c.save(os);
  normalizer.save(os);
  if (!os) throw Error("Td3Agent::save: write failed for " + path);
}

Td3Agent Td3Agent::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("Td3Agent::load: cannot open " + path);
  expect_magic(is, kTd3Magic, "Td3Agent::load");
  Td3Agent a;
  a.actor = ConvNet::load(is);
  for (ConvNet& c : a.critics) c = ConvNet::load(is);
  a.actor_target = ConvNet::load(is);
  for (ConvNet& c : a.critic_targets) c = ConvNet::load(is);
  a.normalizer = ObsNormalizer::load(is);
  return a;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t obs_dim)
    : capacity_(capacity),
      dim_(obs_dim),
      obs_(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(obs_dim)),
      next_obs_(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(obs_dim)),
      actions_(static_cast<Eigen::Index>(capacity), 2),
      rewards_(capacity),
      done_(capacity) {
  if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(const std::vector<double>& obs, std::array<double, 2> u, double reward,
                       const std::vector<double>& next_obs, bool done) {
  if (obs.size() != dim_ || next_obs.size() != dim_) throw DimensionError("ReplayBuffer::add: width");
  const auto h = static_cast<Eigen::Index>(head_);
  obs_.row(h) = Eigen::Map<const Eigen::RowVectorXd>(obs.data(), static_cast<Eigen::Index>(dim_));
  next_obs_.row(h) = Eigen::Map<const Eigen::RowVectorXd>(next_obs.data(), static_cast<Eigen::Index>(dim_));
  actions_(h, 0) = u[0];
  actions_(h, 1) = u[1];
  rewards_[head_] = reward;
  done_[head_] = done ? 1.0 : 0.0;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

ReplayBuffer::Sample ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (size_ == 0) throw ConfigError("ReplayBuffer::sample: empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  Sample s;
  s.obs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
  s.next_obs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
  s.actions.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = pick(rng);
    const auto kk = static_cast<Eigen::Index>(k), ii = static_cast<Eigen::Index>(i);
    s.obs.row(kk) = obs_.row(ii);
    s.next_obs.row(kk) = next_obs_.row(ii);
    s.actions.row(kk) = actions_.row(ii);
    s.rewards.push_back(rewards_[i]);
    s.done.push_back(done_[i]);
  }
  return s;
}

std::vector<double> td3_targets(const Td3Agent& agent, const Matrix& next_obs,
                                const std::vector<double>& rewards,
                                const std::vector<double>& done, const RlConfig& config,
                                std::mt19937_64& rng, std::array<std::vector<double>, 2>* each) {
  const double bound = config.td3_max_action;
  Matrix a = td3_action(agent.actor_target, next_obs, bound);
  std::normal_distribution<double> normal(0.0, config.td3_target_noise);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      a(i, j) += std::clamp(normal(rng), -config.td3_noise_clip, config.td3_noise_clip);
      a(i, j) = std::clamp(a(i, j), -bound, bound);
    }
  }
  const Matrix q1 = agent.critic_targets[0].forward(next_obs, &a);
  const Matrix q2 = agent.critic_targets[1].forward(next_obs, &a);
  std::vector<double> y(rewards.size());
  if (each) {
    (*each)[0].resize(y.size());
    (*each)[1].resize(y.size());
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double cont = config.gamma * (1.0 - done[i]);
    y[i] = rewards[i] + cont * std::min(q1(ii, 0), q2(ii, 0));
    if (each) {
      (*each)[0][i] = rewards[i] + cont * q1(ii, 0);
      (*each)[1][i] = rewards[i] + cont * q2(ii, 0);
    }
  }
  return y;
}

Td3UpdateStats td3_update(Td3Agent& agent, Td3Optimizers& opt, const ReplayBuffer::Sample& s,
                          const RlConfig& config, double lr, std::size_t update_index,
                          std::mt19937_64& rng) {
  const std::vector<double> y = td3_targets(agent, s.next_obs, s.rewards, s.done, config, rng);
  const double m = static_cast<double>(y.size());
  Td3UpdateStats st;
  for (std::size_t k = 0; k < 2; ++k) {
    ConvNet::Cache cache;
    Matrix q = agent.critics[k].forward(s.obs, &s.actions, &cache);
    Matrix d(q.rows(), 1);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double r = q(i, 0) - y[static_cast<std::size_t>(i)];
      loss += r * r / m;
      d(i, 0) = 2.0 * r / m;
    }
    check_finite(loss, "td3 critic");
    std::vector<Tensor> g = agent.critics[k].zero_grads();
    agent.critics[k].backward(cache, d, g);
    std::vector<Tensor*> p = agent.critics[k].parameters();
    opt.critics[k].step(p, g, lr);
    st.critic_loss += 0.5 * loss;
  }
  if (update_index % config.td3_delay == 0) {
    ConvNet::Cache actor_cache, critic_cache;
    const double bound = config.td3_max_action;
    Matrix a = td3_action(agent.actor, s.obs, bound, &actor_cache);
    Matrix q = agent.critics[0].forward(s.obs, &a, &critic_cache);
    st.actor_loss = -q.mean();
    check_finite(st.actor_loss, "td3 actor");
    Matrix d = Matrix::Constant(q.rows(), 1, -1.0 / m);
    std::vector<Tensor> scratch = agent.critics[0].zero_grads();
    Matrix d_a = agent.critics[0].backward(critic_cache, d, scratch);
    // d(bound tanh(x))/dx = bound - a^2 / bound
    d_a.array() *= bound - a.array().square() / bound;
    std::vector<Tensor> g = agent.actor.zero_grads();
    agent.actor.backward(actor_cache, d_a, g);
    std::vector<Tensor*> p = agent.actor.parameters();
    opt.actor.step(p, g, lr);
    agent.actor_target.soft_update(agent.actor, config.td3_tau);
    for (std::size_t k = 0; k < 2; ++k) agent.critic_targets[k].soft_update(agent.critics[k], config.td3_tau);
    st.actor_updated = true;
  }
  return st;
}

std::vector<std::string> ppo_loss_names() { return {"policy_loss", "value_loss", "approx_kl"}; }
std::vector<std::string> td3_loss_names() { return {"critic_loss", "actor_loss"}; }

PpoTrainer::PpoTrainer(RlConfig config, ProblemConfig problem)
    : config_(config), problem_(problem) {
  config_.validate();
  pool_ = sample_pool(problem_, config_.pool, config_.seed);
  agent_ = PpoAgent::create(config_, problem_);
}

RlTrainResult PpoTrainer::train(const std::vector<FemSystemPtr>& validation, const MetricsSink& sink,
                                const RlIterationHook& hook) {
  RlTrainResult result;
  PpoOptimizers opt;
  std::mt19937_64 pick_rng(derive_seed(config_.seed, 2));
  std::mt19937_64 shuffle_rng(derive_seed(config_.seed, 4));
  std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
  const std::uint64_t per_round = config_.envs * problem_.steps;
  std::vector<double> losses(3, 0.0);
  double lr = config_.lr0;

  auto measure = [&]() {
    std::vector<double> per = evaluate_policy(validation, mean_policy(agent_.actor.net, agent_.normalizer));
    MetricsRow row = validation_row(result.updates, result.pde_solves, per, losses, lr);
    result.validation.push_back(row);
    if (sink) sink(row);
  };
  measure();
  std::uint64_t next_validation = config_.validate_every_solves;

  while (result.pde_solves + per_round <= config_.max_solves) {
    std::vector<const FemSystem*> envs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t e = 0; e < config_.envs; ++e) {
      envs.push_back(pool_[pick(pick_rng)].get());
      seeds.push_back(derive_seed(config_.seed, 3, result.updates * config_.envs + e));
    }
    TransitionBatch batch = collect_episodes(agent_, envs, seeds, config_);
    result.pde_solves += per_round;
    lr = decayed_learning_rate(config_.lr0, config_.decay, config_.lr_floor, result.updates);
    PpoUpdateStats st = ppo_update(agent_, opt, batch, config_, lr, shuffle_rng);
    ++result.updates;
    losses = {st.mean_policy, st.mean_value, st.last.approx_kl};
    if (hook) hook(result.updates, result.pde_solves);
    if (config_.validate_every_solves != 0 && result.pde_solves >= next_validation) {
      measure();
      while (next_validation <= result.pde_solves) next_validation += config_.validate_every_solves;
    }
  }
  if (result.validation.back().pde_solves != result.pde_solves) measure();
  return result;
}

Td3Trainer::Td3Trainer(RlConfig config, ProblemConfig problem)
    : config_(config), problem_(problem) {
  config_.validate();
  pool_ = sample_pool(problem_, config_.pool, config_.seed);
  agent_ = Td3Agent::create(config_, problem_);
}

RlTrainResult Td3Trainer::train(const std::vector<FemSystemPtr>& validation, const MetricsSink& sink,
                                const RlIterationHook& hook) {
  RlTrainResult result;
  Td3Optimizers opt;
  std::mt19937_64 pick_rng(derive_seed(config_.seed, 2));
  std::mt19937_64 noise_rng(derive_seed(config_.seed, 3));
  std::mt19937_64 sample_rng(derive_seed(config_.seed, 4));
  std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
  const std::size_t E = config_.envs, N = problem_.steps;
  const double ds = problem_.ds;
  const std::uint64_t per_round = E * N;
  ReplayBuffer buffer(config_.replay_capacity, agent_.actor.spec().input_size());
  std::vector<double> losses(2, 0.0);
  double lr = config_.lr0;
  std::size_t transitions = 0, rounds = 0;
  double owed = 0.0;

  auto measure = [&]() {
    std::vector<double> per = evaluate_policy(validation, mean_policy(agent_.actor, agent_.normalizer, config_.td3_max_action));
    MetricsRow row = validation_row(result.updates, result.pde_solves, per, losses, lr);
    result.validation.push_back(row);
    if (sink) sink(row);
  };
  measure();
  std::uint64_t next_validation = config_.validate_every_solves;

  while (result.pde_solves + per_round <= config_.max_solves) {
    lr = decayed_learning_rate(config_.lr0, config_.decay, config_.lr_floor, rounds);
    std::vector<const FemSystem*> envs;
    for (std::size_t e = 0; e < E; ++e) envs.push_back(pool_[pick(pick_rng)].get());
    std::vector<State> z(E);
    for (std::size_t e = 0; e < E; ++e) z[e] = initial_state(*envs[e]);
    double critic_sum = 0.0, actor_sum = 0.0;
    std::size_t critic_n = 0, actor_n = 0;

    for (std::size_t i = 0; i < N; ++i) {
      const double s = static_cast<double>(i) * ds;
      std::vector<std::vector<double>> raw(E);
      for (std::size_t e = 0; e < E; ++e) raw[e] = observation(*envs[e], s, z[e]);
      Matrix raw_m = rows_of(raw);
      agent_.normalizer.update(raw_m);
      std::vector<std::array<double, 2>> u(E);
      const bool warm = transitions < config_.td3_warmup;
      Matrix mean;
      if (!warm) mean = td3_action(agent_.actor, agent_.normalizer.normalize(raw_m), config_.td3_max_action);
      for (std::size_t e = 0; e < E; ++e) {
        for (std::size_t j = 0; j < 2; ++j) {
          if (warm) {
            std::normal_distribution<double> normal(0.0, config_.td3_warmup_std);
            u[e][j] = normal(noise_rng);
          } else {
            std::normal_distribution<double> normal(0.0, config_.td3_explore_noise);
            u[e][j] = mean(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(j)) + normal(noise_rng);
          }
          u[e][j] = std::clamp(u[e][j], -config_.td3_max_action, config_.td3_max_action);
        }
      }
      std::vector<State> next(E);
      parallel_for(E, [&](std::size_t e) { next[e] = step(*envs[e], z[e], u[e]); });
      const bool last = i + 1 == N;
      for (std::size_t e = 0; e < E; ++e) {
        double cost = running_cost(u[e], ds);
        if (last) cost += terminal_cost(*envs[e], next[e].a);
        buffer.add(raw[e], u[e], -config_.td3_reward_scale * cost, observation(*envs[e], s + ds, next[e]), last);
        z[e] = std::move(next[e]);
      }
      transitions += E;
      if (transitions < config_.td3_warmup || buffer.size() < config_.td3_batch) continue;
      owed += config_.td3_updates_per_transition * static_cast<double>(E);
      while (owed >= 1.0) {
        owed -= 1.0;
        ReplayBuffer::Sample smp = buffer.sample(config_.td3_batch, sample_rng);
        smp.obs = agent_.normalizer.normalize(smp.obs);
        smp.next_obs = agent_.normalizer.normalize(smp.next_obs);
        ++result.updates;
        Td3UpdateStats st = td3_update(agent_, opt, smp, config_, lr, result.updates, noise_rng);
        critic_sum += st.critic_loss;
        ++critic_n;
        if (st.actor_updated) {
          actor_sum += st.actor_loss;
          ++actor_n;
        }
      }
    }
    result.pde_solves += per_round;
    ++rounds;
    if (critic_n > 0) losses[0] = critic_sum / static_cast<double>(critic_n);
    if (actor_n > 0) losses[1] = actor_sum / static_cast<double>(actor_n);
    if (hook) hook(result.updates, result.pde_solves);
    if (config_.validate_every_solves != 0 && result.pde_solves >= next_validation) {
      measure();
      while (next_validation <= result.pde_solves) next_validation += config_.validate_every_solves;
    }
  }
  if (result.validation.back().pde_solves != result.pde_solves) measure();
  return result;
}

}  // namespace hjbctl::rl
