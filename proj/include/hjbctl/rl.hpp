#ifndef HJBCTL_RL_HPP_
#define HJBCTL_RL_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hjbctl/conv_net.hpp"
#include "hjbctl/metrics.hpp"
#include "hjbctl/optim.hpp"
#include "hjbctl/pde_env.hpp"

namespace hjbctl::rl {

// Channel 0 holds the concentrations on the grid; channels 1.. broadcast
// alpha, s and each component of y.
std::size_t observation_channels(Setup setup);
std::vector<double> observation(const FemSystem& sys, double s, const State& z);

// Elementwise exponential moving averages of the observation mean and
// variance. For a batch X with rows x_b:
//   mean <- (1 - r) mean + r avg_b(x_b)
//   var  <- (1 - r) var  + r avg_b((x_b - mean)^2)   (with the updated mean)
class ObsNormalizer {
 public:
  ObsNormalizer() = default;
  ObsNormalizer(std::size_t dim, double rate, double eps = 1e-8);

  void update(const Matrix& batch);
  Matrix normalize(const Matrix& batch) const;

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& var() const { return var_; }
  std::size_t updates() const { return updates_; }

  void save(std::ostream& os) const;
  static ObsNormalizer load(std::istream& is);
  friend bool operator==(const ObsNormalizer&, const ObsNormalizer&) = default;

 private:
  double rate_ = 0.01;
  double eps_ = 1e-8;
  std::vector<double> mean_;
  std::vector<double> var_;
  std::size_t updates_ = 0;
};

struct RlConfig {
  // Shared
  double lr0 = 1e-4;
  double decay = 0.99;  // per update
  double lr_floor = 1e-5;
  std::size_t envs = 8;  // episodes collected per round
  std::size_t pool = 100;
  double gamma = 1.0;
  double ema_rate = 0.01;
  std::uint64_t seed = 0;
  std::uint64_t max_solves = 20000;
  std::uint64_t validate_every_solves = 1000;  // 0: only at start and end
  std::array<std::size_t, 3> conv{8, 16, 16};
  std::array<std::size_t, 2> dense{64, 64};

  // PPO
  std::size_t epochs = 4;
  std::size_t minibatch = 64;
  double clip = 0.2;
  double gae_lambda = 0.95;
  double critic_weight = 0.5;  // beta5
  double target_kl = 0.05;     // epochs stop once exceeded; 0 disables
  double init_log_var = -2.0;

  // TD3
  std::size_t td3_batch = 64;
  std::size_t td3_delay = 2;
  double td3_target_noise = 0.2;
  double td3_noise_clip = 0.5;
  double td3_tau = 0.005;
  double td3_explore_noise = 0.1;
  double td3_max_action = 1.0;  // actions are td3_max_action * tanh(head)
  double td3_reward_scale = 1.0;  // critics learn reward_scale * (-cost)
  std::size_t td3_warmup = 500;            // transitions with N(0, warmup_std) actions
  double td3_warmup_std = 0.5;
  double td3_updates_per_transition = 0.25;
  std::size_t replay_capacity = 100000;

  void validate() const;
};

ConvNetSpec actor_spec(const RlConfig& config, const ProblemConfig& problem);
ConvNetSpec critic_spec(const RlConfig& config, const ProblemConfig& problem,
                        std::size_t extra_inputs);

// Diagonal Gaussian policy: mean from the network head, log-variance a
// state-independent trainable vector.
struct GaussianActor {
  ConvNet net;
  Tensor log_var;  // one entry per action dimension
};

double gaussian_log_prob(const double* u, const double* mean, const double* log_var,
                         std::size_t dim);

struct ActResult {
  std::array<double, 2> u{};
  double log_prob = 0.0;
};
// obs is one normalized observation row; `rng` is unused when deterministic.
ActResult act(const GaussianActor& actor, const Matrix& obs, std::mt19937_64& rng,
              bool deterministic);

struct PpoAgent {
  GaussianActor actor;
  ConvNet critic;
  ObsNormalizer normalizer;

  static PpoAgent create(const RlConfig& config, const ProblemConfig& problem);
  void save(const std::string& path) const;
  static PpoAgent load(const std::string& path);
};

// Deterministic (mean-action) policy with frozen normalization. A positive
// `bound` squashes the head output as bound * tanh(.).
Policy mean_policy(const ConvNet& actor, const ObsNormalizer& normalizer, double bound = 0.0);

// bound * tanh(actor(obs)); fills `cache` when non-null.
Matrix td3_action(const ConvNet& actor, const Matrix& obs, double bound,
                  ConvNet::Cache* cache = nullptr);

// One row per decision; episodes are stored back to back.
struct TransitionBatch {
  Matrix obs;       // normalized with the statistics used at collection
  Matrix actions;   // T x 2
  std::vector<double> log_probs;
  std::vector<double> rewards;  // running cost per decision; the terminal
                                // cost is a separate reward r_N per episode
  std::vector<double> returns;  // cost-to-go R_i including the terminal cost
  std::vector<double> values;   // critic estimate of R_i at collection
  std::vector<double> advantages;     // GAE on costs: positive means worse than expected
  std::vector<double> value_targets;  // advantages + values
  std::vector<EpisodeRecord> episodes;
  std::size_t size() const { return log_probs.size(); }
};

// Undiscounted returns-to-go over r_0..r_N: R_N = r_N, R_i = r_i + gamma R_{i+1}.
std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma);
// GAE over N decisions with V(z_N) = r_N (the terminal cost is known exactly).
std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        double gamma, double lambda);

// Runs one episode per system with the frozen actor. Observations of all
// environments at step i update the normalizer (when `update_normalizer`)
// before being normalized; each environment samples with its own seed.
TransitionBatch collect_episodes(PpoAgent& agent, const std::vector<const FemSystem*>& systems,
                                 const std::vector<std::uint64_t>& seeds, const RlConfig& config,
                                 bool update_normalizer = true);

struct PpoLoss {
  double policy = 0.0;
  double value = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double max_ratio_deviation = 0.0;  // max |ratio - 1|
};
struct PpoGrads {
  std::vector<Tensor> actor;
  Tensor log_var;
  std::vector<Tensor> critic;
};
// Loss and gradients on the rows `idx` of `batch` with advantages already
// normalized in `adv`. The policy loss is minimized:
//   -mean(min(ratio * A, clip(ratio, 1 - c, 1 + c) * A)),  A = -advantage.
PpoLoss ppo_loss(const PpoAgent& agent, const TransitionBatch& batch,
                 const std::vector<double>& adv, const std::vector<std::size_t>& idx,
                 const RlConfig& config, PpoGrads* grads);
// -mean(A * grad log pi), the REINFORCE-with-baseline direction.
PpoGrads reinforce_grads(const PpoAgent& agent, const TransitionBatch& batch,
                         const std::vector<double>& adv, const std::vector<std::size_t>& idx);
std::vector<double> normalized_advantages(const std::vector<double>& advantages);

struct PpoOptimizers {
  Adam actor;
  Adam critic;
};
struct PpoUpdateStats {
  PpoLoss last;
  double mean_policy = 0.0;
  double mean_value = 0.0;
  std::size_t epochs_run = 0;
  bool kl_stop = false;
};
PpoUpdateStats ppo_update(PpoAgent& agent, PpoOptimizers& opt, const TransitionBatch& batch,
                          const RlConfig& config, double lr, std::mt19937_64& rng);

// TD3 (rewards are negative costs).
struct Td3Agent {
  ConvNet actor;
  std::array<ConvNet, 2> critics;
  ConvNet actor_target;
  std::array<ConvNet, 2> critic_targets;
  ObsNormalizer normalizer;

  static Td3Agent create(const RlConfig& config, const ProblemConfig& problem);
  void save(const std::string& path) const;
  static Td3Agent load(const std::string& path);
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t obs_dim);
  // Raw (unnormalized) observations.
  void add(const std::vector<double>& obs, std::array<double, 2> u, double reward,
           const std::vector<double>& next_obs, bool done);
  std::size_t size() const { return size_; }

  struct Sample {
    Matrix obs, actions, next_obs;
    std::vector<double> rewards;
    std::vector<double> done;
  };
  Sample sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;
  Matrix obs_, next_obs_, actions_;
  std::vector<double> rewards_, done_;
};

// r + gamma (1 - done) min(Q1', Q2') at the smoothed target action.
std::vector<double> td3_targets(const Td3Agent& agent, const Matrix& next_obs,
                                const std::vector<double>& rewards,
                                const std::vector<double>& done, const RlConfig& config,
                                std::mt19937_64& rng, std::array<std::vector<double>, 2>* each = nullptr);

struct Td3Optimizers {
  Adam actor;
  std::array<Adam, 2> critics;
};
struct Td3UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  bool actor_updated = false;
};
// One critic step on a normalized sample; every td3_delay-th call (counted
// by `update_index`) also steps the actor and blends the targets.
Td3UpdateStats td3_update(Td3Agent& agent, Td3Optimizers& opt, const ReplayBuffer::Sample& s,
                          const RlConfig& config, double lr, std::size_t update_index,
                          std::mt19937_64& rng);

struct RlTrainResult {
  std::vector<MetricsRow> validation;
  std::uint64_t pde_solves = 0;
  std::size_t updates = 0;
};

using RlIterationHook = std::function<void(std::size_t update, std::uint64_t solves)>;

class PpoTrainer {
 public:
  PpoTrainer(RlConfig config, ProblemConfig problem);
  const std::vector<FemSystemPtr>& pool() const { return pool_; }
  RlTrainResult train(const std::vector<FemSystemPtr>& validation, const MetricsSink& sink = {},
                      const RlIterationHook& hook = {});
  const PpoAgent& agent() const { return agent_; }

 private:
  RlConfig config_;
  ProblemConfig problem_;
  std::vector<FemSystemPtr> pool_;
  PpoAgent agent_;
};

class Td3Trainer {
 public:
  Td3Trainer(RlConfig config, ProblemConfig problem);
  const std::vector<FemSystemPtr>& pool() const { return pool_; }
  RlTrainResult train(const std::vector<FemSystemPtr>& validation, const MetricsSink& sink = {},
                      const RlIterationHook& hook = {});
  const Td3Agent& agent() const { return agent_; }

 private:
  RlConfig config_;
  ProblemConfig problem_;
  std::vector<FemSystemPtr> pool_;
  Td3Agent agent_;
};

std::vector<std::string> ppo_loss_names();
std::vector<std::string> td3_loss_names();

}  // namespace hjbctl::rl

#endif  // HJBCTL_RL_HPP_
