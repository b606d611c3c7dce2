#ifndef HJBCTL_HJB_TRAINER_HPP_
#define HJBCTL_HJB_TRAINER_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hjbctl/metrics.hpp"
#include "hjbctl/pde_env.hpp"
#include "hjbctl/tape.hpp"
#include "hjbctl/value_network.hpp"

namespace hjbctl {

// Control-affine dynamics dz/ds = f(s, z) + g(s, z) u with running cost
// |u|^2 / 2. Implementations build tape nodes so Hamiltonian terms stay
// differentiable.
class ControlAffineModel {
 public:
  virtual ~ControlAffineModel() = default;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t control_dim() const = 0;
  virtual ad::Var drift(double s, ad::Var z) const = 0;
  // g(s, z)^T p
  virtual ad::Var gain_t(double s, ad::Var z, ad::Var p) const = 0;
};

// z = (a, alpha): f = (M_L^{-1}(phi - (kappa K + C) a), 0),
// g^T p = (Q(alpha) . p_a, p_alpha).
class PdeControlModel final : public ControlAffineModel {
 public:
  explicit PdeControlModel(const FemSystem& sys) : sys_(sys) {}
  std::size_t state_dim() const override { return sys_.state_dim(); }
  std::size_t control_dim() const override { return 2; }
  ad::Var drift(double s, ad::Var z) const override;
  ad::Var gain_t(double s, ad::Var z, ad::Var p) const override;

 private:
  const FemSystem& sys_;
};

// sup_u p.(f + g u) - |u|^2/2 = p.f + |g^T p|^2 / 2, attained at u = g^T p.
ad::Var hamiltonian(const ControlAffineModel& model, double s, ad::Var z, ad::Var p);
// u = -g^T grad_z Phi
ad::Var feedback_control(const ControlAffineModel& model, double s, ad::Var z,
                         ad::Var grad_z);
// dPhi/ds - H(s, z, -grad_z Phi) = dPhi/ds + grad_z Phi . f - |g^T grad_z Phi|^2 / 2,
// which vanishes for the exact value function.
ad::Var hjb_residual(const ControlAffineModel& model, double s, ad::Var z,
                     ad::Var dphi_ds, ad::Var grad_z);

std::array<double, 2> feedback_control(const ValueNetwork& net, const FemSystem& sys,
                                       double s, const State& z);
Policy feedback_policy(const ValueNetwork& net);

struct HjbWeights {
  double beta1 = 1.0;
  double beta2 = 1.0;
  double beta3 = 1.0;
};

struct HjbLossBreakdown {
  double J = 0.0;
  double residual = 0.0;        // beta1 term
  double terminal_value = 0.0;  // beta2 term
  double terminal_grad = 0.0;   // beta3 term

  double penalty() const { return residual + terminal_value + terminal_grad; }
  double total() const { return J + penalty(); }
};

// Feedback rollout of one problem recorded on `tape` with the network bound
// as `w`; returns the scalar loss J + P_HJB as a node plus its breakdown.
struct TapedEpisode {
  ad::Var loss;
  HjbLossBreakdown breakdown;
  EpisodeRecord record;
};
TapedEpisode hjb_episode(ad::Tape& tape, const ValueNetwork& net,
                         const ValueNetwork::Bound& w, const FemSystem& sys,
                         const HjbWeights& beta);

// Penalty of a completed episode with the network held fixed.
HjbLossBreakdown hjb_penalty(const ValueNetwork& net, const EpisodeRecord& episode,
                             const FemSystem& sys, const HjbWeights& beta);

struct HjbConfig {
  HjbWeights beta;
  // lr = max(lr_floor, lr0 * decay^epoch), one epoch = pool / batch iterations.
  double lr0 = 0.075;
  double decay = 0.975;
  double lr_floor = 0.0025;
  std::size_t batch = 20;
  std::size_t pool = 100;
  std::size_t iterations = 100;
  std::uint64_t seed = 0;
  std::size_t validate_every = 10;  // iterations; 0 disables periodic validation
  // Scale concentration inputs by the terminal weight rho h^2, so that the
  // terminal gradient target is O(1) in the scaled coordinates.
  bool mass_scaled_input = true;
  // Stop once the training solve count would exceed this; 0 means no limit.
  std::uint64_t max_solves = 0;
};

struct HjbIterationStats {
  std::size_t iter = 0;
  std::uint64_t pde_solves = 0;
  HjbLossBreakdown mean;
  double lr = 0.0;
};

// Loss and weight gradient averaged over a batch of problems. Gradients are
// reduced in batch order, independent of the worker count.
struct BatchGradient {
  HjbLossBreakdown mean;
  std::vector<Tensor> grads;
};
BatchGradient hjb_batch_gradient(const ValueNetwork& net,
                                 const std::vector<const FemSystem*>& batch,
                                 const HjbWeights& beta);

struct HjbTrainResult {
  ValueNetwork net;
  std::vector<HjbIterationStats> history;
  std::vector<MetricsRow> validation;
  std::uint64_t pde_solves = 0;
};

class HjbTrainer {
 public:
  HjbTrainer(HjbConfig config, ProblemConfig problem, ValueNetworkInit init);

  // Problem pool sampled from the parameter distribution with config.seed.
  const std::vector<FemSystemPtr>& pool() const { return pool_; }

  // Validation runs before the first iteration, every validate_every
  // iterations, and after the last one; each measurement goes to `sink`.
  HjbTrainResult train(const std::vector<FemSystemPtr>& validation,
                       const MetricsSink& sink = {},
                       const std::function<void(const HjbIterationStats&,
                                                const ValueNetwork&)>& on_iter = {});

 private:
  HjbConfig config_;
  ProblemConfig problem_;
  ValueNetworkInit init_;
  std::vector<FemSystemPtr> pool_;
};

// Mean objective and per-problem objectives of the feedback policy.
struct ValidationResult {
  double mean = 0.0;
  std::vector<double> per_problem;
};
ValidationResult validate(const ValueNetwork& net, const std::vector<FemSystemPtr>& systems);

// Loss columns of the HJB metrics rows (last training batch means).
std::vector<std::string> hjb_loss_names();

}  // namespace hjbctl

#endif  // HJBCTL_HJB_TRAINER_HPP_
