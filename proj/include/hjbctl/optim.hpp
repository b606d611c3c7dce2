#ifndef HJBCTL_OPTIM_HPP_
#define HJBCTL_OPTIM_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "hjbctl/tensor.hpp"

namespace hjbctl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are laid out to match the
// parameter list passed on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads,
            double lr);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// lr0 * decay^k, floored at lr_floor.
double decayed_learning_rate(double lr0, double decay, double lr_floor,
                             std::size_t k);

}  // namespace hjbctl

#endif  // HJBCTL_OPTIM_HPP_
