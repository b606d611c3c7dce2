#ifndef HJBCTL_VALUE_NETWORK_HPP_
#define HJBCTL_VALUE_NETWORK_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hjbctl/tape.hpp"
#include "hjbctl/tensor.hpp"

namespace hjbctl {

// Network input (s, z, y), concatenated in that order.
struct NetInput {
  double s = 0.0;
  std::vector<double> z;
  std::vector<double> y;
};

struct InputGradient {
  double ds = 0.0;
  std::vector<double> dz;
  std::vector<double> dy;
};

struct ValueNetworkInit {
  std::size_t width = 64;
  std::size_t depth = 4;
  std::uint64_t seed = 0;
  // Standard deviation of opening/hidden weights is scale / sqrt(width).
  double scale = 1.0;
};

// Residual value network
//
//   h1      = sigma(K0 h0 + b0)
//   h_{k+1} = h_k + sigma(K_k h_k + b_k),   k = 1..depth
//   Phi     = w . h_{depth+1}
//
// with sigma(x) = log(exp(x) + exp(-x)), so sigma' = tanh. The input
// h0 = (s, z, y) * input_scale has 1 + state_dim + param_dim entries.
class ValueNetwork {
 public:
  ValueNetwork() = default;
  ValueNetwork(std::size_t width, std::size_t depth, std::size_t state_dim,
               std::size_t param_dim);

  // Scaled-normal opening/hidden weights, zero biases, zero head, so the
  // initial value function is identically zero. Deterministic in seed.
  static ValueNetwork initialize(std::size_t state_dim, std::size_t param_dim,
                                 const ValueNetworkInit& init);

  std::size_t width() const { return width_; }
  std::size_t depth() const { return depth_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t param_dim() const { return param_dim_; }
  std::size_t input_dim() const { return 1 + state_dim_ + param_dim_; }
  std::uint64_t seed() const { return seed_; }

  // K0, K1..K_depth, b0..b_depth, w in that order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  Tensor& input_scale() { return input_scale_; }
  const Tensor& input_scale() const { return input_scale_; }

  double forward(const NetInput& in) const;
  InputGradient grad_input(const NetInput& in) const;

  // Weights placed on a tape; trainable leaves when `trainable`.
  struct Bound {
    std::vector<ad::Var> params;
  };
  Bound bind(ad::Tape& tape, bool trainable) const;

  // Tape variants taking the already concatenated unscaled input (s, z, y).
  ad::Var forward(const Bound& w, ad::Var input) const;
  struct ValueAndGrad {
    ad::Var value;
    // dPhi/d(input) as tape nodes, length input_dim().
    ad::Var grad;
  };
  ad::Var assemble_input(ad::Tape& tape, double s, ad::Var z,
                         const std::vector<double>& y) const;
  ValueAndGrad value_and_grad(const Bound& w, ad::Var input) const;

  void save(const std::string& path) const;
  static ValueNetwork load(const std::string& path);

  friend bool operator==(const ValueNetwork& a, const ValueNetwork& b);

 private:
  void check_input(const NetInput& in) const;

  std::size_t width_ = 0;
  std::size_t depth_ = 0;
  std::size_t state_dim_ = 0;
  std::size_t param_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> kernels_;  // depth + 1
  std::vector<Tensor> biases_;   // depth + 1
  Tensor head_;
  Tensor input_scale_;
};

// FNV-1a over the raw parameter bytes; used to detect weight mutation.
std::uint64_t weight_hash(const ValueNetwork& net);

}  // namespace hjbctl

#endif  // HJBCTL_VALUE_NETWORK_HPP_
