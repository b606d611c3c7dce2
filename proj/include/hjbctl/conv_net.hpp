#ifndef HJBCTL_CONV_NET_HPP_
#define HJBCTL_CONV_NET_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hjbctl/tensor.hpp"

namespace hjbctl::rl {

// One sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvNetSpec {
  std::size_t channels = 5;  // input channels, each grid x grid
  std::size_t grid = 16;
  std::array<std::size_t, 3> conv{8, 16, 16};
  std::array<std::size_t, 2> dense{64, 64};
  // Inputs appended to the flattened convolutional features (the action for
  // a Q critic).
  std::size_t extra_inputs = 0;
  std::size_t outputs = 1;

  std::size_t input_size() const { return channels * grid * grid; }
  friend bool operator==(const ConvNetSpec&, const ConvNetSpec&) = default;
};

// Three 3x3 same-padded convolutions, each followed by tanh and 2x2 max
// pooling (ceil mode), then two tanh dense layers and a linear head.
// Rows are evaluated independently, so a sample's output does not depend on
// the batch it is evaluated in.
class ConvNet {
 public:
  ConvNet() = default;
  explicit ConvNet(const ConvNetSpec& spec);

  // Orthogonal weights with gain sqrt(2) for hidden layers and `head_gain`
  // for the head, zero biases.
  static ConvNet orthogonal(const ConvNetSpec& spec, std::uint64_t seed, double head_gain);

  const ConvNetSpec& spec() const { return spec_; }
  std::size_t flat_features() const;

  // Conv kernels/biases, dense weights/biases, head weight/bias, in that order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor> zero_grads() const;

  struct Cache {
    std::vector<std::vector<Matrix>> cols;       // [layer][sample] im2col
    std::vector<std::vector<Matrix>> act;        // [layer][sample] tanh(conv)
    std::vector<std::vector<std::vector<std::size_t>>> argmax;  // [layer][sample]
    Matrix flat;                                 // features + extra inputs
    std::array<Matrix, 2> hidden;                // tanh dense outputs
  };

  // x: batch x input_size, extra: batch x extra_inputs (may be null when
  // extra_inputs == 0). The cache is filled when non-null.
  Matrix forward(const Matrix& x, const Matrix* extra = nullptr, Cache* cache = nullptr) const;

  // Adds d(sum d_out . out)/d(params) into grads and returns the gradient
  // with respect to the extra inputs.
  Matrix backward(const Cache& cache, const Matrix& d_out, std::vector<Tensor>& grads) const;

  // theta <- tau * src + (1 - tau) * theta
  void soft_update(const ConvNet& src, double tau);

  void save(std::ostream& os) const;
  static ConvNet load(std::istream& is);

  friend bool operator==(const ConvNet& a, const ConvNet& b);

 private:
  std::size_t layer_grid(std::size_t k) const;  // input side length of conv layer k

  ConvNetSpec spec_;
  std::vector<Tensor> params_;
};

// Tensor I/O shared by the RL checkpoint formats.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace hjbctl::rl

#endif  // HJBCTL_CONV_NET_HPP_
