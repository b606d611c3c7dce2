#include "hjbctl/optim.hpp"

#include <algorithm>
#include <cmath>

namespace hjbctl {

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                double lr) {
  if (params.size() != grads.size()) {
    throw DimensionError("Adam::step: parameter/gradient count mismatch");
  }
  if (m_.empty()) {
    for (Tensor* p : params) {
      m_.push_back(*p);
      m_.back().fill(0.0);
      v_.push_back(m_.back());
    }
  }
  if (m_.size() != params.size()) {
    throw DimensionError("Adam::step: parameter list changed between steps");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (g.size() != p.size() || m_[k].size() != p.size()) {
      throw DimensionError("Adam::step: gradient shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[k][i] = config_.beta1 * m_[k][i] + (1.0 - config_.beta1) * g[i];
      v_[k][i] = config_.beta2 * v_[k][i] + (1.0 - config_.beta2) * g[i] * g[i];
      double mhat = m_[k][i] / bc1;
      double vhat = v_[k][i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    if (!p.all_finite()) throw NumericError("Adam::step: parameters became non-finite");
  }
}

double decayed_learning_rate(double lr0, double decay, double lr_floor,
                             std::size_t k) {
  return std::max(lr_floor, lr0 * std::pow(decay, static_cast<double>(k)));
}

}  // namespace hjbctl
