#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "hournas/tensor.hpp"

namespace hournas::optim {

/// w -= lr * grad for every parameter, then zero the gradients.
/// Throws if a parameter has no gradient buffer.
void sgd_step(std::span<Tensor> params, double lr);

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for one parameter array.
template <std::floating_point T>
class AdamSlot {
 public:
  /// One bias-corrected Adam update; zeroes `grad` afterwards.
  void apply(std::span<T> value, std::span<T> grad, const AdamOptions& opt) {
    if (m_.size() != value.size()) {
      m_.assign(value.size(), T(0));
      v_.assign(value.size(), T(0));
      step_ = 0;
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m_[i] = static_cast<T>(opt.beta1 * m_[i] + (1.0 - opt.beta1) * g);
      v_[i] = static_cast<T>(opt.beta2 * v_[i] + (1.0 - opt.beta2) * g * g);
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      const double delta = opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
      if (delta != 0.0) value[i] = static_cast<T>(value[i] - delta);
      grad[i] = T(0);
    }
  }

  long steps() const { return step_; }

 private:
  std::vector<T> m_, v_;
  long step_ = 0;
};

/// Adam over a fixed list of tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opt);
  void step();
  const AdamOptions& options() const { return opt_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamSlot<Real>> slots_;
  AdamOptions opt_;
};

}  // namespace hournas::optim
