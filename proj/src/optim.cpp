#include "hournas/optim.hpp"

namespace hournas::optim {

namespace {

void require_grad(const Tensor& p, std::size_t index) {
  if (!p.has_grad())
    throw Error("optimizer: parameter #" + std::to_string(index) + " (shape " + to_string(p.shape()) +
                ") has no gradient");
}

}  // namespace

void sgd_step(std::span<Tensor> params, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) require_grad(params[i], i);
  for (auto& p : params) {
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<Real>(w[i] - lr * g[i]);
    p.zero_grad();
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opt)
    : params_(std::move(params)), slots_(params_.size()), opt_(opt) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) require_grad(params_[i], i);
  for (std::size_t i = 0; i < params_.size(); ++i)
    slots_[i].apply(params_[i].data(), params_[i].grad(), opt_);
}

}  // namespace hournas::optim
