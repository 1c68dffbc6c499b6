#include "hournas/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace hournas {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : s_(std::make_shared<Storage>()) {
  s_->data.assign(hournas::numel(shape), Real(0));
  s_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  if (values.size() != hournas::numel(shape))
    throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                     std::to_string(hournas::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  s_->shape = std::move(shape);
  s_->data = std::move(values);
  set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<Real>{value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!s_) throw Error("tensor: use of undefined tensor");
  return s_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& sh = shape();
  if (axis >= sh.size())
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " + to_string(sh));
  return sh[axis];
}

std::size_t Tensor::numel() const { return s_ ? s_->data.size() : 0; }

std::span<Real> Tensor::data() { return s_->data; }
std::span<const Real> Tensor::data() const { return s_->data; }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on shape " + to_string(shape()));
  return s_->data[0];
}

std::span<Real> Tensor::grad() { return s_ ? std::span<Real>(s_->grad) : std::span<Real>(); }
std::span<const Real> Tensor::grad() const {
  return s_ ? std::span<const Real>(s_->grad) : std::span<const Real>();
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }

void Tensor::zero_grad() {
  if (s_) std::fill(s_->grad.begin(), s_->grad.end(), Real(0));
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  s_->tracked = on;
  if (on) ensure_grad();
}

bool Tensor::tracked() const { return s_ && s_->tracked; }

Tensor Tensor::clone() const {
  if (!s_) return {};
  return Tensor(s_->shape, s_->data, false);
}

void Tensor::ensure_grad() {
  if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), Real(0));
}

bool Graph::record(std::initializer_list<Tensor> inputs, Tensor& output,
                   std::function<void()> backward_rule) {
  if (consumed_) throw Error("graph: recording onto a graph that already ran backward()");
  if (!enabled_) return false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.tracked();
  if (!any) return false;
  for (auto t : inputs)
    if (t.tracked()) t.ensure_grad();
  output.s_->tracked = true;
  output.ensure_grad();
  nodes_.push_back(Node{std::move(backward_rule)});
  return true;
}

void Graph::backward(Tensor& root) {
  if (consumed_) throw Error("graph: backward() called twice on the same recording");
  if (root.numel() != 1)
    throw ShapeError("graph: backward() needs a scalar root, got shape " + to_string(root.shape()));
  if (!root.tracked()) throw Error("graph: backward() root does not depend on any tracked tensor");
  root.ensure_grad();
  root.s_->grad[0] = Real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->rule();
  nodes_.clear();
  consumed_ = true;
}

}  // namespace hournas
