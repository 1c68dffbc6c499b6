#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hournas/common.hpp"

namespace hournas {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Shared handle to an n-dimensional array with an optional gradient buffer.
///
/// Copies alias the same storage (parameters are shared between a model and
/// the graphs that use them); use clone() for a detached deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;

  /// Gradient buffer; empty span when no gradient has been allocated.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);

  /// True when gradients must flow into this tensor: a requires_grad leaf or
  /// the output of a recorded op with at least one tracked input.
  bool tracked() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    bool tracked = false;
  };
  std::shared_ptr<Storage> s_;

  void ensure_grad();

  friend class Graph;
};

/// Reverse-mode tape. Ops append nodes in execution order, which is a
/// topological order; backward() replays them in exact reverse and then
/// releases the tape. Calling backward() again without re-recording throws.
class Graph {
 public:
  Graph() = default;
  explicit Graph(bool enabled) : enabled_(enabled) {}

  /// A tape that never records; forward passes only.
  static Graph inference() { return Graph(false); }

  bool enabled() const { return enabled_; }

  /// Registers `output = f(inputs)` with its vector-Jacobian rule. The rule
  /// runs during backward() and accumulates into the tracked inputs' grads.
  /// Returns false (and records nothing) when no input is tracked.
  bool record(std::initializer_list<Tensor> inputs, Tensor& output,
              std::function<void()> backward_rule);

  /// Seeds d(root)/d(root) = 1 and runs all rules in reverse order.
  void backward(Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::function<void()> rule;
  };
  std::vector<Node> nodes_;
  bool enabled_ = true;
  bool consumed_ = false;
};

}  // namespace hournas
