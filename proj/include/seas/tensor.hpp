#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "seas/errors.hpp"

namespace seas {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of rank 1..4 backed by a flat Eigen array.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(numel(shape_))) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < t.data_.size(); ++i) t.data_[i] = stddev * Scalar(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  Eigen::Index size() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Array data_;
};

namespace ad {

template <typename Scalar>
struct Node {
  using Array = typename Tensor<Scalar>::Array;

  Tensor<Scalar> value;
  Array grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Array& ensure_grad() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
    return grad;
  }
};

/// Handle to a node of the reverse-mode tape. Copies share the node.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  using Array = typename Tensor<Scalar>::Array;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    return Var(n);
  }
  static Var parameter(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(n);
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Gradient accumulated by backward(); zeros if nothing flowed here.
  Array grad() const {
    if (node_->grad.size() != node_->value.size()) return Array::Zero(node_->value.size());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad = Array(); }

  Scalar item() const {
    if (node_->value.size() != 1) throw DimensionError("item() on non-scalar " + shape_string(shape()));
    return node_->value[0];
  }

  /// Seeds d(this)/d(this) = 1 and propagates through the recorded graph.
  void backward();

  Node<Scalar>& node() const { return *node_; }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// While alive, ops record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result; parents/backward are kept only if some parent needs grad.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward_fn) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      for (const auto& p : parents) n->parents.push_back(p.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var<Scalar>(n);
}

template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, const std::vector<Var<Scalar>>& parents,
                        std::function<void(Node<Scalar>&)> backward_fn) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      for (const auto& p : parents) n->parents.push_back(p.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var<Scalar>(n);
}

}  // namespace ad
}  // namespace seas
