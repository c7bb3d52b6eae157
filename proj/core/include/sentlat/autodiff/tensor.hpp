#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sentlat::ad {

using Shape = std::vector<std::size_t>;

/// Thrown whenever operand shapes are incompatible with an op.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle with reverse-mode gradient tracking.
///
/// Copies share the underlying node. Values of tensors that do not require
/// gradients are treated as immutable once created; parameters (leaf tensors
/// with requires_grad) are mutated in place by the optimizer only.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  /// Leading dimension; 1 for scalars.
  std::size_t rows() const;
  /// Product of trailing dimensions; 1 for scalars and vectors' rows.
  std::size_t cols() const;

  std::span<const T> data() const { return node_->value; }
  /// Direct write access. Only legal on leaves (parameters, fresh buffers).
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool is_leaf() const { return !node_->backward; }
  /// Same values, no history, no gradient.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs reverse-mode differentiation from a scalar loss.
/// Gradients accumulate additively into every requires_grad tensor reached.
template <std::floating_point T>
void backward(const Tensor<T>& loss);

}  // namespace sentlat::ad
