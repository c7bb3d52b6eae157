#include "sentlat/autodiff/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace sentlat::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  check_shape(shape);
  auto n = std::make_shared<Node<T>>();
  n->value.assign(shape_size(shape), fill);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return from({}, {v}, requires_grad);
}

template <std::floating_point T>
std::size_t Tensor<T>::rows() const {
  return node_->shape.empty() ? 1 : (node_->shape.size() == 1 ? 1 : node_->shape[0]);
}

template <std::floating_point T>
std::size_t Tensor<T>::cols() const {
  const auto& s = node_->shape;
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  return shape_size(s) / s[0];
}

template <std::floating_point T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return node_->value;
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw DimensionError("item() requires a single-element tensor, got " + shape_string(shape()));
  }
  return node_->value[0];
}

template <std::floating_point T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->value, false);
}

template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (n->backward) n->grad.clear();
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace sentlat::ad
