#include "sentlat/autodiff/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace sentlat::ad {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;
template <typename T>
using Strided = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStrided = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
CMapMat<T> view(const Node<T>& n, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(n.value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MapMat<T> grad_view(Node<T>& n, std::size_t rows, std::size_t cols) {
  return MapMat<T>(n.ensure_grad().data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

template <typename T>
std::shared_ptr<Node<T>> make_node(Shape shape, std::vector<T> value,
                                   std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool tracking = false;
  for (const auto& p : parents) tracking = tracking || p->requires_grad;
  n->requires_grad = tracking;
  if (tracking) n->parents = std::move(parents);
  return n;
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
bool tracks(const Node<T>& n) {
  return n.requires_grad;
}

}  // namespace

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() = view(*a.node(), m, k) * view(*b.node(), k, n);
  auto node = make_node<T>({m, n}, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [m, k, n](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      auto g = CMapMat<T>(self.grad.data(), m, n);
      if (tracks(pa)) grad_view(pa, m, k).noalias() += g * view(pb, k, n).transpose();
      if (tracks(pb)) grad_view(pb, k, n).noalias() += view(pa, m, k).transpose() * g;
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()) + "ᵀ");
  }
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() = view(*a.node(), m, k) * view(*b.node(), n, k).transpose();
  auto node = make_node<T>({m, n}, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [m, k, n](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      auto g = CMapMat<T>(self.grad.data(), m, n);
      if (tracks(pa)) grad_view(pa, m, k).noalias() += g * view(pb, n, k);
      if (tracks(pb)) grad_view(pb, n, k).noalias() += g.transpose() * view(pa, m, k);
    };
  }
  return Tensor<T>(node);
}

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                             Bwd bwd) {
  require_same_shape(a, b, name);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  auto node = make_node<T>(a.shape(), std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward = [bwd](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      const bool ga = tracks(pa), gb = tracks(pb);
      T* da = ga ? pa.ensure_grad().data() : nullptr;
      T* db = gb ? pb.ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        auto [dx, dy] = bwd(pa.value[i], pb.value[i], self.grad[i]);
        if (ga) da[i] += dx;
        if (gb) db[i] += dy;
      }
    };
  }
  return Tensor<T>(node);
}

}  // namespace

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T g) { return std::pair<T, T>{g, g}; });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T g) { return std::pair<T, T>{g, -g}; });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T x, T y, T g) { return std::pair<T, T>{g * y, g * x}; });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const auto& av = a.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  auto node = make_node<T>(a.shape(), std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward = [factor](Node<T>& self) {
      auto& da = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * factor;
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(a.shape()));
  }
  const auto& av = a.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r * n + c] + bv[c];
  auto node = make_node<T>(a.shape(), std::move(out), {a.node(), bias.node()});
  if (node->requires_grad) {
    node->backward = [m, n](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      if (tracks(pa)) {
        auto& da = pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
      }
      if (tracks(pb)) {
        auto& db = pb.ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) db[c] += self.grad[r * n + c];
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.node()->value) s += v;
  auto node = make_node<T>({}, {s}, {a.node()});
  if (node->requires_grad) {
    node->backward = [](Node<T>& self) {
      auto& da = self.parents[0]->ensure_grad();
      for (T& d : da) d += self.grad[0];
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t c = 0; c < n; ++c) z += (o[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) o[c] /= z;
  }
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [m, n](Node<T>& self) {
      auto& dx = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        const T* y = self.value.data() + r * n;
        const T* g = self.grad.data() + r * n;
        T dot = 0;
        for (std::size_t c = 0; c < n; ++c) dot += g[c] * y[c];
        for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += y[c] * (g[c] - dot);
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain/bias must have length " + std::to_string(n));
  }
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * n;
    T mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(n);
    inv[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (row[c] - mu) * inv[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  auto node = make_node<T>(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()});
  if (node->requires_grad) {
    node->backward = [m, n, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
      Node<T>& px = *self.parents[0];
      Node<T>& pg = *self.parents[1];
      Node<T>& pb = *self.parents[2];
      const auto& g = self.grad;
      if (tracks(pg)) {
        auto& dg = pg.ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) dg[c] += g[r * n + c] * xhat[r * n + c];
      }
      if (tracks(pb)) {
        auto& db = pb.ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) db[c] += g[r * n + c];
      }
      if (tracks(px)) {
        auto& dx = px.ensure_grad();
        const auto& gv = pg.value;
        for (std::size_t r = 0; r < m; ++r) {
          T mean_d = 0, mean_dh = 0;
          for (std::size_t c = 0; c < n; ++c) {
            const T d = g[r * n + c] * gv[c];
            mean_d += d;
            mean_dh += d * xhat[r * n + c];
          }
          mean_d /= static_cast<T>(n);
          mean_dh /= static_cast<T>(n);
          for (std::size_t c = 0; c < n; ++c) {
            const T d = g[r * n + c] * gv[c];
            dx[r * n + c] += inv[r] * (d - mean_d - xhat[r * n + c] * mean_dh);
          }
        }
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = static_cast<T>(kSqrtTwoOverPi);
  const T a = static_cast<T>(kGeluCubic);
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [c, a](Node<T>& self) {
      Node<T>& px = *self.parents[0];
      auto& dx = px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T v = px.value[i];
        const T th = std::tanh(c * (v + a * v * v * v));
        const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
        dx[i] += self.grad[i] * d;
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits, std::span<const int> targets,
                                    std::span<const std::uint8_t> mask) {
  require_matrix(logits, "cross_entropy_from_logits");
  const std::size_t m = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != m) throw DimensionError("cross_entropy_from_logits: one target per row required");
  if (!mask.empty() && mask.size() != m) throw DimensionError("cross_entropy_from_logits: mask length");
  std::vector<std::uint8_t> active(m, 1);
  if (!mask.empty()) std::copy(mask.begin(), mask.end(), active.begin());
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (!active[r]) continue;
    ++count;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw std::out_of_range("cross_entropy_from_logits: target " + std::to_string(targets[r]) +
                              " outside [0, " + std::to_string(v) + ")");
    }
  }
  if (count == 0) throw std::invalid_argument("cross_entropy_from_logits: every position is masked");

  const auto& lv = logits.node()->value;
  std::vector<T> probs(m * v, T(0));
  T total = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (!active[r]) continue;
    const T* row = lv.data() + r * v;
    const T mx = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] = std::exp(row[c] - lse);
  }
  const T inv_count = T(1) / static_cast<T>(count);
  auto node = make_node<T>({}, {total * inv_count}, {logits.node()});
  if (node->requires_grad) {
    std::vector<int> tgt(targets.begin(), targets.end());
    node->backward = [m, v, inv_count, probs = std::move(probs), tgt = std::move(tgt),
                      active = std::move(active)](Node<T>& self) {
      auto& dl = self.parents[0]->ensure_grad();
      const T g = self.grad[0] * inv_count;
      for (std::size_t r = 0; r < m; ++r) {
        if (!active[r]) continue;
        for (std::size_t c = 0; c < v; ++c) dl[r * v + c] += g * probs[r * v + c];
        dl[r * v + static_cast<std::size_t>(tgt[r])] -= g;
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> labels) {
  if (logits.size() != labels.size()) throw DimensionError("bce_with_logits: one label per logit");
  const auto& z = logits.node()->value;
  T total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], T(0)) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const T inv = T(1) / static_cast<T>(z.size());
  auto node = make_node<T>({}, {total * inv}, {logits.node()});
  if (node->requires_grad) {
    std::vector<T> y(labels.begin(), labels.end());
    node->backward = [inv, y = std::move(y)](Node<T>& self) {
      Node<T>& p = *self.parents[0];
      auto& d = p.ensure_grad();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-p.value[i]));
        d[i] += self.grad[0] * inv * (s - y[i]);
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  auto d = sub(a, b);
  return mean(mul(d, d));
}

template <std::floating_point T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < n; ++c) s += xv[r * n + c] * xv[r * n + c];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] / norms[r];
  }
  auto node = make_node<T>(x.shape(), std::move(out), {x.node()});
  if (node->requires_grad) {
    node->backward = [m, n, eps, norms = std::move(norms)](Node<T>& self) {
      auto& dx = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        const T* y = self.value.data() + r * n;
        const T* g = self.grad.data() + r * n;
        if (norms[r] <= eps) {
          for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += g[c] / eps;
          continue;
        }
        T dot = 0;
        for (std::size_t c = 0; c < n; ++c) dot += y[c] * g[c];
        for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += (g[c] - y[c] * dot) / norms[r];
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> rows) {
  const std::size_t n = table.cols(), m = table.rows();
  if (rows.empty()) throw DimensionError("gather_rows: empty selection");
  const auto& tv = table.node()->value;
  std::vector<T> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m) throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]));
    std::copy_n(tv.data() + rows[i] * n, n, out.data() + i * n);
  }
  auto node = make_node<T>({rows.size(), n}, std::move(out), {table.node()});
  if (node->requires_grad) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    node->backward = [n, idx = std::move(idx)](Node<T>& self) {
      auto& dt = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < n; ++c) dt[idx[i] * n + c] += self.grad[i * n + c];
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> stack_rows(std::span<const RowRef<T>> refs) {
  if (refs.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t n = refs.front().source.cols();
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::unordered_map<const Node<T>*, std::size_t> parent_index;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (parent, row)
  std::vector<T> out(refs.size() * n);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& ref = refs[i];
    if (ref.source.cols() != n) throw DimensionError("stack_rows: rows of different width");
    if (ref.row >= ref.source.rows()) throw std::out_of_range("stack_rows: row index");
    const Node<T>* key = ref.source.node().get();
    auto [it, inserted] = parent_index.emplace(key, parents.size());
    if (inserted) parents.push_back(ref.source.node());
    where.emplace_back(it->second, ref.row);
    std::copy_n(ref.source.data().data() + ref.row * n, n, out.data() + i * n);
  }
  auto node = make_node<T>({refs.size(), n}, std::move(out), std::move(parents));
  if (node->requires_grad) {
    node->backward = [n, where = std::move(where)](Node<T>& self) {
      for (std::size_t i = 0; i < where.size(); ++i) {
        Node<T>& p = *self.parents[where[i].first];
        if (!tracks(p)) continue;
        T* d = p.ensure_grad().data() + where[i].second * n;
        for (std::size_t c = 0; c < n; ++c) d[c] += self.grad[i * n + c];
      }
    };
  }
  return Tensor<T>(node);
}

template <std::floating_point T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column mismatch");
    offsets.push_back(m * n);
    m += p.rows();
    parents.push_back(p.node());
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto node = make_node<T>({m, n}, std::move(out), std::move(parents));
  if (node->requires_grad) {
    node->backward = [offsets = std::move(offsets)](Node<T>& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        Node<T>& p = *self.parents[i];
        if (!tracks(p)) continue;
        auto& d = p.ensure_grad();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += self.grad[offsets[i] + j];
      }
    };
  }
  return Tensor<T>(node);
}

AttentionLayout AttentionLayout::single(std::size_t n) {
  AttentionLayout l;
  l.segments.push_back({0, n});
  return l;
}

template <std::floating_point T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t n_heads, const AttentionLayout& layout,
                           const AttentionPrefix<T>& prefix) {
  require_matrix(qkv, "causal_attention");
  const std::size_t rows = qkv.shape()[0];
  if (qkv.shape()[1] % 3 != 0) throw DimensionError("causal_attention: qkv width must be 3·d");
  const std::size_t d = qkv.shape()[1] / 3;
  if (n_heads == 0 || d % n_heads != 0) throw DimensionError("causal_attention: d not divisible by heads");
  if (!layout.is_private.empty() && layout.is_private.size() != rows) {
    throw DimensionError("causal_attention: private mask length");
  }
  std::size_t covered = 0;
  for (const auto& s : layout.segments) {
    if (s.start != covered || s.length == 0) throw DimensionError("causal_attention: segments must tile rows");
    covered += s.length;
  }
  if (covered != rows) throw DimensionError("causal_attention: segments must tile rows");
  const std::size_t plen = prefix.length;
  if (plen > 0 && layout.segments.size() != 1) {
    throw DimensionError("causal_attention: a prefix requires a single segment");
  }
  const std::size_t dh = d / n_heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const T* base = qkv.data().data();
  const auto stride = static_cast<Eigen::Index>(3 * d);

  std::vector<T> out(rows * d, T(0));
  // Attention probabilities, one matrix per (segment, head).
  std::vector<Mat<T>> probs;
  probs.reserve(layout.segments.size() * n_heads);

  auto keys_for = [&](const AttentionLayout::Segment& seg, std::size_t h, std::size_t which) {
    // which: 1 = keys, 2 = values
    Mat<T> k(static_cast<Eigen::Index>(plen + seg.length), static_cast<Eigen::Index>(dh));
    if (plen > 0) {
      const T* src = (which == 1 ? prefix.keys : prefix.values).data();
      k.topRows(static_cast<Eigen::Index>(plen)) =
          CStrided<T>(src + h * dh, plen, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
    }
    k.bottomRows(static_cast<Eigen::Index>(seg.length)) =
        CStrided<T>(base + seg.start * 3 * d + which * d + h * dh, seg.length, dh, Eigen::OuterStride<>(stride));
    return k;
  };

  for (const auto& seg : layout.segments) {
    const std::size_t len = seg.length;
    const std::size_t total = plen + len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      CStrided<T> q(base + seg.start * 3 * d + h * dh, len, dh, Eigen::OuterStride<>(stride));
      Mat<T> k = keys_for(seg, h, 1);
      Mat<T> v = keys_for(seg, h, 2);
      Mat<T> s = (q * k.transpose()) * scale_factor;
      for (std::size_t r = 0; r < len; ++r) {
        T* row = s.data() + r * total;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < total; ++c) {
          bool visible = c < plen;
          if (!visible) {
            const std::size_t j = c - plen;
            visible = j == r || (j < r && !layout.row_private(seg.start + j));
          }
          if (!visible) row[c] = -std::numeric_limits<T>::infinity();
          mx = std::max(mx, row[c]);
        }
        T z = 0;
        for (std::size_t c = 0; c < total; ++c) {
          row[c] = std::isinf(row[c]) && row[c] < 0 ? T(0) : std::exp(row[c] - mx);
          z += row[c];
        }
        for (std::size_t c = 0; c < total; ++c) row[c] /= z;
      }
      Strided<T>(out.data() + seg.start * d + h * dh, len, dh, Eigen::OuterStride<>(static_cast<Eigen::Index>(d)))
          .noalias() = s * v;
      probs.push_back(std::move(s));
    }
  }

  auto node = make_node<T>({rows, d}, std::move(out), {qkv.node()});
  if (node->requires_grad) {
    std::vector<T> pk, pv;
    if (plen > 0) {
      pk.assign(prefix.keys.begin(), prefix.keys.begin() + static_cast<std::ptrdiff_t>(plen * d));
      pv.assign(prefix.values.begin(), prefix.values.begin() + static_cast<std::ptrdiff_t>(plen * d));
    }
    node->backward = [layout, n_heads, d, dh, plen, scale_factor, probs = std::move(probs), pk = std::move(pk),
                      pv = std::move(pv)](Node<T>& self) {
      Node<T>& parent = *self.parents[0];
      const T* base = parent.value.data();
      T* dbase = parent.ensure_grad().data();
      const auto stride = static_cast<Eigen::Index>(3 * d);
      const auto dstride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
      std::size_t idx = 0;
      for (const auto& seg : layout.segments) {
        const std::size_t len = seg.length;
        const std::size_t total = plen + len;
        for (std::size_t h = 0; h < n_heads; ++h, ++idx) {
          const Mat<T>& p = probs[idx];
          CStrided<T> q(base + seg.start * 3 * d + h * dh, len, dh, Eigen::OuterStride<>(stride));
          Mat<T> k(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dh));
          Mat<T> v(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dh));
          if (plen > 0) {
            k.topRows(static_cast<Eigen::Index>(plen)) = CStrided<T>(pk.data() + h * dh, plen, dh, dstride);
            v.topRows(static_cast<Eigen::Index>(plen)) = CStrided<T>(pv.data() + h * dh, plen, dh, dstride);
          }
          k.bottomRows(static_cast<Eigen::Index>(len)) =
              CStrided<T>(base + seg.start * 3 * d + d + h * dh, len, dh, Eigen::OuterStride<>(stride));
          v.bottomRows(static_cast<Eigen::Index>(len)) =
              CStrided<T>(base + seg.start * 3 * d + 2 * d + h * dh, len, dh, Eigen::OuterStride<>(stride));
          CStrided<T> go(self.grad.data() + seg.start * d + h * dh, len, dh, dstride);

          Mat<T> dp = go * v.transpose();
          Mat<T> dv = p.transpose() * go;
          Mat<T> ds(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(total));
          for (std::size_t r = 0; r < len; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < total; ++c) dot += dp(r, c) * p(r, c);
            for (std::size_t c = 0; c < total; ++c) ds(r, c) = p(r, c) * (dp(r, c) - dot) * scale_factor;
          }
          Mat<T> dq = ds * k;
          Mat<T> dk = ds.transpose() * q;
          Strided<T>(dbase + seg.start * 3 * d + h * dh, len, dh, Eigen::OuterStride<>(stride)) += dq;
          Strided<T>(dbase + seg.start * 3 * d + d + h * dh, len, dh, Eigen::OuterStride<>(stride)) +=
              dk.bottomRows(static_cast<Eigen::Index>(len));
          Strided<T>(dbase + seg.start * 3 * d + 2 * d + h * dh, len, dh, Eigen::OuterStride<>(stride)) +=
              dv.bottomRows(static_cast<Eigen::Index>(len));
        }
      }
    };
  }
  return Tensor<T>(node);
}

#define SENTLAT_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                        \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                             \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                            \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                    \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                            \
  template Tensor<T> cross_entropy_from_logits<T>(const Tensor<T>&, std::span<const int>,                  \
                                                  std::span<const std::uint8_t>);                          \
  template Tensor<T> bce_with_logits<T>(const Tensor<T>&, std::span<const T>);                             \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> normalize_rows<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                       \
  template Tensor<T> stack_rows<T>(std::span<const RowRef<T>>);                                            \
  template Tensor<T> concat_rows<T>(std::span<const Tensor<T>>);                                           \
  template Tensor<T> causal_attention<T>(const Tensor<T>&, std::size_t, const AttentionLayout&,            \
                                         const AttentionPrefix<T>&);

SENTLAT_INSTANTIATE_OPS(float)
SENTLAT_INSTANTIATE_OPS(double)

}  // namespace sentlat::ad
