#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Var is a handle to a node holding a value, an optional gradient and a
// closure that scatters the node's gradient into its parents. Graphs are built
// only when some input requires a gradient, so inference runs allocate no
// tape. Operations are coarse-grained (whole convolutions, normalizations)
// with hand-written backward passes.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "casedx/error.hpp"
#include "casedx/tensor.hpp"

namespace casedx {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
  // Gradient buffer of a parent, or nullptr when it takes no gradient.
  T* grad_target() { return requires_grad ? ensure_grad().data() : nullptr; }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_ref() { return node_->ensure_grad(); }
  void zero_grad() {
    if (has_grad()) node_->grad.fill(T(0));
  }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }
  T item() const { return node_->value[0]; }

  // Backpropagate from a single-element output.
  void backward() const {
    if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar output");
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node<T>* p = n->parents[i++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->grad.size() == n->value.size()) n->backward();
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace ag {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C(MxN) (+)= op(A) * op(B); A is MxK (or KxM when ta), B is KxN (or NxK when tb).
template <class T>
void gemm(bool ta, bool tb, int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  using CMap = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> c(C, M, N);
  if (!accumulate) c.setZero();
  if (!ta && !tb)
    c.noalias() += CMap(A, M, K) * CMap(B, K, N);
  else if (!ta && tb)
    c.noalias() += CMap(A, M, K) * CMap(B, N, K).transpose();
  else if (ta && !tb)
    c.noalias() += CMap(A, K, M).transpose() * CMap(B, K, N);
  else
    c.noalias() += CMap(A, K, M).transpose() * CMap(B, N, K).transpose();
}

template <class T, class F>
Var<T> record(Tensor<T> value, const char* op, std::initializer_list<Var<T>> inputs, F&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->parents.push_back(v.node_ptr());
    Node<T>* self = node.get();
    node->backward = [self, bw = std::forward<F>(backward)]() { bw(self->grad); };
  }
  return Var<T>(std::move(node));
}

template <class T, class F>
Var<T> record_many(Tensor<T> value, const char* op, const std::vector<Var<T>>& inputs, F&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->parents.push_back(v.node_ptr());
    Node<T>* self = node.get();
    node->backward = [self, bw = std::forward<F>(backward)]() { bw(self->grad); };
  }
  return Var<T>(std::move(node));
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& a, int r, const char* op) {
  if (static_cast<int>(a.size()) != r)
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(r) + ", got " + shape_str(a));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return detail::record(std::move(out), "add", {a, b}, [na, nb](const Tensor<T>& g) {
    for (Node<T>* n : {na, nb})
      if (T* d = n->grad_target())
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return detail::record(std::move(out), "mul", {a, b}, [na, nb](const Tensor<T>& g) {
    if (T* d = na->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * nb->value[i];
    if (T* d = nb->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * na->value[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= c;
  Node<T>* na = a.node();
  return detail::record(std::move(out), "scale", {a}, [na, c](const Tensor<T>& g) {
    if (T* d = na->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
  });
}

// x * s where s holds a single element.
template <class T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar expects a one-element scale");
  const T sv = s.value()[0];
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= sv;
  Node<T>* nx = x.node();
  Node<T>* ns = s.node();
  return detail::record(std::move(out), "mul_scalar", {x, s}, [nx, ns](const Tensor<T>& g) {
    const T sv = ns->value[0];
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += sv * g[i];
    if (T* d = ns->grad_target()) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * nx->value[i];
      d[0] += acc;
    }
  });
}

template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& x, const char* op, Fwd f, Deriv df) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = f(v);
  Node<T>* nx = x.node();
  return detail::record(std::move(out), op, {x}, [nx, df](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * df(nx->value[i]);
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <class T>
Var<T> exp(const Var<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <class T>
T sigmoid_value(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return sigmoid_value(v); },
      [](T v) {
        const T s = sigmoid_value(v);
        return s * (T(1) - s);
      });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(x.value().sum());
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "sum", {x}, [nx](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < nx->value.size(); ++i) d[i] += g[0];
  });
}

template <class T>
Var<T> add_all(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("add_all of empty list");
  Tensor<T> out(xs[0].shape());
  for (const auto& x : xs) {
    detail::require_same(x.shape(), out.shape(), "add_all");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i];
  }
  std::vector<Node<T>*> ns;
  for (const auto& x : xs) ns.push_back(x.node());
  return detail::record_many(std::move(out), "add_all", xs, [ns](const Tensor<T>& g) {
    for (Node<T>* n : ns)
      if (T* d = n->grad_target())
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

// Mean over one axis; the axis is removed from the shape.
template <class T>
Var<T> mean_axis(const Var<T>& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const int n = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  const T* px = x.value().data();
  const T inv = T(1) / T(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (int k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += px[(o * n + k) * inner + i] * inv;
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "mean_axis", {x}, [nx, outer, inner, n, inv](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t o = 0; o < outer; ++o)
        for (int k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i) d[(o * n + k) * inner + i] += g[o * inner + i] * inv;
  });
}

// Element-wise maximum over the rows of a [S, F] matrix -> [1, F].
template <class T>
Var<T> max_rows(const Var<T>& x) {
  detail::require_rank(x.shape(), 2, "max_rows");
  const int S = x.shape()[0], F = x.shape()[1];
  Tensor<T> out({1, F});
  std::vector<int> arg(F, 0);
  const T* px = x.value().data();
  for (int f = 0; f < F; ++f) {
    T best = px[f];
    for (int r = 1; r < S; ++r)
      if (px[r * F + f] > best) {
        best = px[r * F + f];
        arg[f] = r;
      }
    out[f] = best;
  }
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "max_rows", {x}, [nx, arg, F](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (int f = 0; f < F; ++f) d[arg[f] * F + f] += g[f];
  });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "reshape", {x}, [nx](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& x, int start, int count) {
  detail::require_rank(x.shape(), 2, "slice_rows");
  const int R = x.shape()[0], F = x.shape()[1];
  if (start < 0 || count < 0 || start + count > R) throw ShapeError("slice_rows out of range");
  Tensor<T> out({count, F});
  std::copy_n(x.value().data() + static_cast<std::size_t>(start) * F, static_cast<std::size_t>(count) * F, out.data());
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "slice_rows", {x}, [nx, start, F](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[static_cast<std::size_t>(start) * F + i] += g[i];
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows of empty list");
  const int F = xs[0].shape().back();
  int R = 0;
  for (const auto& x : xs) {
    detail::require_rank(x.shape(), 2, "concat_rows");
    if (x.shape()[1] != F) throw ShapeError("concat_rows width mismatch");
    R += x.shape()[0];
  }
  Tensor<T> out({R, F});
  std::size_t off = 0;
  std::vector<std::pair<Node<T>*, std::size_t>> parts;
  for (const auto& x : xs) {
    std::copy_n(x.value().data(), x.size(), out.data() + off);
    parts.emplace_back(x.node(), off);
    off += x.size();
  }
  return detail::record_many(std::move(out), "concat_rows", xs, [parts](const Tensor<T>& g) {
    for (auto [n, o] : parts)
      if (T* d = n->grad_target())
        for (std::size_t i = 0; i < n->value.size(); ++i) d[i] += g[o + i];
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& x, int start, int count) {
  detail::require_rank(x.shape(), 2, "slice_cols");
  const int R = x.shape()[0], F = x.shape()[1];
  if (start < 0 || count < 0 || start + count > F) throw ShapeError("slice_cols out of range");
  Tensor<T> out({R, count});
  for (int r = 0; r < R; ++r)
    std::copy_n(x.value().data() + static_cast<std::size_t>(r) * F + start, count, out.data() + static_cast<std::size_t>(r) * count);
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "slice_cols", {x}, [nx, start, count, R, F](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < count; ++c) d[static_cast<std::size_t>(r) * F + start + c] += g[static_cast<std::size_t>(r) * count + c];
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols of empty list");
  const int R = xs[0].shape()[0];
  int F = 0;
  for (const auto& x : xs) {
    detail::require_rank(x.shape(), 2, "concat_cols");
    if (x.shape()[0] != R) throw ShapeError("concat_cols height mismatch");
    F += x.shape()[1];
  }
  Tensor<T> out({R, F});
  std::vector<std::tuple<Node<T>*, int, int>> parts;
  int off = 0;
  for (const auto& x : xs) {
    const int w = x.shape()[1];
    for (int r = 0; r < R; ++r)
      std::copy_n(x.value().data() + static_cast<std::size_t>(r) * w, w, out.data() + static_cast<std::size_t>(r) * F + off);
    parts.emplace_back(x.node(), off, w);
    off += w;
  }
  return detail::record_many(std::move(out), "concat_cols", xs, [parts, R, F](const Tensor<T>& g) {
    for (auto [n, o, w] : parts)
      if (T* d = n->grad_target())
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < w; ++c) d[static_cast<std::size_t>(r) * w + c] += g[static_cast<std::size_t>(r) * F + o + c];
  });
}

// Gathers rows of a [V, F] table; repeated indices accumulate gradient.
template <class T>
Var<T> index_rows(const Var<T>& table, const std::vector<int>& idx) {
  detail::require_rank(table.shape(), 2, "index_rows");
  const int V = table.shape()[0], F = table.shape()[1];
  Tensor<T> out({static_cast<int>(idx.size()), F});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= V) throw ShapeError("index_rows index out of range");
    std::copy_n(table.value().data() + static_cast<std::size_t>(idx[r]) * F, F, out.data() + r * F);
  }
  Node<T>* nt = table.node();
  return detail::record(std::move(out), "index_rows", {table}, [nt, idx, F](const Tensor<T>& g) {
    if (T* d = nt->grad_target())
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < F; ++c) d[static_cast<std::size_t>(idx[r]) * F + c] += g[r * F + c];
  });
}

// Adds a length-F vector to every row of an [..., F] tensor.
template <class T>
Var<T> add_row(const Var<T>& x, const Var<T>& b) {
  const int F = static_cast<int>(b.size());
  if (x.shape().back() != F) throw ShapeError("add_row: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  Tensor<T> out = x.value();
  const std::size_t R = out.size() / F;
  for (std::size_t r = 0; r < R; ++r)
    for (int c = 0; c < F; ++c) out[r * F + c] += b.value()[c];
  Node<T>* nx = x.node();
  Node<T>* nb = b.node();
  return detail::record(std::move(out), "add_row", {x, b}, [nx, nb, R, F](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    if (T* d = nb->grad_target())
      for (std::size_t r = 0; r < R; ++r)
        for (int c = 0; c < F; ++c) d[c] += g[r * F + c];
  });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const int M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  if (b.shape()[0] != K) throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({M, N});
  detail::gemm(false, false, M, N, K, a.value().data(), b.value().data(), out.data(), false);
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return detail::record(std::move(out), "matmul", {a, b}, [na, nb, M, N, K](const Tensor<T>& g) {
    if (T* d = na->grad_target()) detail::gemm(false, true, M, K, N, g.data(), nb->value.data(), d, true);
    if (T* d = nb->grad_target()) detail::gemm(true, false, K, N, M, na->value.data(), g.data(), d, true);
  });
}

// a * b^T for a [M, K], b [N, K].
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul_nt");
  detail::require_rank(b.shape(), 2, "matmul_nt");
  const int M = a.shape()[0], K = a.shape()[1], N = b.shape()[0];
  if (b.shape()[1] != K) throw ShapeError("matmul_nt " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out({M, N});
  detail::gemm(false, true, M, N, K, a.value().data(), b.value().data(), out.data(), false);
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return detail::record(std::move(out), "matmul_nt", {a, b}, [na, nb, M, N, K](const Tensor<T>& g) {
    if (T* d = na->grad_target()) detail::gemm(false, false, M, K, N, g.data(), nb->value.data(), d, true);
    if (T* d = nb->grad_target()) detail::gemm(true, false, N, K, M, g.data(), na->value.data(), d, true);
  });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  detail::require_rank(x.shape(), 2, "softmax_rows");
  const int R = x.shape()[0], F = x.shape()[1];
  Tensor<T> out = x.value();
  for (int r = 0; r < R; ++r) {
    T* row = out.data() + static_cast<std::size_t>(r) * F;
    const T m = *std::max_element(row, row + F);
    T s = 0;
    for (int c = 0; c < F; ++c) s += (row[c] = std::exp(row[c] - m));
    for (int c = 0; c < F; ++c) row[c] /= s;
  }
  Node<T>* nx = x.node();
  auto y = std::make_shared<Tensor<T>>(out);
  return detail::record(std::move(out), "softmax_rows", {x}, [nx, y, R, F](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (int r = 0; r < R; ++r) {
        const std::size_t o = static_cast<std::size_t>(r) * F;
        T dot = 0;
        for (int c = 0; c < F; ++c) dot += g[o + c] * (*y)[o + c];
        for (int c = 0; c < F; ++c) d[o + c] += (*y)[o + c] * (g[o + c] - dot);
      }
  });
}

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  detail::require_rank(x.shape(), 2, "l2_normalize_rows");
  const int R = x.shape()[0], F = x.shape()[1];
  Tensor<T> out = x.value();
  std::vector<T> norms(R);
  for (int r = 0; r < R; ++r) {
    T* row = out.data() + static_cast<std::size_t>(r) * F;
    T s = 0;
    for (int c = 0; c < F; ++c) s += row[c] * row[c];
    norms[r] = std::max(std::sqrt(s), eps);
    for (int c = 0; c < F; ++c) row[c] /= norms[r];
  }
  Node<T>* nx = x.node();
  auto y = std::make_shared<Tensor<T>>(out);
  return detail::record(std::move(out), "l2_normalize_rows", {x}, [nx, y, norms, R, F](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (int r = 0; r < R; ++r) {
        const std::size_t o = static_cast<std::size_t>(r) * F;
        T dot = 0;
        for (int c = 0; c < F; ++c) dot += g[o + c] * (*y)[o + c];
        for (int c = 0; c < F; ++c) d[o + c] += (g[o + c] - (*y)[o + c] * dot) / norms[r];
      }
  });
}

// ---------------------------------------------------------------- normalization

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const int F = x.shape().back();
  if (static_cast<int>(gamma.size()) != F || static_cast<int>(beta.size()) != F) throw ShapeError("layer_norm affine size");
  const std::size_t R = x.size() / F;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> inv_std(R);
  const T* px = x.value().data();
  for (std::size_t r = 0; r < R; ++r) {
    const T* row = px + r * F;
    T mean = 0;
    for (int c = 0; c < F; ++c) mean += row[c];
    mean /= F;
    T var = 0;
    for (int c = 0; c < F; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= F;
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (int c = 0; c < F; ++c) {
      const T h = (row[c] - mean) * inv_std[r];
      (*xhat)[r * F + c] = h;
      out[r * F + c] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  Node<T>* nx = x.node();
  Node<T>* ng = gamma.node();
  Node<T>* nb = beta.node();
  return detail::record(std::move(out), "layer_norm", {x, gamma, beta}, [=](const Tensor<T>& g) {
    T* dg = ng->grad_target();
    T* db = nb->grad_target();
    T* dx = nx->grad_target();
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t o = r * F;
      T m1 = 0, m2 = 0;
      for (int c = 0; c < F; ++c) {
        const T gh = g[o + c] * ng->value[c];
        m1 += gh;
        m2 += gh * (*xhat)[o + c];
        if (dg) dg[c] += g[o + c] * (*xhat)[o + c];
        if (db) db[c] += g[o + c];
      }
      if (!dx) continue;
      m1 /= F;
      m2 /= F;
      for (int c = 0; c < F; ++c) dx[o + c] += inv_std[r] * (g[o + c] * ng->value[c] - m1 - (*xhat)[o + c] * m2);
    }
  });
}

// Group normalization over x [N, C, ...] with per-channel affine parameters.
template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("group_norm expects [N, C, ...]");
  const int N = s[0], C = s[1];
  if (C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (static_cast<int>(gamma.size()) != C || static_cast<int>(beta.size()) != C) throw ShapeError("group_norm affine size");
  std::size_t S = 1;
  for (std::size_t i = 2; i < s.size(); ++i) S *= s[i];
  const int cpg = C / groups;
  const std::size_t gsize = cpg * S;
  Tensor<T> out(s);
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> inv_std(static_cast<std::size_t>(N) * groups);
  const T* px = x.value().data();
  for (int n = 0; n < N; ++n)
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + gi * cpg) * S;
      T mean = 0;
      for (std::size_t i = 0; i < gsize; ++i) mean += px[base + i];
      mean /= T(gsize);
      T var = 0;
      for (std::size_t i = 0; i < gsize; ++i) var += (px[base + i] - mean) * (px[base + i] - mean);
      var /= T(gsize);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[n * groups + gi] = is;
      for (int c = 0; c < cpg; ++c) {
        const int ch = gi * cpg + c;
        for (std::size_t i = 0; i < S; ++i) {
          const std::size_t k = base + c * S + i;
          (*xhat)[k] = (px[k] - mean) * is;
          out[k] = (*xhat)[k] * gamma.value()[ch] + beta.value()[ch];
        }
      }
    }
  Node<T>* nx = x.node();
  Node<T>* ng = gamma.node();
  Node<T>* nb = beta.node();
  return detail::record(std::move(out), "group_norm", {x, gamma, beta}, [=](const Tensor<T>& g) {
    T* dg = ng->grad_target();
    T* db = nb->grad_target();
    T* dx = nx->grad_target();
    for (int n = 0; n < N; ++n)
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + gi * cpg) * S;
        T m1 = 0, m2 = 0;
        for (int c = 0; c < cpg; ++c) {
          const int ch = gi * cpg + c;
          const T gm = ng->value[ch];
          for (std::size_t i = 0; i < S; ++i) {
            const std::size_t k = base + c * S + i;
            const T gh = g[k] * gm;
            m1 += gh;
            m2 += gh * (*xhat)[k];
            if (dg) dg[ch] += g[k] * (*xhat)[k];
            if (db) db[ch] += g[k];
          }
        }
        if (!dx) continue;
        m1 /= T(gsize);
        m2 /= T(gsize);
        const T is = inv_std[n * groups + gi];
        for (int c = 0; c < cpg; ++c) {
          const T gm = ng->value[gi * cpg + c];
          for (std::size_t i = 0; i < S; ++i) {
            const std::size_t k = base + c * S + i;
            dx[k] += is * (g[k] * gm - m1 - (*xhat)[k] * m2);
          }
        }
      }
  });
}

// ---------------------------------------------------------------- convolution

struct Conv3dGeometry {
  std::array<int, 3> kernel{1, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 1, 1};
};

namespace detail {

struct ConvDims {
  int C, D, H, W;
  int kd, kh, kw, sd, sh, sw, pd, ph, pw;
  int Do, Ho, Wo;
  std::size_t rows() const { return static_cast<std::size_t>(C) * kd * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(Do) * Ho * Wo; }
};

template <class T, bool Scatter>
void im2col_3d(const ConvDims& g, const T* img, T* col) {
  std::size_t row = 0;
  for (int c = 0; c < g.C; ++c)
    for (int a = 0; a < g.kd; ++a)
      for (int b = 0; b < g.kh; ++b)
        for (int e = 0; e < g.kw; ++e, ++row) {
          T* dst = col + row * g.cols();
          std::size_t k = 0;
          for (int od = 0; od < g.Do; ++od) {
            const int id = od * g.sd - g.pd + a;
            for (int oh = 0; oh < g.Ho; ++oh) {
              const int ih = oh * g.sh - g.ph + b;
              const bool inside = id >= 0 && id < g.D && ih >= 0 && ih < g.H;
              const T* src = inside ? img + ((static_cast<std::size_t>(c) * g.D + id) * g.H + ih) * g.W : nullptr;
              for (int ow = 0; ow < g.Wo; ++ow, ++k) {
                const int iw = ow * g.sw - g.pw + e;
                const bool ok = inside && iw >= 0 && iw < g.W;
                if constexpr (Scatter) {
                  if (ok) const_cast<T*>(src)[iw] += dst[k];
                } else {
                  dst[k] = ok ? src[iw] : T(0);
                }
              }
            }
          }
        }
}

}  // namespace detail

// x [N, C, D, H, W] convolved with w [Co, C, kd, kh, kw]; no bias.
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Conv3dGeometry& geo) {
  detail::require_rank(x.shape(), 5, "conv3d input");
  detail::require_rank(w.shape(), 5, "conv3d weight");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::ConvDims g{xs[1], xs[2], xs[3], xs[4], ws[2], ws[3], ws[4], geo.stride[0], geo.stride[1], geo.stride[2],
                     geo.padding[0], geo.padding[1], geo.padding[2], 0, 0, 0};
  if (ws[1] != g.C || ws[2] != geo.kernel[0] || ws[3] != geo.kernel[1] || ws[4] != geo.kernel[2])
    throw ShapeError("conv3d weight " + shape_str(ws) + " for input " + shape_str(xs));
  g.Do = (g.D + 2 * g.pd - g.kd) / g.sd + 1;
  g.Ho = (g.H + 2 * g.ph - g.kh) / g.sh + 1;
  g.Wo = (g.W + 2 * g.pw - g.kw) / g.sw + 1;
  if (g.Do <= 0 || g.Ho <= 0 || g.Wo <= 0) throw ShapeError("conv3d output is empty for input " + shape_str(xs));
  const int N = xs[0], Co = ws[0];
  const std::size_t K = g.rows(), P = g.cols();
  const std::size_t in_stride = static_cast<std::size_t>(g.C) * g.D * g.H * g.W;
  Tensor<T> out({N, Co, g.Do, g.Ho, g.Wo});
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * K * P);
  for (int n = 0; n < N; ++n) {
    T* col = cols->data() + n * K * P;
    detail::im2col_3d<T, false>(g, x.value().data() + n * in_stride, col);
    detail::gemm(false, false, Co, static_cast<int>(P), static_cast<int>(K), w.value().data(), col,
                 out.data() + static_cast<std::size_t>(n) * Co * P, false);
  }
  Node<T>* nx = x.node();
  Node<T>* nw = w.node();
  return detail::record(std::move(out), "conv3d", {x, w}, [=](const Tensor<T>& gr) {
    T* dw = nw->grad_target();
    T* dx = nx->grad_target();
    std::vector<T> dcol(dx ? K * P : 0);
    for (int n = 0; n < N; ++n) {
      const T* go = gr.data() + static_cast<std::size_t>(n) * Co * P;
      const T* col = cols->data() + n * K * P;
      if (dw) detail::gemm(false, true, Co, static_cast<int>(K), static_cast<int>(P), go, col, dw, true);
      if (dx) {
        detail::gemm(true, false, static_cast<int>(K), static_cast<int>(P), Co, nw->value.data(), go, dcol.data(), false);
        detail::im2col_3d<T, true>(g, dx + n * in_stride, dcol.data());
      }
    }
  });
}

// Splits a [D, H, W] volume (any leading singleton dims allowed) into
// non-overlapping (pd, ph, pw) blocks -> [tokens, pd*ph*pw]. Token order is
// depth-major, element order within a block is (z, y, x).
template <class T>
Var<T> patchify(const Var<T>& x, int D, int H, int W, int pd, int ph, int pw) {
  if (x.size() != static_cast<std::size_t>(D) * H * W) throw ShapeError("patchify volume size");
  if (D % pd || H % ph || W % pw) throw ShapeError("patchify: block size does not divide volume");
  const int nd = D / pd, nh = H / ph, nw = W / pw;
  const int tokens = nd * nh * nw, len = pd * ph * pw;
  std::vector<std::size_t> src(static_cast<std::size_t>(tokens) * len);
  std::size_t k = 0;
  for (int a = 0; a < nd; ++a)
    for (int b = 0; b < nh; ++b)
      for (int c = 0; c < nw; ++c)
        for (int z = 0; z < pd; ++z)
          for (int y = 0; y < ph; ++y)
            for (int q = 0; q < pw; ++q)
              src[k++] = (static_cast<std::size_t>(a * pd + z) * H + (b * ph + y)) * W + (c * pw + q);
  Tensor<T> out({tokens, len});
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x.value()[src[i]];
  Node<T>* nx = x.node();
  return detail::record(std::move(out), "patchify", {x}, [nx, src = std::move(src)](const Tensor<T>& g) {
    if (T* d = nx->grad_target())
      for (std::size_t i = 0; i < src.size(); ++i) d[src[i]] += g[i];
  });
}

// ---------------------------------------------------------------- losses

// Sum over classes of binary cross-entropy on logits, evaluated as
// softplus(z) - y*z so that saturated logits stay finite.
template <class T>
Var<T> bce_with_logits(const Var<T>& logits, const std::vector<T>& targets) {
  if (logits.size() != targets.size()) throw ShapeError("bce_with_logits target length");
  T loss = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T z = logits.value()[i];
    const T softplus = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
    loss += softplus - targets[i] * z;
  }
  Node<T>* nz = logits.node();
  return detail::record(Tensor<T>::scalar(loss), "bce_with_logits", {logits}, [nz, targets](const Tensor<T>& g) {
    if (T* d = nz->grad_target())
      for (std::size_t i = 0; i < targets.size(); ++i) d[i] += g[0] * (sigmoid_value(nz->value[i]) - targets[i]);
  });
}

// Binary cross-entropy on probabilities clamped to [eps, 1 - eps].
template <class T>
Var<T> bce_with_probs(const Var<T>& probs, const std::vector<T>& targets, T eps = T(1e-7)) {
  if (probs.size() != targets.size()) throw ShapeError("bce_with_probs target length");
  T loss = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T p = std::clamp(probs.value()[i], eps, T(1) - eps);
    loss -= targets[i] * std::log(p) + (T(1) - targets[i]) * std::log1p(-p);
  }
  Node<T>* np = probs.node();
  return detail::record(Tensor<T>::scalar(loss), "bce_with_probs", {probs}, [np, targets, eps](const Tensor<T>& g) {
    if (T* d = np->grad_target())
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const T raw = np->value[i];
        if (raw < eps || raw > T(1) - eps) continue;
        d[i] += g[0] * (-targets[i] / raw + (T(1) - targets[i]) / (T(1) - raw));
      }
  });
}

// -log(exp(s_0) / sum_{j in J} exp(s_j)) over a score vector whose first
// entry is the positive. J covers every entry, or only entries 1.. when
// positive_in_denominator is false.
template <class T>
Var<T> contrastive_nll(const Var<T>& scores, bool positive_in_denominator) {
  const std::size_t n = scores.size();
  if (n < 2) throw ShapeError("contrastive_nll needs a positive and at least one negative");
  const T* s = scores.value().data();
  const std::size_t first = positive_in_denominator ? 0 : 1;
  T m = s[first];
  for (std::size_t i = first; i < n; ++i) m = std::max(m, s[i]);
  T z = 0;
  for (std::size_t i = first; i < n; ++i) z += std::exp(s[i] - m);
  const T lse = m + std::log(z);
  Node<T>* ns = scores.node();
  return detail::record(Tensor<T>::scalar(lse - s[0]), "contrastive_nll", {scores}, [ns, first, n, lse](const Tensor<T>& g) {
    if (T* d = ns->grad_target()) {
      d[0] -= g[0];
      for (std::size_t i = first; i < n; ++i) d[i] += g[0] * std::exp(ns->value[i] - lse);
    }
  });
}

}  // namespace ag

template <class T>
void require_finite(const Var<T>& v, const std::string& layer) {
  if (!v.value().all_finite()) throw NumericError("non-finite activation in " + layer);
}

}  // namespace casedx
