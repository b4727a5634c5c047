#pragma once

// Reverse-mode differentiable tensors. A Tensor<T> is a shared handle to a
// graph node; ops build the graph eagerly and backward() walks it once in
// reverse topological order. T is float for training and double for the
// finite-difference oracle.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "cthgr/common.hpp"

namespace cthgr {

// When enabled every op output is scanned for NaN/Inf.
inline std::atomic<bool>& autodiff_debug_checks() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool backward_done = false;  // set on the loss node after a backward pass
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;  // pushes this->grad into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
inline void check_finite(const Node<T>& n, const char* op) {
  if (!autodiff_debug_checks().load(std::memory_order_relaxed)) return;
  for (T v : n.value) {
    if (!std::isfinite(static_cast<double>(v)))
      throw Error(std::string("non-finite value produced by op '") + op + "'");
  }
}

// --- raw matmul kernels (row-major, accumulate into c) -----------------

template <typename T>
inline void mm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = ai[t];
      if (av == T(0)) continue;
      const T* bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
inline void mm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::size_t t = 0; t < k; ++t) acc += ai[t] * bj[t];
      ci[j] += acc;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
template <typename T>
inline void mm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t t = 0; t < k; ++t) {
    const T* at = a + t * m;
    const T* bt = b + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = at[i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

}  // namespace detail

template <typename T>
class Tensor {
public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    require(numel(shape) == values.size(),
            "tensor data size " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> data(numel(shape), v);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& value_mut() { return node_->value; }
  T item() const {
    require(size() == 1, "item() on non-scalar tensor");
    return node_->value[0];
  }

  const std::vector<T>& grad() const {
    require(node_->grad.size() == node_->value.size(),
            "gradient not populated; run backward() first");
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  NodePtr node() const { return node_; }

  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

private:
  NodePtr node_;
};

namespace detail {

template <typename T>
inline std::shared_ptr<Node<T>> make_result(Shape shape, std::vector<T> value,
                                            std::vector<std::shared_ptr<Node<T>>> parents,
                                            const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) n->parents = std::move(parents);
  check_finite(*n, op);
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------
// backward

template <typename T>
inline void backward(const Tensor<T>& loss) {
  require(loss.size() == 1, "backward() requires a scalar loss");
  auto root = loss.node();
  require(root->requires_grad, "backward() on a graph with no differentiable leaves");
  require(!root->backward_done, "backward() called twice on the same loss without reset");
  root->backward_done = true;

  // iterative post-order DFS for the topological order
  std::vector<detail::Node<T>*> order;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  auto mark = [](detail::Node<T>* n) { return reinterpret_cast<std::uintptr_t>(n); };
  std::vector<std::uintptr_t> seen;
  seen.reserve(256);
  auto is_seen = [&](detail::Node<T>* n) {
    return std::find(seen.begin(), seen.end(), mark(n)) != seen.end();
  };
  stack.push_back({root.get(), 0});
  seen.push_back(mark(root.get()));
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node<T>* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !is_seen(p)) {
        seen.push_back(mark(p));
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->ensure_grad();
  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------
// ops

template <typename T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() >= 2 && sa.size() <= 3 && sb.size() >= 2 && sb.size() <= 3,
          "matmul supports 2D and 3D operands, got " + shape_str(sa) + " and " + shape_str(sb));
  const bool ba = sa.size() == 3, bb = sb.size() == 3;
  const std::size_t B = ba ? sa[0] : (bb ? sb[0] : 1);
  if (ba && bb) require(sa[0] == sb[0], "matmul batch mismatch");
  require(!(!ba && bb), "matmul: batched rhs with 2D lhs is not supported");
  const std::size_t m = sa[ba ? 1 : 0], k = sa[ba ? 2 : 1];
  const std::size_t kb = sb[bb ? 1 : 0], n = sb[bb ? 2 : 1];
  require(k == kb, "matmul inner dimension mismatch: " + shape_str(sa) + " * " + shape_str(sb));

  Shape out_shape = ba ? Shape{B, m, n} : Shape{m, n};
  std::vector<T> out(numel(out_shape), T(0));
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < B; ++i) {
    detail::mm_nn(pa + (ba ? i * m * k : 0), pb + (bb ? i * k * n : 0), out.data() + i * m * n, m, k, n);
  }

  auto node = detail::make_result<T>(out_shape, std::move(out), {a.node(), b.node()}, "matmul");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    node->backprop = [an, bn, B, m, k, n, ba, bb](detail::Node<T>& self) {
      const T* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < B; ++i)
          detail::mm_nt(g + i * m * n, bn->value.data() + (bb ? i * k * n : 0),
                        an->grad.data() + (ba ? i * m * k : 0), m, n, k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < B; ++i)
          detail::mm_tn(an->value.data() + (ba ? i * m * k : 0), g + i * m * n,
                        bn->grad.data() + (bb ? i * k * n : 0), k, m, n);
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// b broadcasts against a when b.shape is a suffix of a.shape.
template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sb.size() <= sa.size(), "add: second operand has higher rank");
  for (std::size_t i = 0; i < sb.size(); ++i)
    require(sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i],
            "add shape mismatch: " + shape_str(sa) + " + " + shape_str(sb));
  const std::size_t nb = numel(sb);
  const std::size_t reps = numel(sa) / nb;

  std::vector<T> out(a.value());
  for (std::size_t r = 0; r < reps; ++r) {
    T* o = out.data() + r * nb;
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < nb; ++i) o[i] += pb[i];
  }
  auto node = detail::make_result<T>(sa, std::move(out), {a.node(), b.node()}, "add");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    node->backprop = [an, bn, nb, reps](detail::Node<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < reps; ++r) {
          const T* g = self.grad.data() + r * nb;
          for (std::size_t i = 0; i < nb; ++i) bn->grad[i] += g[i];
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul requires equal shapes");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto node = detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "mul");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    node->backprop = [an, bn](detail::Node<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  auto node = detail::make_result<T>(a.shape(), std::move(out), {a.node()}, "scale");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, c](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.size(),
          "reshape to " + shape_str(shape) + " changes element count");
  auto node = detail::make_result<T>(std::move(shape), a.value(), {a.node()}, "reshape");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    };
  }
  return Tensor<T>::wrap(node);
}

// swap the last two axes of a 2D or 3D tensor
template <typename T>
inline Tensor<T> transpose(const Tensor<T>& a) {
  const Shape& s = a.shape();
  require(s.size() == 2 || s.size() == 3, "transpose supports 2D/3D");
  const std::size_t B = s.size() == 3 ? s[0] : 1;
  const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<T> out(a.size());
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = a.value().data() + b * m * n;
    T* dst = out.data() + b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  auto node = detail::make_result<T>(out_shape, std::move(out), {a.node()}, "transpose");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, B, m, n](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t b = 0; b < B; ++b) {
        const T* g = self.grad.data() + b * m * n;
        T* dst = an->grad.data() + b * m * n;
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t i = 0; i < m; ++i) dst[i * n + j] += g[j * m + i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), "concat axis out of range");
  Shape out_shape = s0;
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == s0.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis) require(s[i] == s0[i], "concat shape mismatch off-axis");
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  // view every tensor as [outer, axis_len, inner]
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets(parts.size());
  {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      offsets[pi] = off;
      const std::size_t alen = parts[pi].shape()[axis];
      const T* src = parts[pi].value().data();
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy(src + o * alen * inner, src + (o + 1) * alen * inner,
                  out.data() + (o * axis_total + off) * inner);
      }
      off += alen;
    }
  }
  std::vector<typename Tensor<T>::NodePtr> parent_nodes;
  for (const auto& p : parts) parent_nodes.push_back(p.node());
  auto node = detail::make_result<T>(out_shape, std::move(out), parent_nodes, "concat");
  if (node->requires_grad) {
    node->backprop = [parent_nodes, offsets, outer, inner, axis_total, axis](detail::Node<T>& self) {
      for (std::size_t pi = 0; pi < parent_nodes.size(); ++pi) {
        auto& pn = parent_nodes[pi];
        if (!pn->requires_grad) continue;
        pn->ensure_grad();
        const std::size_t alen = pn->shape[axis];
        for (std::size_t o = 0; o < outer; ++o) {
          const T* g = self.grad.data() + (o * axis_total + offsets[pi]) * inner;
          T* dst = pn->grad.data() + o * alen * inner;
          for (std::size_t i = 0; i < alen * inner; ++i) dst[i] += g[i];
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  require(axis < s.size(), "slice axis out of range");
  require(start + len <= s[axis], "slice range out of bounds");
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t alen = s[axis];

  std::vector<T> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(a.value().data() + (o * alen + start) * inner,
              a.value().data() + (o * alen + start + len) * inner,
              out.data() + o * len * inner);
  auto node = detail::make_result<T>(out_shape, std::move(out), {a.node()}, "slice");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, outer, inner, alen, start, len](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = self.grad.data() + o * len * inner;
        T* dst = an->grad.data() + (o * alen + start) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// replicate a [r,c] tensor into [B,r,c]; gradient sums over the batch
template <typename T>
inline Tensor<T> tile_batch(const Tensor<T>& a, std::size_t B) {
  require(a.rank() == 2, "tile_batch expects a 2D tensor");
  const std::size_t n = a.size();
  std::vector<T> out(n * B);
  for (std::size_t b = 0; b < B; ++b)
    std::copy(a.value().begin(), a.value().end(), out.begin() + b * n);
  Shape out_shape{B, a.shape()[0], a.shape()[1]};
  auto node = detail::make_result<T>(out_shape, std::move(out), {a.node()}, "tile_batch");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, B, n](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t b = 0; b < B; ++b) {
        const T* g = self.grad.data() + b * n;
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// numerically stable softmax along the last axis
template <typename T>
inline Tensor<T> softmax(const Tensor<T>& a) {
  const Shape& s = a.shape();
  require(!s.empty(), "softmax on empty shape");
  const std::size_t n = s.back();
  const std::size_t rows = a.size() / n;
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.value().data() + r * n;
    T* y = out.data() + r * n;
    T mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    const T inv = T(1) / sum;
    for (std::size_t i = 0; i < n; ++i) y[i] *= inv;
  }
  auto node = detail::make_result<T>(s, std::move(out), {a.node()}, "softmax");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, rows, n](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.value.data() + r * n;
        const T* g = self.grad.data() + r * n;
        T dot = T(0);
        for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        T* dst = an->grad.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] += (g[i] - dot) * y[i];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

namespace detail {

template <typename T>
inline Tensor<T> layer_norm_impl(const Tensor<T>& a, const Tensor<T>* gain,
                                 const Tensor<T>* bias, T eps) {
  const Shape& s = a.shape();
  require(!s.empty(), "layer_norm on empty shape");
  const std::size_t n = s.back();
  const std::size_t rows = a.size() / n;
  if (gain) {
    require(gain->size() == n && bias && bias->size() == n,
            "layer_norm gain/bias must match the normalized axis");
  }
  std::vector<T> out(a.size());
  std::vector<T> xhat(a.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.value().data() + r * n;
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= T(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = x[i] - mean;
      var += d * d;
    }
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const T h = (x[i] - mean) * is;
      xhat[r * n + i] = h;
      out[r * n + i] = gain ? h * gain->value()[i] + bias->value()[i] : h;
    }
  }
  std::vector<typename Tensor<T>::NodePtr> parents{a.node()};
  if (gain) {
    parents.push_back(gain->node());
    parents.push_back(bias->node());
  }
  auto node = make_result<T>(s, std::move(out), parents, "layer_norm");
  if (node->requires_grad) {
    auto an = a.node();
    typename Tensor<T>::NodePtr gn = gain ? gain->node() : nullptr;
    typename Tensor<T>::NodePtr bn = bias ? bias->node() : nullptr;
    auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    node->backprop = [an, gn, bn, xh, istd, rows, n](Node<T>& self) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = self.grad.data() + r * n;
        const T* h = xh->data() + r * n;
        if (gn && gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) gn->grad[i] += g[i] * h[i];
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g[i];
        }
        if (an->requires_grad) {
          an->ensure_grad();
          // dxhat = g * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t i = 0; i < n; ++i) {
            const T dh = gn ? g[i] * gn->value[i] : g[i];
            mean_dh += dh;
            mean_dh_h += dh * h[i];
          }
          mean_dh /= T(n);
          mean_dh_h /= T(n);
          T* dst = an->grad.data() + r * n;
          const T is = (*istd)[r];
          for (std::size_t i = 0; i < n; ++i) {
            const T dh = gn ? g[i] * gn->value[i] : g[i];
            dst[i] += (dh - mean_dh - h[i] * mean_dh_h) * is;
          }
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

}  // namespace detail

template <typename T>
inline Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias,
                            T eps = T(1e-5)) {
  return detail::layer_norm_impl(a, &gain, &bias, eps);
}

template <typename T>
inline Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-5)) {
  return detail::layer_norm_impl<T>(a, nullptr, nullptr, eps);
}

namespace detail {
inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}
inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}
}  // namespace detail

// exact GELU, x/2 * (1 + erf(x/sqrt(2)))
template <typename T>
inline Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(detail::gelu_value(static_cast<double>(a.value()[i])));
  auto node = detail::make_result<T>(a.shape(), std::move(out), {a.node()}, "gelu");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double x = static_cast<double>(an->value[i]);
        an->grad[i] += self.grad[i] * static_cast<T>(detail::gelu_derivative(x));
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// inverted dropout; identity when train is false or rate is zero
template <typename T>
inline Tensor<T> dropout(const Tensor<T>& a, double rate, bool train, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1)");
  if (!train || rate == 0.0) return a;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const T keep_inv = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(a.size());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = uni(rng) < rate ? T(0) : keep_inv;
    (*mask)[i] = m;
    out[i] = a.value()[i] * m;
  }
  auto node = detail::make_result<T>(a.shape(), std::move(out), {a.node()}, "dropout");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, mask](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * (*mask)[i];
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.value()) acc += v;
  auto node = detail::make_result<T>({1}, {acc}, {a.node()}, "sum");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
inline Tensor<T> mean(const Tensor<T>& a) {
  const T inv = T(1) / T(a.size());
  T acc = T(0);
  for (T v : a.value()) acc += v;
  auto node = detail::make_result<T>({1}, {acc * inv}, {a.node()}, "mean");
  if (node->requires_grad) {
    auto an = a.node();
    node->backprop = [an, inv](detail::Node<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0] * inv;
    };
  }
  return Tensor<T>::wrap(node);
}

// mean negative log-likelihood over the batch, computed via log-sum-exp
template <typename T>
inline Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require(logits.rank() == 2, "cross_entropy expects [batch x classes] logits");
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  require(labels.size() == B, "cross_entropy label count mismatch");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < C, "cross_entropy label out of range");

  auto probs = std::make_shared<std::vector<T>>(logits.size());
  T loss = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    const T* x = logits.value().data() + b * C;
    T mx = x[0];
    for (std::size_t i = 1; i < C; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < C; ++i) sum += std::exp(x[i] - mx);
    const T lse = mx + std::log(sum);
    loss += lse - x[labels[b]];
    T* p = probs->data() + b * C;
    for (std::size_t i = 0; i < C; ++i) p[i] = std::exp(x[i] - lse);
  }
  loss /= T(B);
  auto node = detail::make_result<T>({1}, {loss}, {logits.node()}, "cross_entropy");
  if (node->requires_grad) {
    auto ln = logits.node();
    auto lab = std::make_shared<std::vector<int>>(labels);
    node->backprop = [ln, probs, lab, B, C](detail::Node<T>& self) {
      ln->ensure_grad();
      const T g = self.grad[0] / T(B);
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = probs->data() + b * C;
        T* dst = ln->grad.data() + b * C;
        for (std::size_t i = 0; i < C; ++i) dst[i] += g * p[i];
        dst[(*lab)[b]] -= g;
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// ---------------------------------------------------------------------
// non-differentiable helpers

template <typename T>
inline std::vector<int> argmax_rows(const Tensor<T>& t) {
  require(t.rank() == 2, "argmax_rows expects a 2D tensor");
  const std::size_t B = t.shape()[0], C = t.shape()[1];
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T* x = t.value().data() + b * C;
    std::size_t best = 0;
    for (std::size_t i = 1; i < C; ++i)
      if (x[i] > x[best]) best = i;
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cthgr
