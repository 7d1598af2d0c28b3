// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vtlab/errors.hpp"
#include "vtlab/rng.hpp"

namespace vtlab {

// Dense row-major tensors with reverse-mode autodiff. Templated on the
// scalar so the training path runs in float while gradient-check suites
// instantiate the exact same code in double.
//
// A TensorT is a shared handle to a graph node; ops link result nodes to
// their parents and attach a backward closure that accumulates into the
// parents' grad buffers. backward() walks the graph in reverse topological
// order.

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename S>
struct TensorNode {
  std::vector<size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }

  // Iterative teardown; long op chains would otherwise recurse through
  // shared_ptr destructors and overflow the stack.
  ~TensorNode() {
    std::vector<std::shared_ptr<TensorNode>> stack(std::make_move_iterator(parents.begin()),
                                                   std::make_move_iterator(parents.end()));
    parents.clear();
    while (!stack.empty()) {
      std::shared_ptr<TensorNode> p = std::move(stack.back());
      stack.pop_back();
      if (p && p.use_count() == 1) {
        for (auto& q : p->parents) stack.push_back(std::move(q));
        p->parents.clear();
      }
    }
  }
};

template <typename S>
class TensorT {
 public:
  using Node = TensorNode<S>;

  TensorT() : node_(std::make_shared<Node>()) {}

  explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  TensorT(std::vector<size_t> shape, S fill = S(0), bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->shape = std::move(shape);
    node_->value.assign(count(node_->shape), fill);
    node_->requires_grad = requires_grad;
  }

  TensorT(std::vector<size_t> shape, std::vector<S> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (count(shape) != data.size()) {
      throw ContractError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static TensorT zeros(std::vector<size_t> shape, bool requires_grad = false) {
    return TensorT(std::move(shape), S(0), requires_grad);
  }
  static TensorT ones(std::vector<size_t> shape, bool requires_grad = false) {
    return TensorT(std::move(shape), S(1), requires_grad);
  }
  static TensorT full(std::vector<size_t> shape, S v, bool requires_grad = false) {
    return TensorT(std::move(shape), v, requires_grad);
  }
  static TensorT randn(std::vector<size_t> shape, Rng& rng, double stddev,
                       bool requires_grad = false) {
    TensorT t(std::move(shape), S(0), requires_grad);
    for (auto& v : t.node_->value) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  size_t cols() const {
    if (node_->shape.size() >= 2) return node_->shape[1];
    return node_->shape.empty() ? (node_->value.empty() ? 0 : 1) : node_->shape[0];
  }
  bool is_matrix() const { return node_->shape.size() == 2; }
  bool is_scalar() const { return node_->value.size() == 1; }

  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }
  S item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }
  S& at(size_t i) { return node_->value[i]; }
  S at(size_t i) const { return node_->value[i]; }
  S& at2(size_t r, size_t c) { return node_->value[r * cols() + c]; }
  S at2(size_t r, size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad_view() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  std::shared_ptr<Node> node() const { return node_; }

  EMap<S> mat() { return EMap<S>(node_->value.data(), rows(), cols()); }
  ECMap<S> mat() const { return ECMap<S>(node_->value.data(), rows(), cols()); }
  EMap<S> grad_mat() {
    node_->ensure_grad();
    return EMap<S>(node_->grad.data(), rows(), cols());
  }

  // Accumulates gradients into every reachable requires_grad tensor.
  // Calling twice without zeroing accumulates additively: leaf gradients
  // persist while interior scratch gradients reset per pass.
  void backward() const {
    if (!is_scalar()) {
      throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    std::vector<Node*> topo = topo_order();
    for (Node* n : topo) {
      if (n->backward_fn && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), S(0));
    }
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }

 private:
  // Iterative post-order DFS from this node.
  std::vector<Node*> topo_order() const {
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    struct Frame {
      Node* n;
      size_t next_parent;
    };
    std::vector<Frame> stack;
    if (visited.insert(node_.get()).second) stack.push_back({node_.get(), 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.n->parents.size()) {
        Node* p = f.n->parents[f.next_parent++].get();
        if (visited.insert(p).second) stack.push_back({p, 0});
      } else {
        topo.push_back(f.n);
        stack.pop_back();
      }
    }
    return topo;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<TensorNode<S>> make_result(std::vector<size_t> shape,
                                           std::initializer_list<TensorT<S>> parents) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value.assign(TensorT<S>::count(n->shape), S(0));
  bool rg = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    rg = rg || p.requires_grad();
  }
  n->requires_grad = rg;
  return n;
}

template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and affine ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto n = detail::make_result<S>(a.shape(), {a, b});
  const size_t m = a.size();
  for (size_t i = 0; i < m; ++i) n->value[i] = a.data()[i] + b.data()[i];
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      for (int k = 0; k < 2; ++k) {
        auto& p = self.parents[k];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto n = detail::make_result<S>(a.shape(), {a, b});
  for (size_t i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] - b.data()[i];
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
      }
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto n = detail::make_result<S>(a.shape(), {a, b});
  for (size_t i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] * b.data()[i];
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
      }
    };
  }
  return TensorT<S>(n);
}

// min(a, b) elementwise; subgradient goes to a where a < b, else to b.
template <typename S>
TensorT<S> min_elem(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "min_elem");
  auto n = detail::make_result<S>(a.shape(), {a, b});
  for (size_t i = 0; i < a.size(); ++i) n->value[i] = std::min(a.data()[i], b.data()[i]);
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const bool take_a = pa->value[i] < pb->value[i];
        auto& p = take_a ? pa : pb;
        if (!p->requires_grad) continue;
        p->ensure_grad();
        p->grad[i] += self.grad[i];
      }
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  auto n = detail::make_result<S>(a.shape(), {a});
  for (size_t i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] * c;
  if (n->requires_grad) {
    n->backward_fn = [c](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  auto n = detail::make_result<S>(a.shape(), {a});
  for (size_t i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] + c;
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
  }
  return TensorT<S>(n);
}

// Broadcast-add a row vector b (shape [n] or [1,n]) to every row of a [m,n].
template <typename S>
TensorT<S> add_rowvec(const TensorT<S>& a, const TensorT<S>& b) {
  const size_t m = a.rows(), k = a.cols();
  if (b.size() != k) {
    throw ContractError("add_rowvec: vector " + shape_str(b.shape()) + " vs matrix " +
                        shape_str(a.shape()));
  }
  auto n = detail::make_result<S>(a.shape(), {a, b});
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < k; ++c) n->value[r * k + c] = a.data()[r * k + c] + b.data()[c];
  if (n->requires_grad) {
    n->backward_fn = [m, k](TensorNode<S>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t r = 0; r < m; ++r)
          for (size_t c = 0; c < k; ++c) pb->grad[c] += self.grad[r * k + c];
      }
    };
  }
  return TensorT<S>(n);
}

// Broadcast-multiply each row of a [m,n] by column vector c [m] or [m,1].
template <typename S>
TensorT<S> mul_colvec(const TensorT<S>& a, const TensorT<S>& c) {
  const size_t m = a.rows(), k = a.cols();
  if (c.size() != m) {
    throw ContractError("mul_colvec: vector " + shape_str(c.shape()) + " vs matrix " +
                        shape_str(a.shape()));
  }
  auto n = detail::make_result<S>(a.shape(), {a, c});
  for (size_t r = 0; r < m; ++r)
    for (size_t j = 0; j < k; ++j) n->value[r * k + j] = a.data()[r * k + j] * c.data()[r];
  if (n->requires_grad) {
    n->backward_fn = [m, k](TensorNode<S>& self) {
      auto& pa = self.parents[0];
      auto& pc = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t r = 0; r < m; ++r)
          for (size_t j = 0; j < k; ++j)
            pa->grad[r * k + j] += self.grad[r * k + j] * pc->value[r];
      }
      if (pc->requires_grad) {
        pc->ensure_grad();
        for (size_t r = 0; r < m; ++r) {
          S acc = S(0);
          for (size_t j = 0; j < k; ++j) acc += self.grad[r * k + j] * pa->value[r * k + j];
          pc->grad[r] += acc;
        }
      }
    };
  }
  return TensorT<S>(n);
}

template <typename S, typename F, typename DF>
TensorT<S> unary_op(const TensorT<S>& a, F f, DF df) {
  auto n = detail::make_result<S>(a.shape(), {a});
  for (size_t i = 0; i < a.size(); ++i) n->value[i] = f(a.data()[i]);
  if (n->requires_grad) {
    n->backward_fn = [df](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        p->grad[i] += self.grad[i] * df(p->value[i], self.value[i]);
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> tanh_op(const TensorT<S>& a) {
  return unary_op(
      a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  return unary_op(
      a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  return unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// Standard matrix product [m,k] x [k,n] -> [m,n]. Inner kernels go through
// Eigen maps; the backward accumulates dL/da = dL/dc * b^T and
// dL/db = a^T * dL/dc.
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
    throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const size_t m = a.rows(), k = a.cols(), n_cols = b.cols();
  auto n = detail::make_result<S>({m, n_cols}, {a, b});
  {
    ECMap<S> ma(a.data().data(), m, k);
    ECMap<S> mb(b.data().data(), k, n_cols);
    EMap<S> mc(n->value.data(), m, n_cols);
    mc.noalias() = ma * mb;
  }
  if (n->requires_grad) {
    n->backward_fn = [m, k, n_cols](TensorNode<S>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      ECMap<S> g(self.grad.data(), m, n_cols);
      if (pa->requires_grad) {
        pa->ensure_grad();
        EMap<S> ga(pa->grad.data(), m, k);
        ECMap<S> vb(pb->value.data(), k, n_cols);
        ga.noalias() += g * vb.transpose();
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        EMap<S> gb(pb->grad.data(), k, n_cols);
        ECMap<S> va(pa->value.data(), m, k);
        gb.noalias() += va.transpose() * g;
      }
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
  if (!a.is_matrix()) throw ContractError("transpose: expected matrix, got " + shape_str(a.shape()));
  const size_t m = a.rows(), k = a.cols();
  auto n = detail::make_result<S>({k, m}, {a});
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < k; ++c) n->value[c * m + r] = a.data()[r * k + c];
  if (n->requires_grad) {
    n->backward_fn = [m, k](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t r = 0; r < m; ++r)
        for (size_t c = 0; c < k; ++c) p->grad[r * k + c] += self.grad[c * m + r];
    };
  }
  return TensorT<S>(n);
}

// ---------------------------------------------------------------------------
// reductions / reshaping
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  auto n = detail::make_result<S>({1}, {a});
  S acc = S(0);
  for (S v : a.data()) acc += v;
  n->value[0] = acc;
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[0];
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> mean(const TensorT<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, std::vector<size_t> shape) {
  if (TensorT<S>::count(shape) != a.size()) {
    throw ContractError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto n = detail::make_result<S>(std::move(shape), {a});
  n->value = a.data();
  if (n->requires_grad) {
    n->backward_fn = [](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
  }
  return TensorT<S>(n);
}

// Concatenate matrices with equal row counts along columns.
template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const size_t m = parts[0].rows();
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw ContractError("concat_cols: row mismatch " + shape_str(p.shape()));
    total += p.cols();
  }
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = {m, total};
  n->value.assign(m * total, S(0));
  bool rg = false;
  for (const auto& p : parts) {
    n->parents.push_back(p.node());
    rg = rg || p.requires_grad();
  }
  n->requires_grad = rg;
  std::vector<size_t> widths;
  widths.reserve(parts.size());
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t w = p.cols();
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < w; ++c) n->value[r * total + off + c] = p.data()[r * w + c];
    widths.push_back(w);
    off += w;
  }
  if (rg) {
    n->backward_fn = [m, total, widths](TensorNode<S>& self) {
      size_t off2 = 0;
      for (size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = self.parents[k];
        const size_t w = widths[k];
        if (p->requires_grad) {
          p->ensure_grad();
          for (size_t r = 0; r < m; ++r)
            for (size_t c = 0; c < w; ++c) p->grad[r * w + c] += self.grad[r * total + off2 + c];
        }
        off2 += w;
      }
    };
  }
  return TensorT<S>(n);
}

template <typename S>
TensorT<S> slice_col(const TensorT<S>& a, size_t col) {
  const size_t m = a.rows(), k = a.cols();
  if (col >= k) throw ContractError("slice_col: column out of range");
  auto n = detail::make_result<S>({m, 1}, {a});
  for (size_t r = 0; r < m; ++r) n->value[r] = a.data()[r * k + col];
  if (n->requires_grad) {
    n->backward_fn = [m, k, col](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t r = 0; r < m; ++r) p->grad[r * k + col] += self.grad[r];
    };
  }
  return TensorT<S>(n);
}

// Contiguous column slice [m, width] starting at col0.
template <typename S>
TensorT<S> slice_cols(const TensorT<S>& a, size_t col0, size_t width) {
  const size_t m = a.rows(), k = a.cols();
  if (col0 + width > k) throw ContractError("slice_cols: range out of bounds");
  auto n = detail::make_result<S>({m, width}, {a});
  for (size_t r = 0; r < m; ++r)
    std::copy_n(a.data().data() + r * k + col0, width, n->value.data() + r * width);
  if (n->requires_grad) {
    n->backward_fn = [m, k, col0, width](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t r = 0; r < m; ++r)
        for (size_t c = 0; c < width; ++c)
          p->grad[r * k + col0 + c] += self.grad[r * width + c];
    };
  }
  return TensorT<S>(n);
}

// Gather rows of a [V,d] by index; backward scatter-adds into the table.
// Doubles as the embedding lookup.
template <typename S>
TensorT<S> gather_rows(const TensorT<S>& a, std::vector<int> ids) {
  const size_t v = a.rows(), d = a.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw std::out_of_range("gather_rows: index " + std::to_string(id) + " out of [0," +
                              std::to_string(v) + ")");
  }
  auto n = detail::make_result<S>({ids.size(), d}, {a});
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy_n(a.data().data() + static_cast<size_t>(ids[r]) * d, d, n->value.data() + r * d);
  if (n->requires_grad) {
    n->backward_fn = [ids, d](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t r = 0; r < ids.size(); ++r) {
        S* dst = p->grad.data() + static_cast<size_t>(ids[r]) * d;
        const S* src = self.grad.data() + r * d;
        for (size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    };
  }
  return TensorT<S>(n);
}

// ---------------------------------------------------------------------------
// softmax / layer norm / losses
// ---------------------------------------------------------------------------

// Row-wise stable softmax. axis must name the last axis of a vector or
// matrix input. Rejects non-finite inputs.
template <typename S>
TensorT<S> softmax(const TensorT<S>& a, int axis = -1) {
  const size_t ndim = a.shape().size();
  const int last = static_cast<int>(ndim) - 1;
  if (ndim == 0 || ndim > 2 || (axis != -1 && axis != last)) {
    throw ContractError("softmax: axis must be the last axis of a 1-D or 2-D tensor");
  }
  for (S v : a.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const size_t m = ndim == 2 ? a.rows() : 1;
  const size_t k = ndim == 2 ? a.cols() : a.size();
  auto n = detail::make_result<S>(a.shape(), {a});
  for (size_t r = 0; r < m; ++r) {
    const S* x = a.data().data() + r * k;
    S* y = n->value.data() + r * k;
    S mx = x[0];
    for (size_t c = 1; c < k; ++c) mx = std::max(mx, x[c]);
    S z = S(0);
    for (size_t c = 0; c < k; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    const S inv = S(1) / z;
    for (size_t c = 0; c < k; ++c) y[c] *= inv;
  }
  if (n->requires_grad) {
    n->backward_fn = [m, k](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t r = 0; r < m; ++r) {
        const S* y = self.value.data() + r * k;
        const S* gy = self.grad.data() + r * k;
        S dot = S(0);
        for (size_t c = 0; c < k; ++c) dot += gy[c] * y[c];
        S* gx = p->grad.data() + r * k;
        for (size_t c = 0; c < k; ++c) gx[c] += y[c] * (gy[c] - dot);
      }
    };
  }
  return TensorT<S>(n);
}

// Layer normalization over the last axis with affine gain/bias, eps 1e-6.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias) {
  const size_t k = x.cols(), m = x.size() / k;
  if (gain.size() != k || bias.size() != k) {
    throw ContractError("layer_norm: gain/bias must have " + std::to_string(k) + " entries");
  }
  constexpr double kEps = 1e-6;
  auto n = detail::make_result<S>(x.shape(), {x, gain, bias});
  std::vector<S> inv_sigma(m), xhat(m * k);
  for (size_t r = 0; r < m; ++r) {
    const S* row = x.data().data() + r * k;
    S mu = S(0);
    for (size_t c = 0; c < k; ++c) mu += row[c];
    mu /= static_cast<S>(k);
    S var = S(0);
    for (size_t c = 0; c < k; ++c) {
      const S d = row[c] - mu;
      var += d * d;
    }
    var /= static_cast<S>(k);
    const S inv = S(1) / std::sqrt(var + static_cast<S>(kEps));
    inv_sigma[r] = inv;
    for (size_t c = 0; c < k; ++c) {
      const S xh = (row[c] - mu) * inv;
      xhat[r * k + c] = xh;
      n->value[r * k + c] = xh * gain.data()[c] + bias.data()[c];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [m, k, inv_sigma = std::move(inv_sigma),
                      xhat = std::move(xhat)](TensorNode<S>& self) {
      auto& px = self.parents[0];
      auto& pg = self.parents[1];
      auto& pb = self.parents[2];
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      for (size_t r = 0; r < m; ++r) {
        const S* gy = self.grad.data() + r * k;
        const S* xh = xhat.data() + r * k;
        if (pg->requires_grad || pb->requires_grad) {
          for (size_t c = 0; c < k; ++c) {
            if (pg->requires_grad) pg->grad[c] += gy[c] * xh[c];
            if (pb->requires_grad) pb->grad[c] += gy[c];
          }
        }
        if (px->requires_grad) {
          S mean_d1 = S(0), mean_d1x = S(0);
          for (size_t c = 0; c < k; ++c) {
            const S d1 = gy[c] * pg->value[c];
            mean_d1 += d1;
            mean_d1x += d1 * xh[c];
          }
          mean_d1 /= static_cast<S>(k);
          mean_d1x /= static_cast<S>(k);
          S* gx = px->grad.data() + r * k;
          for (size_t c = 0; c < k; ++c) {
            const S d1 = gy[c] * pg->value[c];
            gx[c] += (d1 - mean_d1 - xh[c] * mean_d1x) * inv_sigma[r];
          }
        }
      }
    };
  }
  return TensorT<S>(n);
}

constexpr double kLogFloor = 1e-12;  // probability floor before log

// Negative log-likelihood of a target under a probability vector.
// The probability is floored at 1e-12 before the log.
template <typename S>
TensorT<S> nll_loss(const TensorT<S>& dist, size_t target_id) {
  if (dist.shape().size() > 1 && dist.rows() != 1) {
    throw ContractError("nll_loss: expected a single probability vector");
  }
  if (target_id >= dist.size()) {
    throw std::out_of_range("nll_loss: target " + std::to_string(target_id) + " out of [0," +
                            std::to_string(dist.size()) + ")");
  }
  S total = S(0);
  for (S v : dist.data()) total += v;
  if (std::abs(static_cast<double>(total) - 1.0) > 1e-5) {
    throw ContractError("nll_loss: input does not sum to 1 (got " +
                        std::to_string(static_cast<double>(total)) + ")");
  }
  auto n = detail::make_result<S>({1}, {dist});
  const S p = std::max(dist.data()[target_id], static_cast<S>(kLogFloor));
  n->value[0] = -std::log(p);
  if (n->requires_grad) {
    n->backward_fn = [target_id](TensorNode<S>& self) {
      auto& pd = self.parents[0];
      pd->ensure_grad();
      const S pv = pd->value[target_id];
      if (pv > static_cast<S>(kLogFloor)) pd->grad[target_id] += self.grad[0] * (-S(1) / pv);
    };
  }
  return TensorT<S>(n);
}

// Batched NLL: sum of -log(probs[r, targets[r]]) over rows where
// targets[r] >= 0; rows with target -1 are masked out. Same floor as
// nll_loss. Returns the sum; callers divide by their own token count.
template <typename S>
TensorT<S> nll_rows(const TensorT<S>& probs, const std::vector<int>& targets) {
  const size_t m = probs.rows(), k = probs.cols();
  if (targets.size() != m) throw ContractError("nll_rows: one target per row required");
  for (int t : targets) {
    if (t >= static_cast<int>(k))
      throw std::out_of_range("nll_rows: target " + std::to_string(t) + " out of range");
  }
  auto n = detail::make_result<S>({1}, {probs});
  S acc = S(0);
  for (size_t r = 0; r < m; ++r) {
    if (targets[r] < 0) continue;
    const S p = std::max(probs.data()[r * k + static_cast<size_t>(targets[r])],
                         static_cast<S>(kLogFloor));
    acc -= std::log(p);
  }
  n->value[0] = acc;
  if (n->requires_grad) {
    n->backward_fn = [targets, k](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] < 0) continue;
        const size_t idx = r * k + static_cast<size_t>(targets[r]);
        const S pv = p->value[idx];
        if (pv > static_cast<S>(kLogFloor)) p->grad[idx] += self.grad[0] * (-S(1) / pv);
      }
    };
  }
  return TensorT<S>(n);
}

// ---------------------------------------------------------------------------
// structured ops for the models
// ---------------------------------------------------------------------------

// Scatter-add columns of src [m,n] into a fresh [m, out_cols] tensor at
// per-element column indices (index[r*n + j]). Repeated indices accumulate.
// This is the copy half of the pointer mixture: attention mass summed over
// duplicate source tokens.
template <typename S>
TensorT<S> scatter_add_cols(const TensorT<S>& src, const std::vector<int>& index,
                            size_t out_cols) {
  const size_t m = src.rows(), k = src.cols();
  if (index.size() != m * k) throw ContractError("scatter_add_cols: index size mismatch");
  for (int id : index) {
    if (id < 0 || static_cast<size_t>(id) >= out_cols)
      throw std::out_of_range("scatter_add_cols: column index out of range");
  }
  auto n = detail::make_result<S>({m, out_cols}, {src});
  for (size_t r = 0; r < m; ++r)
    for (size_t j = 0; j < k; ++j)
      n->value[r * out_cols + static_cast<size_t>(index[r * k + j])] += src.data()[r * k + j];
  if (n->requires_grad) {
    n->backward_fn = [index, k, out_cols](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      const size_t m2 = p->value.size() / k;
      for (size_t r = 0; r < m2; ++r)
        for (size_t j = 0; j < k; ++j)
          p->grad[r * k + j] += self.grad[r * out_cols + static_cast<size_t>(index[r * k + j])];
    };
  }
  return TensorT<S>(n);
}

// Inverted dropout. Mask is sampled once at construction; eval mode or
// rate 0 is the identity.
template <typename S>
TensorT<S> dropout(const TensorT<S>& a, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  auto n = detail::make_result<S>(a.shape(), {a});
  std::vector<uint8_t> keep(a.size());
  const S inv = static_cast<S>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < a.size(); ++i) {
    keep[i] = rng.uniform01() >= rate ? 1 : 0;
    n->value[i] = keep[i] ? a.data()[i] * inv : S(0);
  }
  if (n->requires_grad) {
    n->backward_fn = [keep = std::move(keep), inv](TensorNode<S>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (keep[i]) p->grad[i] += self.grad[i] * inv;
    };
  }
  return TensorT<S>(n);
}

// Fused scaled-dot-product multi-head attention over a packed batch.
// q: [batch*tq, d], k/v: [batch*tk, d], d = heads * head_dim.
// Masking: causal (j <= i) and/or per-example valid key lengths. Masked
// entries get probability exactly 0. Per-(example,head) attention matrices
// are cached for the backward pass; if attn_probs is non-null the forward
// probabilities are copied there ([batch, heads, tq, tk] layout).
template <typename S>
TensorT<S> multi_head_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                size_t batch, size_t tq, size_t tk, size_t heads, bool causal,
                                const std::vector<int>* key_lens,
                                std::vector<S>* attn_probs = nullptr) {
  const size_t d = q.cols();
  if (d % heads != 0) throw ContractError("multi_head_attention: heads must divide width");
  if (q.rows() != batch * tq || k.rows() != batch * tk || v.rows() != batch * tk ||
      k.cols() != d || v.cols() != d) {
    throw ContractError("multi_head_attention: inconsistent packed shapes");
  }
  if (key_lens && key_lens->size() != batch)
    throw ContractError("multi_head_attention: one key length per example required");
  const size_t hd = d / heads;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  auto out = detail::make_result<S>({batch * tq, d}, {q, k, v});

  auto probs = std::make_shared<std::vector<S>>(batch * heads * tq * tk, S(0));
  const S neg_inf = -std::numeric_limits<S>::infinity();

  using Stride = Eigen::OuterStride<>;
  using BlockMap = Eigen::Map<EMat<S>, 0, Stride>;
  using CBlockMap = Eigen::Map<const EMat<S>, 0, Stride>;

  for (size_t b = 0; b < batch; ++b) {
    const size_t klen = key_lens ? static_cast<size_t>((*key_lens)[b]) : tk;
    for (size_t h = 0; h < heads; ++h) {
      CBlockMap qb(q.data().data() + (b * tq) * d + h * hd, tq, hd, Stride(d));
      CBlockMap kb(k.data().data() + (b * tk) * d + h * hd, tk, hd, Stride(d));
      CBlockMap vb(v.data().data() + (b * tk) * d + h * hd, tk, hd, Stride(d));
      EMat<S> scores(tq, tk);
      scores.noalias() = qb * kb.transpose();
      scores *= inv_sqrt;
      for (size_t i = 0; i < tq; ++i) {
        for (size_t j = 0; j < tk; ++j) {
          const bool ok = (!causal || j <= i) && j < klen;
          if (!ok) scores(i, j) = neg_inf;
        }
      }
      S* prow = probs->data() + ((b * heads + h) * tq) * tk;
      for (size_t i = 0; i < tq; ++i) {
        S mx = neg_inf;
        for (size_t j = 0; j < tk; ++j) mx = std::max(mx, scores(i, j));
        S z = S(0);
        for (size_t j = 0; j < tk; ++j) {
          const S e = std::isinf(scores(i, j)) ? S(0) : std::exp(scores(i, j) - mx);
          prow[i * tk + j] = e;
          z += e;
        }
        const S inv = S(1) / z;
        for (size_t j = 0; j < tk; ++j) prow[i * tk + j] *= inv;
      }
      CBlockMap ab(prow, tq, tk, Stride(tk));
      BlockMap ob(out->value.data() + (b * tq) * d + h * hd, tq, hd, Stride(d));
      ob.noalias() = ab * vb;
    }
  }
  if (attn_probs) *attn_probs = *probs;

  if (out->requires_grad) {
    out->backward_fn = [batch, tq, tk, heads, hd, d, inv_sqrt, probs](TensorNode<S>& self) {
      auto& pq = self.parents[0];
      auto& pk = self.parents[1];
      auto& pv = self.parents[2];
      pq->ensure_grad();
      pk->ensure_grad();
      pv->ensure_grad();
      using Stride = Eigen::OuterStride<>;
      using BlockMap = Eigen::Map<EMat<S>, 0, Stride>;
      using CBlockMap = Eigen::Map<const EMat<S>, 0, Stride>;
      for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < heads; ++h) {
          CBlockMap qb(pq->value.data() + (b * tq) * d + h * hd, tq, hd, Stride(d));
          CBlockMap kb(pk->value.data() + (b * tk) * d + h * hd, tk, hd, Stride(d));
          CBlockMap vb(pv->value.data() + (b * tk) * d + h * hd, tk, hd, Stride(d));
          BlockMap gq(pq->grad.data() + (b * tq) * d + h * hd, tq, hd, Stride(d));
          BlockMap gk(pk->grad.data() + (b * tk) * d + h * hd, tk, hd, Stride(d));
          BlockMap gv(pv->grad.data() + (b * tk) * d + h * hd, tk, hd, Stride(d));
          CBlockMap go(self.grad.data() + (b * tq) * d + h * hd, tq, hd, Stride(d));
          CBlockMap ab(probs->data() + ((b * heads + h) * tq) * tk, tq, tk, Stride(tk));

          gv.noalias() += ab.transpose() * go;
          EMat<S> da(tq, tk);
          da.noalias() = go * vb.transpose();
          // softmax jacobian per row; masked entries have prob 0 so they
          // contribute nothing.
          EMat<S> ds(tq, tk);
          for (size_t i = 0; i < tq; ++i) {
            S dot = S(0);
            for (size_t j = 0; j < tk; ++j) dot += da(i, j) * ab(i, j);
            for (size_t j = 0; j < tk; ++j) ds(i, j) = ab(i, j) * (da(i, j) - dot);
          }
          ds *= inv_sqrt;
          gq.noalias() += ds * kb;
          gk.noalias() += ds.transpose() * qb;
        }
      }
    };
  }
  return TensorT<S>(out);
}

using Tensor = TensorT<float>;

}  // namespace vtlab
