#pragma once

// Reverse-mode differentiation over Tensor values. A Var is a handle to a
// node in a dynamically built graph; ops record their parents and a closure
// that pushes the node's gradient back to them. backward() walks the graph in
// reverse topological order. Leaf gradients accumulate across calls until
// zero_grad(), which is how mini-batches are summed.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "edenn/ops.hpp"
#include "edenn/tensor.hpp"

namespace edenn::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (!has_grad) {
      grad = Tensor<T>::zeros_like(value);
      has_grad = true;
    }
    return grad;
  }
};

namespace detail {
inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}
}  // namespace detail

/// While alive, ops on this thread build no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T = double>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by backward(); zeros if none reached this node.
  Tensor<T> grad() const { return node_->has_grad ? node_->grad : Tensor<T>::zeros_like(node_->value); }
  void zero_grad() {
    node_->grad = Tensor<T>();
    node_->has_grad = false;
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  template <typename U, typename Fn>
  friend Var<U> make_op(Tensor<U> value, std::vector<Var<U>> parents, Fn backward);

  std::shared_ptr<Node<T>> node_;
};

/// Creates an op node. `backward(node, parents)` receives the finished node
/// (whose grad is populated) and must accumulate into parents that require
/// gradients. Nothing is recorded when no parent needs a gradient.
template <typename T, typename Fn>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, Fn backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs && !detail::grad_disabled()) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward = [backward = std::move(backward)](Node<T>& self) { backward(self, self.parents); };
  }
  return Var<T>(std::move(n));
}

/// Accumulates dLoss/dLeaf into every reachable leaf that requires a gradient.
template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad) {
      n->backward(*n);
      // Interior gradients are not needed once propagated.
      n->grad = Tensor<T>();
      n->has_grad = false;
    }
  }
}

namespace detail {
template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  auto& dst = parent.ensure_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}
}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op(edenn::add(a.value(), b.value()), {a, b}, [](Node<T>& self, auto& ps) {
    detail::accumulate(*ps[0], self.grad);
    detail::accumulate(*ps[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_op(edenn::sub(a.value(), b.value()), {a, b}, [](Node<T>& self, auto& ps) {
    detail::accumulate(*ps[0], self.grad);
    if (ps[1]->requires_grad) detail::accumulate(*ps[1], edenn::scale(self.grad, T{-1}));
  });
}

/// Sum of many equally shaped values in a single node.
template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("add_n: no operands");
  Tensor<T> out = xs.front().value();
  for (std::size_t k = 1; k < xs.size(); ++k) out = edenn::add(out, xs[k].value());
  return make_op(std::move(out), xs, [](Node<T>& self, auto& ps) {
    for (auto& p : ps) detail::accumulate(*p, self.grad);
  });
}

/// Elementwise product of two equally shaped values.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_op(edenn::hadamard(a.value(), b.value()), {a, b}, [](Node<T>& self, auto& ps) {
    if (ps[0]->requires_grad) detail::accumulate(*ps[0], edenn::hadamard(self.grad, ps[1]->value));
    if (ps[1]->requires_grad) detail::accumulate(*ps[1], edenn::hadamard(self.grad, ps[0]->value));
  });
}

/// Product with a constant tensor, which may be a channel-less mask.
template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& mask) {
  return make_op(edenn::hadamard(a.value(), mask), {a}, [mask](Node<T>& self, auto& ps) {
    detail::accumulate(*ps[0], edenn::hadamard(self.grad, mask));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return make_op(edenn::scale(a.value(), s), {a},
                 [s](Node<T>& self, auto& ps) { detail::accumulate(*ps[0], edenn::scale(self.grad, s)); });
}

/// a(..., c) * g(c).
template <typename T>
Var<T> scale_channels(const Var<T>& a, const Var<T>& g) {
  return make_op(edenn::scale_channels(a.value(), g.value()), {a, g}, [](Node<T>& self, auto& ps) {
    const auto& av = ps[0]->value;
    const auto& gv = ps[1]->value;
    if (ps[0]->requires_grad) detail::accumulate(*ps[0], edenn::scale_channels(self.grad, gv));
    if (ps[1]->requires_grad) {
      const std::size_t C = gv.size();
      Tensor<T> dg(gv.shape());
      for (std::size_t i = 0; i < av.size(); ++i) dg[i % C] += self.grad[i] * av[i];
      detail::accumulate(*ps[1], dg);
    }
  });
}

/// a(..., c) + b(c).
template <typename T>
Var<T> add_channel_bias(const Var<T>& a, const Var<T>& b) {
  const std::size_t C = a.shape().back();
  if (b.value().size() != C) throw ShapeError("add_channel_bias: " + to_string(b.shape()) + " over " + to_string(a.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % C];
  return make_op(std::move(out), {a, b}, [C](Node<T>& self, auto& ps) {
    detail::accumulate(*ps[0], self.grad);
    if (ps[1]->requires_grad) {
      Tensor<T> g(ps[1]->value.shape());
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % C] += self.grad[i];
      detail::accumulate(*ps[1], g);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride = 1, Padding padding = Padding::same) {
  return make_op(edenn::conv2d(x.value(), kernel.value(), stride, padding), {x, kernel},
                 [stride, padding](Node<T>& self, auto& ps) {
                   if (ps[0]->requires_grad) {
                     detail::accumulate(*ps[0], conv2d_grad_input(self.grad, ps[1]->value, ps[0]->value.shape(),
                                                                  stride, padding));
                   }
                   if (ps[1]->requires_grad) {
                     detail::accumulate(*ps[1], conv2d_grad_kernel(self.grad, ps[0]->value, ps[1]->value.shape(),
                                                                   stride, padding));
                   }
                 });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  return make_op(std::move(out), {a}, [](Node<T>& self, auto& ps) {
    Tensor<T> g(self.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * (T{1} - self.value[i] * self.value[i]);
    detail::accumulate(*ps[0], g);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(T{}, a.value()[i]);
  return make_op(std::move(out), {a}, [](Node<T>& self, auto& ps) {
    Tensor<T> g(self.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = ps[0]->value[i] > T{} ? self.grad[i] : T{};
    detail::accumulate(*ps[0], g);
  });
}

/// num / den elementwise, with the result (and its gradient) forced to 0
/// wherever |den| < eps.
template <typename T>
Var<T> div_guarded(const Var<T>& num, const Var<T>& den, T eps) {
  const auto& n = num.value();
  const auto& d = den.value();
  if (n.shape() != d.shape()) throw ShapeError("div_guarded: shape mismatch");
  Tensor<T> out(n.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(d[i]) < eps ? T{} : n[i] / d[i];
  return make_op(std::move(out), {num, den}, [eps](Node<T>& self, auto& ps) {
    const auto& nv = ps[0]->value;
    const auto& dv = ps[1]->value;
    Tensor<T> gn(nv.shape()), gd(nv.shape());
    for (std::size_t i = 0; i < nv.size(); ++i) {
      if (std::abs(dv[i]) < eps) continue;
      gn[i] = self.grad[i] / dv[i];
      gd[i] = -self.grad[i] * nv[i] / (dv[i] * dv[i]);
    }
    detail::accumulate(*ps[0], gn);
    detail::accumulate(*ps[1], gd);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  return make_op(Tensor<T>::scalar(edenn::sum(a.value())), {a}, [](Node<T>& self, auto& ps) {
    Tensor<T> g(ps[0]->value.shape(), self.grad[0]);
    detail::accumulate(*ps[0], g);
  });
}

/// Mean over the spatial axes of (W, H, C), giving (C).
template <typename T>
Var<T> global_avg_pool(const Var<T>& a) {
  const auto& v = a.value();
  if (v.rank() != 3) throw ShapeError("global_avg_pool expects (W,H,C), got " + to_string(v.shape()));
  const std::size_t P = v.dim(0) * v.dim(1), C = v.dim(2);
  Tensor<T> out({C});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += v[p * C + c];
  for (std::size_t c = 0; c < C; ++c) out[c] /= static_cast<T>(P);
  return make_op(std::move(out), {a}, [P, C](Node<T>& self, auto& ps) {
    Tensor<T> g(ps[0]->value.shape());
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) g[p * C + c] = self.grad[c] / static_cast<T>(P);
    detail::accumulate(*ps[0], g);
  });
}

/// y(d) = sum_c x(c) W(c, d).
template <typename T>
Var<T> matvec(const Var<T>& x, const Var<T>& w) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (wv.rank() != 2 || wv.dim(0) != xv.size()) {
    throw ShapeError("matvec: " + to_string(xv.shape()) + " against " + to_string(wv.shape()));
  }
  const std::size_t C = wv.dim(0), D = wv.dim(1);
  Tensor<T> out({D});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < D; ++d) out[d] += xv[c] * wv(c, d);
  return make_op(std::move(out), {x, w}, [C, D](Node<T>& self, auto& ps) {
    const auto& xv = ps[0]->value;
    const auto& wv = ps[1]->value;
    if (ps[0]->requires_grad) {
      Tensor<T> gx(xv.shape());
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < D; ++d) gx[c] += self.grad[d] * wv(c, d);
      detail::accumulate(*ps[0], gx);
    }
    if (ps[1]->requires_grad) {
      Tensor<T> gw(wv.shape());
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < D; ++d) gw(c, d) = xv[c] * self.grad[d];
      detail::accumulate(*ps[1], gw);
    }
  });
}

template <typename T>
Var<T> reduce_input_channels(const Var<T>& kernel) {
  return make_op(edenn::reduce_input_channels(kernel.value()), {kernel}, [](Node<T>& self, auto& ps) {
    const auto& s = ps[0]->value.shape();
    Tensor<T> g(s);
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = 0; j < s[1]; ++j)
        for (std::size_t ci = 0; ci < s[2]; ++ci)
          for (std::size_t co = 0; co < s[3]; ++co) g(i, j, ci, co) = self.grad(i, j, 0, co);
    detail::accumulate(*ps[0], g);
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& a, std::size_t out_w, std::size_t out_h) {
  return make_op(edenn::upsample_nearest(a.value(), out_w, out_h), {a}, [](Node<T>& self, auto& ps) {
    detail::accumulate(*ps[0], edenn::upsample_nearest_grad(self.grad, ps[0]->value.shape()));
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  return make_op(edenn::concat_channels(a.value(), b.value()), {a, b}, [](Node<T>& self, auto& ps) {
    const auto& av = ps[0]->value;
    const auto& bv = ps[1]->value;
    const std::size_t P = av.dim(0) * av.dim(1), ca = av.dim(2), cb = bv.dim(2);
    if (ps[0]->requires_grad) {
      Tensor<T> g(av.shape());
      for (std::size_t p = 0; p < P; ++p) std::copy_n(self.grad.data() + p * (ca + cb), ca, g.data() + p * ca);
      detail::accumulate(*ps[0], g);
    }
    if (ps[1]->requires_grad) {
      Tensor<T> g(bv.shape());
      for (std::size_t p = 0; p < P; ++p) std::copy_n(self.grad.data() + p * (ca + cb) + ca, cb, g.data() + p * cb);
      detail::accumulate(*ps[1], g);
    }
  });
}

/// sum_i w_i |pred_i - target_i| for constant target and weights. `weight`
/// may be a channel-less mask broadcast over the last axis of pred.
template <typename T>
Var<T> weighted_l1_sum(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& weight) {
  const auto& p = pred.value();
  if (p.shape() != target.shape()) throw ShapeError("weighted_l1_sum: prediction/target shape mismatch");
  const std::size_t inner = edenn::detail::broadcast_inner(p, weight);
  T s{};
  for (std::size_t i = 0; i < p.size(); ++i) s += weight[i / inner] * std::abs(p[i] - target[i]);
  return make_op(Tensor<T>::scalar(s), {pred}, [target, weight, inner](Node<T>& self, auto& ps) {
    const auto& pv = ps[0]->value;
    Tensor<T> g(pv.shape());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T d = pv[i] - target[i];
      const T sign = d > T{} ? T{1} : (d < T{} ? T{-1} : T{});
      g[i] = self.grad[0] * weight[i / inner] * sign;
    }
    detail::accumulate(*ps[0], g);
  });
}

}  // namespace edenn::ad
