#pragma once

// Dense row-major tensors with a reverse-mode differentiation tape.
//
// Every differentiable value lives on a Tape as a node. Operations append
// nodes in execution order, so the node vector is already topologically
// sorted and backward() is a single reverse sweep. A tape is meant to be
// rebuilt for each training step and is not thread-safe; independent tapes
// share nothing.
//
// Broadcasting is never implicit. The only mixed-shape operations are
// scale() (scalar times tensor) and add_bias() (vector added to every row).
//
// Reductions (reduce, layer_norm statistics, softmax normalizers, the loss
// functions) accumulate in double. Matrix products accumulate in T.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mimco/errors.hpp"

namespace mimco {

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const { return tape_->node(id_).shape; }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return tape_->node(id_).value.size(); }
  std::span<const T> value() const { return tape_->node(id_).value; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return value()[0];
  }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::string_view op;
    std::string label;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    // op-specific activations kept for the backward pass
    std::vector<T> saved;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Shape shape, std::vector<T> data, std::string label = {}) {
    return make_input(std::move(shape), std::move(data), std::move(label), true);
  }

  Var<T> constant(Shape shape, std::vector<T> data, std::string label = {}) {
    return make_input(std::move(shape), std::move(data), std::move(label), false);
  }

  // Appends an operation result. The node requires a gradient iff any input
  // does; otherwise the backward closure is dropped.
  Var<T> record(std::string_view op, Shape shape, std::vector<T> value,
                std::vector<std::size_t> inputs, BackwardFn backward,
                std::vector<T> saved = {}) {
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.saved = std::move(saved);
    for (auto in : inputs) n.requires_grad = n.requires_grad || nodes_.at(in).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Zero-initialized gradient buffer of a node, allocated on first use.
  std::vector<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  const std::vector<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  // Fills gradients of every node reachable from `loss`; d(loss)/d(loss) = 1.
  void backward(Var<T> loss) {
    if (loss.tape() != this) throw ContractError("backward: loss was recorded on a different tape");
    const auto& ln = nodes_.at(loss.id());
    if (ln.value.size() != 1 || !ln.shape.empty())
      throw ContractError("backward: loss must be a scalar, got shape " + to_string(ln.shape));
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(loss.id())[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  // Gradient of a node after backward(); zeros when the node was unreachable.
  std::vector<T> grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id());
    if (n.grad.empty()) return std::vector<T>(n.value.size(), T(0));
    return n.grad;
  }

 private:
  Var<T> make_input(Shape shape, std::vector<T> data, std::string label, bool requires_grad) {
    if (numel(shape) != data.size())
      throw ShapeError(detail::concat("tensor of shape ", to_string(shape), " given ", data.size(),
                                      " values"));
    Node n;
    n.op = requires_grad ? "leaf" : "constant";
    n.label = std::move(label);
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return *a.tape();
}

template <class T>
void same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

template <class T>
void require_same_shape(std::string_view op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(concat(op, ": shape mismatch ", to_string(a.shape()), " vs ",
                            to_string(b.shape())));
}

template <class T>
void require_rank(std::string_view op, const Var<T>& a, std::size_t rank) {
  if (a.rank() != rank)
    throw ShapeError(concat(op, ": expected rank ", rank, ", got ", to_string(a.shape())));
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m×n] += A[m×k] · B[k×n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Map = Eigen::Map<const RowMat<T>>;
  const auto rm = static_cast<Eigen::Index>(m), rk = static_cast<Eigen::Index>(k), rn = static_cast<Eigen::Index>(n);
  Eigen::Map<RowMat<T>>(c, rm, rn).noalias() += Map(a, rm, rk) * Map(b, rk, rn);
}

// C[k×n] += Aᵀ · B where A is m×k and B is m×n
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Map = Eigen::Map<const RowMat<T>>;
  const auto rm = static_cast<Eigen::Index>(m), rk = static_cast<Eigen::Index>(k), rn = static_cast<Eigen::Index>(n);
  Eigen::Map<RowMat<T>>(c, rk, rn).noalias() += Map(a, rm, rk).transpose() * Map(b, rm, rn);
}

// C[m×k] += A[m×n] · Bᵀ where B is k×n
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  using Map = Eigen::Map<const RowMat<T>>;
  const auto rm = static_cast<Eigen::Index>(m), rk = static_cast<Eigen::Index>(k), rn = static_cast<Eigen::Index>(n);
  Eigen::Map<RowMat<T>>(c, rm, rk).noalias() += Map(a, rm, rn) * Map(b, rk, rn).transpose();
}

template <class T>
std::vector<T> transpose(std::span<const T> x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return out;
}

template <class T>
void accumulate(Tape<T>& tape, std::size_t id, std::span<const T> g) {
  if (!tape.requires_grad(id)) return;
  auto& buf = tape.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  detail::same_tape(a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return tape.record("matmul", {m, n}, std::move(out), {ia, ib},
                     [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
                       const auto& dc = t.upstream(self);
                       if (t.requires_grad(ia)) {
                         detail::gemm_nt_acc(dc.data(), t.node(ib).value.data(), t.grad_buffer(ia).data(), m, n, k);
                       }
                       if (t.requires_grad(ib)) {
                         detail::gemm_tn_acc(t.node(ia).value.data(), dc.data(),
                                             t.grad_buffer(ib).data(), m, k, n);
                       }
                     });
}

// x[..×n] + b[n] added to every row.
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  auto& tape = detail::tape_of(x);
  detail::same_tape(x, b);
  if (x.rank() < 1 || b.rank() != 1 || x.shape().back() != b.dim(0))
    throw ShapeError("add_bias: bias " + to_string(b.shape()) + " does not fit " +
                     to_string(x.shape()));
  const std::size_t n = b.dim(0);
  std::vector<T> out(x.value().begin(), x.value().end());
  auto bv = b.value();
  for (std::size_t r = 0; r < out.size(); r += n)
    for (std::size_t j = 0; j < n; ++j) out[r + j] += bv[j];
  const auto ix = x.id(), ib = b.id();
  return tape.record("add_bias", x.shape(), std::move(out), {ix, ib},
                     [ix, ib, n](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       detail::accumulate<T>(t, ix, g);
                       if (t.requires_grad(ib)) {
                         std::vector<double> acc(n, 0.0);
                         for (std::size_t r = 0; r < g.size(); r += n)
                           for (std::size_t j = 0; j < n; ++j) acc[j] += g[r + j];
                         auto& gb = t.grad_buffer(ib);
                         for (std::size_t j = 0; j < n; ++j) gb[j] += static_cast<T>(acc[j]);
                       }
                     });
}

// ---------------------------------------------------------------------------
// elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  detail::same_tape(a, b);
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record("add", a.shape(), std::move(out), {ia, ib},
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       detail::accumulate<T>(t, ia, g);
                       detail::accumulate<T>(t, ib, g);
                     });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  detail::same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record("mul", a.shape(), std::move(out), {ia, ib},
                     [ia, ib](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       const auto& av = t.node(ia).value;
                       const auto& bv = t.node(ib).value;
                       if (t.requires_grad(ia)) {
                         auto& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  auto& tape = detail::tape_of(a);
  std::vector<T> out(a.value().begin(), a.value().end());
  for (auto& v : out) v *= s;
  const auto ia = a.id();
  return tape.record("scale", a.shape(), std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

// GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
template <class T>
Var<T> gelu(const Var<T>& x) {
  auto& tape = detail::tape_of(x);
  std::vector<T> out(x.size());
  std::vector<T> tanh_part(x.size());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    const double th = std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v));
    tanh_part[i] = static_cast<T>(th);
    out[i] = static_cast<T>(0.5 * v * (1.0 + th));
  }
  const auto ix = x.id();
  return tape.record("gelu", x.shape(), std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& xv = t.node(ix).value;
    const auto& tanh_part = t.node(self).saved;
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double th = tanh_part[i];
      const double dth = (1.0 - th * th) * detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * v * v);
      gx[i] += static_cast<T>(g[i] * (0.5 * (1.0 + th) + 0.5 * v * dth));
    }
  }, std::move(tanh_part));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  auto& tape = detail::tape_of(x);
  std::vector<T> out(x.size());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  const auto ix = x.id();
  return tape.record("sigmoid", x.shape(), std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.node(self).value;
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

// Inverted dropout; identity when rate == 0 (no random draws are made).
template <class T, class Engine>
Var<T> dropout(const Var<T>& x, double rate, Engine& engine) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  auto& tape = detail::tape_of(x);
  std::vector<T> keep(x.size());
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& k : keep) k = std::uniform_real_distribution<double>(0.0, 1.0)(engine) < rate ? T(0) : s;
  std::vector<T> out(x.size());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * keep[i];
  const auto ix = x.id();
  return tape.record(
      "dropout", x.shape(), std::move(out), {ix},
      [ix](Tape<T>& t, std::size_t self) {
        const auto& g = t.upstream(self);
        const auto& k = t.node(self).saved;
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * k[i];
      },
      std::move(keep));
}

// ---------------------------------------------------------------------------
// normalization

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, double eps) {
  auto& tape = detail::tape_of(x);
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  if (x.rank() < 1 || x.shape().back() == 0) throw ShapeError("layer_norm: last axis is empty");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.size() / d;
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  std::vector<T> out(x.size());
  // saved = [xhat (rows·d) | rstd (rows)]
  std::vector<T> saved(x.size() + rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * rstd;
      saved[r * d + j] = static_cast<T>(xh);
      out[r * d + j] = static_cast<T>(xh * gv[j] + bv[j]);
    }
    saved[x.size() + r] = static_cast<T>(rstd);
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      "layer_norm", x.shape(), std::move(out), {ix, ig, ib},
      [ix, ig, ib, d, rows](Tape<T>& t, std::size_t self) {
        const auto& g = t.upstream(self);
        const auto& saved = t.node(self).saved;
        const auto& gv = t.node(ig).value;
        const std::size_t total = rows * d;
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          std::vector<double> dg(d, 0.0), db(d, 0.0);
          for (std::size_t i = 0; i < total; ++i) {
            dg[i % d] += static_cast<double>(g[i]) * saved[i];
            db[i % d] += g[i];
          }
          if (t.requires_grad(ig)) {
            auto& b = t.grad_buffer(ig);
            for (std::size_t j = 0; j < d; ++j) b[j] += static_cast<T>(dg[j]);
          }
          if (t.requires_grad(ib)) {
            auto& b = t.grad_buffer(ib);
            for (std::size_t j = 0; j < d; ++j) b[j] += static_cast<T>(db[j]);
          }
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            const T* xh = saved.data() + r * d;
            const T* gr = g.data() + r * d;
            const double rstd = saved[total + r];
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(gr[j]) * gv[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= static_cast<double>(d);
            mean_dxh_xh /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(gr[j]) * gv[j];
              gx[r * d + j] += static_cast<T>(rstd * (dxh - mean_dxh - xh[j] * mean_dxh_xh));
            }
          }
        }
      },
      std::move(saved));
}

namespace detail {

// Stable softmax of one row into `out`; normalizer accumulated in double.
template <class T>
void softmax_row(const T* in, T* out, std::size_t n) {
  T mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(in[j]) - mx);
  for (std::size_t j = 0; j < n; ++j)
    out[j] = static_cast<T>(std::exp(static_cast<double>(in[j]) - mx) / z);
}

}  // namespace detail

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  auto& tape = detail::tape_of(x);
  if (x.rank() < 1 || x.shape().back() == 0) throw ShapeError("softmax_rows: last axis is empty");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    detail::softmax_row(x.value().data() + r * n, out.data() + r * n, n);
  const auto ix = x.id();
  return tape.record("softmax_rows", x.shape(), std::move(out), {ix},
                     [ix, n, rows](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       const auto& y = t.node(self).value;
                       auto& gx = t.grad_buffer(ix);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           dot += static_cast<double>(g[r * n + j]) * y[r * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           gx[r * n + j] += static_cast<T>(y[r * n + j] * (g[r * n + j] - dot));
                       }
                     });
}

// ---------------------------------------------------------------------------
// reductions and reshaping

enum class Reduce { kSum, kMean };

// Reduces one axis away. Mean over the token axis implements global average
// pooling.
template <class T>
Var<T> reduce(const Var<T>& x, std::size_t axis, Reduce kind) {
  auto& tape = detail::tape_of(x);
  if (axis >= x.rank())
    throw ShapeError(detail::concat("reduce: axis ", axis, " out of range for ", to_string(x.shape())));
  const auto& s = x.shape();
  const std::size_t len = s[axis];
  if (len == 0) throw ShapeError("reduce: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  const double factor = kind == Reduce::kMean ? 1.0 / static_cast<double>(len) : 1.0;
  auto xv = x.value();
  std::vector<T> out(outer * inner);
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < len; ++l) {
      const T* src = xv.data() + (o * len + l) * inner;
      for (std::size_t i = 0; i < inner; ++i) acc[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = static_cast<T>(acc[i] * factor);
  }
  const auto ix = x.id();
  return tape.record(kind == Reduce::kMean ? "reduce_mean" : "reduce_sum", std::move(out_shape),
                     std::move(out), {ix},
                     [ix, outer, inner, len, factor](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       auto& gx = t.grad_buffer(ix);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t l = 0; l < len; ++l)
                           for (std::size_t i = 0; i < inner; ++i)
                             gx[(o * len + l) * inner + i] +=
                                 static_cast<T>(g[o * inner + i] * factor);
                     });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  auto& tape = detail::tape_of(x);
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  std::vector<T> out(x.value().begin(), x.value().end());
  const auto ix = x.id();
  return tape.record("reshape", std::move(shape), std::move(out), {ix},
                     [ix](Tape<T>& t, std::size_t self) { detail::accumulate<T>(t, ix, t.upstream(self)); });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  return reduce(reshape(x, Shape{x.size()}), 0, Reduce::kSum);
}

// Rows of x[N×d] in the given order; backward scatter-adds into the source.
template <class T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> indices) {
  auto& tape = detail::tape_of(x);
  detail::require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  for (auto idx : indices)
    if (idx >= n)
      throw IndexError(detail::concat("gather_rows: index ", idx, " out of range for ", n, " rows"));
  std::vector<T> out(indices.size() * d);
  auto xv = x.value();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(xv.data() + indices[r] * d, d, out.data() + r * d);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto ix = x.id();
  return tape.record("gather_rows", {indices.size(), d}, std::move(out), {ix},
                     [ix, d, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       auto& gx = t.grad_buffer(ix);
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) gx[idx[r] * d + j] += g[r * d + j];
                     });
}

// Inverse of gather_rows: row r of x lands in row indices[r] of an n×d zero
// tensor, duplicates summed.
template <class T>
Var<T> scatter_rows(const Var<T>& x, std::span<const std::size_t> indices, std::size_t n) {
  auto& tape = detail::tape_of(x);
  detail::require_rank("scatter_rows", x, 2);
  if (indices.size() != x.dim(0))
    throw ShapeError(detail::concat("scatter_rows: ", indices.size(), " indices for ", x.dim(0), " rows"));
  const std::size_t d = x.dim(1);
  for (auto idx : indices)
    if (idx >= n)
      throw IndexError(detail::concat("scatter_rows: index ", idx, " out of range for ", n, " rows"));
  std::vector<T> out(n * d, T(0));
  auto xv = x.value();
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out[indices[r] * d + j] += xv[r * d + j];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto ix = x.id();
  return tape.record("scatter_rows", {n, d}, std::move(out), {ix},
                     [ix, d, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       auto& gx = t.grad_buffer(ix);
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[idx[r] * d + j];
                     });
}

template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  detail::same_tape(a, b);
  detail::require_rank("concat_rows", a, 2);
  detail::require_rank("concat_rows", b, 2);
  if (a.dim(1) != b.dim(1))
    throw ShapeError("concat_rows: column mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  std::vector<T> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.value().begin(), a.value().end());
  out.insert(out.end(), b.value().begin(), b.value().end());
  const auto ia = a.id(), ib = b.id();
  const std::size_t na = a.size();
  return tape.record("concat_rows", {a.dim(0) + b.dim(0), a.dim(1)}, std::move(out), {ia, ib},
                     [ia, ib, na](Tape<T>& t, std::size_t self) {
                       std::span<const T> g(t.upstream(self));
                       detail::accumulate<T>(t, ia, g.subspan(0, na));
                       detail::accumulate<T>(t, ib, g.subspan(na));
                     });
}

// ---------------------------------------------------------------------------
// attention

// Multi-head scaled dot-product self-attention over `batch` independent
// sequences of length `seq`. qkv is [batch·seq × 3d] with column blocks
// [q | k | v]; head h owns columns [h·d/heads, (h+1)·d/heads) of each block.
// Returns [batch·seq × d]. The attention probabilities are kept in the node's
// `saved` buffer laid out [batch][head][query][key].
template <class T>
Var<T> attention(const Var<T>& qkv, std::size_t batch, std::size_t seq, std::size_t heads) {
  auto& tape = detail::tape_of(qkv);
  detail::require_rank("attention", qkv, 2);
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0)
    throw ShapeError(detail::concat("attention: qkv ", to_string(qkv.shape()), " does not fit batch ",
                                    batch, " x seq ", seq));
  const std::size_t d = qkv.dim(1) / 3;
  if (heads == 0 || d % heads != 0)
    throw ShapeError(detail::concat("attention: dim ", d, " not divisible by ", heads, " heads"));
  const std::size_t dh = d / heads;
  const std::size_t w = 3 * d;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto in = qkv.value();
  std::vector<T> probs(batch * heads * seq * seq);
  std::vector<T> out(batch * seq * d, T(0));
  std::vector<T> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = in.data() + b * seq * w;
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + ((b * heads + h) * seq) * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* q = base + i * w + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const T* k = base + j * w + d + h * dh;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[c] * k[c];
          scores[j] = static_cast<T>(s * sc);
        }
        detail::softmax_row(scores.data(), p + i * seq, seq);
        T* o = out.data() + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const T pij = p[i * seq + j];
          const T* v = base + j * w + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += pij * v[c];
        }
      }
    }
  }
  const auto iq = qkv.id();
  return tape.record(
      "attention", {batch * seq, d}, std::move(out), {iq},
      [iq, batch, seq, heads, d, dh, w, sc](Tape<T>& t, std::size_t self) {
        const auto& go = t.upstream(self);
        const auto& probs = t.node(self).saved;
        const auto& in = t.node(iq).value;
        auto& gin = t.grad_buffer(iq);
        std::vector<double> dp(seq), ds(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* base = in.data() + b * seq * w;
          T* gbase = gin.data() + b * seq * w;
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + ((b * heads + h) * seq) * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const T* gi = go.data() + (b * seq + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) {
                const T* v = base + j * w + 2 * d + h * dh;
                T* gv = gbase + j * w + 2 * d + h * dh;
                const T pij = p[i * seq + j];
                T acc = 0;
                for (std::size_t c = 0; c < dh; ++c) {
                  acc += gi[c] * v[c];
                  gv[c] += pij * gi[c];
                }
                dp[j] = acc;
                dot += acc * pij;
              }
              for (std::size_t j = 0; j < seq; ++j) ds[j] = p[i * seq + j] * (dp[j] - dot) * sc;
              const T* q = base + i * w + h * dh;
              T* gq = gbase + i * w + h * dh;
              for (std::size_t j = 0; j < seq; ++j) {
                const T* k = base + j * w + d + h * dh;
                T* gk = gbase + j * w + d + h * dh;
                const T s = static_cast<T>(ds[j]);
                for (std::size_t c = 0; c < dh; ++c) {
                  gq[c] += s * k[c];
                  gk[c] += s * q[c];
                }
              }
            }
          }
        }
      },
      std::move(probs));
}

// ---------------------------------------------------------------------------
// losses

// Mean over `rows` of −log softmax(logits[r])[targets[r]]. targets has one
// entry per logits row; only the listed rows contribute.
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets,
                             std::span<const std::size_t> rows) {
  auto& tape = detail::tape_of(logits);
  detail::require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t m = logits.dim(0), v = logits.dim(1);
  if (targets.size() != m)
    throw ShapeError(detail::concat("softmax_cross_entropy: ", targets.size(), " targets for ", m, " rows"));
  if (rows.empty()) throw ContractError("softmax_cross_entropy: no rows to average over");
  for (auto r : rows)
    if (r >= m) throw IndexError(detail::concat("softmax_cross_entropy: row ", r, " out of range"));
  auto lv = logits.value();
  std::vector<T> probs(rows.size() * v);
  double total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    const std::size_t tgt = targets[r];
    if (tgt >= v) throw IndexError(detail::concat("softmax_cross_entropy: target ", tgt, " >= ", v));
    const T* row = lv.data() + r * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += std::log(z) - (static_cast<double>(row[tgt]) - mx);
    for (std::size_t j = 0; j < v; ++j)
      probs[k * v + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / z);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  std::vector<std::size_t> rs(rows.begin(), rows.end());
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  const auto il = logits.id();
  return tape.record(
      "softmax_cross_entropy", {}, {static_cast<T>(total * inv)}, {il},
      [il, v, inv, rs = std::move(rs), tg = std::move(tg)](Tape<T>& t, std::size_t self) {
        const double g = t.upstream(self)[0] * inv;
        const auto& probs = t.node(self).saved;
        auto& gl = t.grad_buffer(il);
        for (std::size_t k = 0; k < rs.size(); ++k) {
          T* row = gl.data() + rs[k] * v;
          for (std::size_t j = 0; j < v; ++j) {
            const double y = j == tg[rs[k]] ? 1.0 : 0.0;
            row[j] += static_cast<T>(g * (probs[k * v + j] - y));
          }
        }
      },
      std::move(probs));
}

// Per-class binary cross-entropy against one-hot labels, summed over classes
// and averaged over the batch. Uses max(l,0) − l·y + log(1 + exp(−|l|)).
template <class T>
Var<T> sigmoid_cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels) {
  auto& tape = detail::tape_of(logits);
  detail::require_rank("sigmoid_cross_entropy", logits, 2);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b)
    throw ShapeError(detail::concat("sigmoid_cross_entropy: ", labels.size(), " labels for batch ", b));
  if (b == 0) throw ContractError("sigmoid_cross_entropy: empty batch");
  for (auto y : labels)
    if (y >= k) throw IndexError(detail::concat("sigmoid_cross_entropy: label ", y, " >= ", k, " classes"));
  auto lv = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const double l = lv[i * k + c];
      const double y = labels[i] == c ? 1.0 : 0.0;
      total += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    }
  const double inv = 1.0 / static_cast<double>(b);
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  const auto il = logits.id();
  return tape.record("sigmoid_cross_entropy", {}, {static_cast<T>(total * inv)}, {il},
                     [il, k, inv, ys = std::move(ys)](Tape<T>& t, std::size_t self) {
                       const double g = t.upstream(self)[0] * inv;
                       const auto& lv = t.node(il).value;
                       auto& gl = t.grad_buffer(il);
                       for (std::size_t i = 0; i < ys.size(); ++i)
                         for (std::size_t c = 0; c < k; ++c) {
                           const double l = lv[i * k + c];
                           const double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l))
                                                   : std::exp(l) / (1.0 + std::exp(l));
                           const double y = ys[i] == c ? 1.0 : 0.0;
                           gl[i * k + c] += static_cast<T>(g * (s - y));
                         }
                     });
}

}  // namespace mimco
