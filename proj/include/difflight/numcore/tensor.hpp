#pragma once

// Minimal dense-tensor arithmetic with reverse-mode autodiff, templated on
// scalar (float for training/inference, double for the grad-check oracle
// path). Storage is a flat row-major Eigen array; matmuls go through
// Eigen::Map GEMM. Broadcasting is restricted to leading axes (a smaller
// operand whose shape is a suffix of the larger one); everything else is an
// explicit op.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "difflight/common.hpp"

namespace difflight::numcore {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatRM<S>>;
template <typename S>
using StrideMap = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using CStrideMap = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

// Disables tape construction in scope (inference / finite-difference probes).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
};

template <typename S>
struct Node {
  Shape shape;
  Vec<S> value;
  Vec<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward;
  std::uint64_t id = 0;

  void ensure_grad() {
    if (grad.size() == 0) grad = Vec<S>::Zero(value.size());
  }
};

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

template <typename S>
inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

// Value-semantics handle to a graph node. Copies share the node.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<S> n) : n_(std::move(n)) {}

  static Tensor constant(Shape shape, Vec<S> data) { return make(std::move(shape), std::move(data), false); }
  static Tensor param(Shape shape, Vec<S> data) { return make(std::move(shape), std::move(data), true); }
  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return constant(std::move(shape), Vec<S>::Zero(n));
  }
  static Tensor full(Shape shape, S v) {
    auto n = shape_numel(shape);
    return constant(std::move(shape), Vec<S>::Constant(n, v));
  }
  static Tensor scalar_const(S v) { return constant({1}, Vec<S>::Constant(1, v)); }

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  std::int64_t size() const { return n_->value.size(); }
  const Vec<S>& value() const { return n_->value; }
  Vec<S>& mutable_value() { return n_->value; }  // leaf mutation (Adam, perturbations)
  const Vec<S>& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.size() > 0; }
  bool requires_grad() const { return n_->requires_grad; }
  void zero_grad() { n_->grad.resize(0); }
  NodePtr<S> node() const { return n_; }

  S item() const {
    require(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  // Reverse pass from a scalar root. Gradients accumulate (sum) into every
  // requires_grad node reachable through the tape, in a fixed topological
  // order so repeated runs are bit-identical.
  void backward() const {
    require(size() == 1, "backward() root must be scalar, got " + shape_str(shape()));
    if (!n_->requires_grad) return;
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node<S>* p = node->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    n_->ensure_grad();
    n_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<S>* node = *it;
      if (node->backward && node->grad.size() > 0) node->backward(*node);
    }
  }

 private:
  static Tensor make(Shape shape, Vec<S> data, bool req) {
    require(shape_numel(shape) == data.size(),
            "tensor data length " + std::to_string(data.size()) + " != product of shape " + shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = req && grad_enabled();
    n->id = next_node_id<S>();
    return Tensor(n);
  }

  NodePtr<S> n_;
};

namespace detail {

template <typename S>
inline void check_finite(const Vec<S>& v, const char* op) {
  if (!v.allFinite()) throw NumericFault(std::string("non-finite output in op '") + op + "'");
}

template <typename S>
inline Tensor<S> make_result(Shape shape, Vec<S> value, std::vector<Tensor<S>> inputs,
                             std::function<void(Node<S>&)> bwd, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = next_node_id<S>();
  bool req = false;
  if (grad_enabled()) {
    for (auto& t : inputs) req = req || t.requires_grad();
  }
  n->requires_grad = req;
  if (req) {
    n->parents.reserve(inputs.size());
    for (auto& t : inputs) n->parents.push_back(t.node());
    n->backward = std::move(bwd);
  }
  return Tensor<S>(n);
}

// b broadcasts over a's leading axes iff b.shape is a suffix of a.shape.
inline bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Sum a [outer x inner] view of g into dst (length inner), fixed order.
template <typename S>
inline void reduce_leading(const Vec<S>& g, std::int64_t inner, Vec<S>& dst) {
  const std::int64_t outer = g.size() / inner;
  CMapM<S> gm(g.data(), outer, inner);
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> d(dst.data(), inner);
  d.noalias() += gm.colwise().sum().transpose();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic (same shape, or leading-axes broadcast of the
// smaller operand whose shape is a suffix of the other's)

template <typename S, typename FwdSame, typename FwdB>
Tensor<S> binary_pointwise(const Tensor<S>& a, const Tensor<S>& b, const char* op, FwdSame fwd_same, FwdB fwd_bb,
                           std::function<void(Node<S>&, int mode)> bwd) {
  // mode 0: same shapes; 1: b broadcasts; 2: a broadcasts
  int mode;
  if (a.shape() == b.shape()) {
    mode = 0;
  } else if (detail::is_suffix(a.shape(), b.shape())) {
    mode = 1;
  } else if (detail::is_suffix(b.shape(), a.shape())) {
    mode = 2;
  } else {
    throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
  }
  Vec<S> out;
  Shape shape;
  if (mode == 0) {
    out = fwd_same(a.value(), b.value());
    shape = a.shape();
  } else {
    const Tensor<S>& big = mode == 1 ? a : b;
    const Tensor<S>& small = mode == 1 ? b : a;
    const std::int64_t inner = small.size();
    const std::int64_t outer = big.size() / inner;
    out.resize(big.size());
    for (std::int64_t o = 0; o < outer; ++o)
      out.segment(o * inner, inner) = fwd_bb(big.value().segment(o * inner, inner), small.value(), mode);
    shape = big.shape();
  }
  return detail::make_result<S>(
      std::move(shape), std::move(out), {a, b}, [bwd, mode](Node<S>& n) { bwd(n, mode); }, op);
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_pointwise<S>(
      a, b, "add", [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x + y; },
      [](auto x, const Vec<S>& y, int mode) -> Vec<S> { return mode == 1 ? Vec<S>(x + y) : Vec<S>(y + x); },
      [](Node<S>& n, int mode) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          if (mode == 2)
            detail::reduce_leading(n.grad, pa->value.size(), pa->grad);
          else
            pa->grad += n.grad;
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          if (mode == 1)
            detail::reduce_leading(n.grad, pb->value.size(), pb->grad);
          else
            pb->grad += n.grad;
        }
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_pointwise<S>(
      a, b, "sub", [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x - y; },
      [](auto x, const Vec<S>& y, int mode) -> Vec<S> { return mode == 1 ? Vec<S>(x - y) : Vec<S>(y - x); },
      [](Node<S>& n, int mode) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          if (mode == 2) {
            detail::reduce_leading(n.grad, pa->value.size(), pa->grad);
          } else {
            pa->grad += n.grad;
          }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          if (mode == 1) {
            Vec<S> neg = -n.grad;
            detail::reduce_leading(neg, pb->value.size(), pb->grad);
          } else {
            pb->grad -= n.grad;
          }
        }
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_pointwise<S>(
      a, b, "mul", [](const Vec<S>& x, const Vec<S>& y) -> Vec<S> { return x * y; },
      [](auto x, const Vec<S>& y, int mode) -> Vec<S> {
        (void)mode;
        return Vec<S>(x * y);
      },
      [](Node<S>& n, int mode) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        const Vec<S>& av = pa->value;
        const Vec<S>& bv = pb->value;
        auto bcast_mul = [](const Vec<S>& g, const Vec<S>& small) -> Vec<S> {
          const std::int64_t inner = small.size();
          const std::int64_t outer = g.size() / inner;
          Vec<S> r(g.size());
          for (std::int64_t o = 0; o < outer; ++o) r.segment(o * inner, inner) = g.segment(o * inner, inner) * small;
          return r;
        };
        if (pa->requires_grad) {
          pa->ensure_grad();
          if (mode == 0) {
            pa->grad += n.grad * bv;
          } else if (mode == 1) {
            pa->grad += bcast_mul(n.grad, bv);
          } else {
            Vec<S> gb = n.grad * bv;  // b is big here
            detail::reduce_leading(gb, av.size(), pa->grad);
          }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          if (mode == 0) {
            pb->grad += n.grad * av;
          } else if (mode == 2) {
            pb->grad += bcast_mul(n.grad, av);
          } else {
            Vec<S> ga = n.grad * av;  // a is big
            detail::reduce_leading(ga, bv.size(), pb->grad);
          }
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  return detail::make_result<S>(
      a.shape(), Vec<S>(a.value() * c), {a},
      [c](Node<S>& n) {
        auto& p = n.parents[0];
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += n.grad * c;
        }
      },
      "scale");
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return detail::make_result<S>(
      a.shape(), Vec<S>(a.value() + c), {a},
      [](Node<S>& n) {
        auto& p = n.parents[0];
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += n.grad;
        }
      },
      "add_scalar");
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// matmul: [M,K]@[K,N], [B,M,K]@[B,K,N], [B,M,K]@[K,N]

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&] {
    throw ContractViolation("matmul: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
  };
  if (sa.size() == 2 && sb.size() == 2) {
    if (sa[1] != sb[0]) fail();
    const int M = sa[0], K = sa[1], N = sb[1];
    Vec<S> out(static_cast<std::int64_t>(M) * N);
    MapM<S>(out.data(), M, N).noalias() = CMapM<S>(a.value().data(), M, K) * CMapM<S>(b.value().data(), K, N);
    return detail::make_result<S>(
        {M, N}, std::move(out), {a, b},
        [M, K, N](Node<S>& n) {
          auto& pa = n.parents[0];
          auto& pb = n.parents[1];
          CMapM<S> G(n.grad.data(), M, N);
          if (pa->requires_grad) {
            pa->ensure_grad();
            MapM<S>(pa->grad.data(), M, K).noalias() += G * CMapM<S>(pb->value.data(), K, N).transpose();
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            MapM<S>(pb->grad.data(), K, N).noalias() += CMapM<S>(pa->value.data(), M, K).transpose() * G;
          }
        },
        "matmul");
  }
  if (sa.size() == 3 && sb.size() == 2) {
    if (sa[2] != sb[0]) fail();
    const int Bn = sa[0], M = sa[1], K = sa[2], N = sb[1];
    const std::int64_t rows = static_cast<std::int64_t>(Bn) * M;
    Vec<S> out(rows * N);
    MapM<S>(out.data(), rows, N).noalias() =
        CMapM<S>(a.value().data(), rows, K) * CMapM<S>(b.value().data(), K, N);
    return detail::make_result<S>(
        {Bn, M, N}, std::move(out), {a, b},
        [rows, K, N](Node<S>& n) {
          auto& pa = n.parents[0];
          auto& pb = n.parents[1];
          CMapM<S> G(n.grad.data(), rows, N);
          if (pa->requires_grad) {
            pa->ensure_grad();
            MapM<S>(pa->grad.data(), rows, K).noalias() += G * CMapM<S>(pb->value.data(), K, N).transpose();
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            MapM<S>(pb->grad.data(), K, N).noalias() += CMapM<S>(pa->value.data(), rows, K).transpose() * G;
          }
        },
        "matmul");
  }
  if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1]) fail();
    const int Bn = sa[0], M = sa[1], K = sa[2], N = sb[2];
    Vec<S> out(static_cast<std::int64_t>(Bn) * M * N);
    for (int i = 0; i < Bn; ++i) {
      MapM<S>(out.data() + static_cast<std::int64_t>(i) * M * N, M, N).noalias() =
          CMapM<S>(a.value().data() + static_cast<std::int64_t>(i) * M * K, M, K) *
          CMapM<S>(b.value().data() + static_cast<std::int64_t>(i) * K * N, K, N);
    }
    return detail::make_result<S>(
        {Bn, M, N}, std::move(out), {a, b},
        [Bn, M, K, N](Node<S>& n) {
          auto& pa = n.parents[0];
          auto& pb = n.parents[1];
          if (pa->requires_grad) pa->ensure_grad();
          if (pb->requires_grad) pb->ensure_grad();
          for (int i = 0; i < Bn; ++i) {
            CMapM<S> G(n.grad.data() + static_cast<std::int64_t>(i) * M * N, M, N);
            CMapM<S> A(pa->value.data() + static_cast<std::int64_t>(i) * M * K, M, K);
            CMapM<S> Bm(pb->value.data() + static_cast<std::int64_t>(i) * K * N, K, N);
            if (pa->requires_grad)
              MapM<S>(pa->grad.data() + static_cast<std::int64_t>(i) * M * K, M, K).noalias() += G * Bm.transpose();
            if (pb->requires_grad)
              MapM<S>(pb->grad.data() + static_cast<std::int64_t>(i) * K * N, K, N).noalias() += A.transpose() * G;
          }
        },
        "matmul");
  }
  fail();
  return {};
}

// ---------------------------------------------------------------------------
// softmax over the last axis

template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  require(a.ndim() >= 1, "softmax: needs at least 1 axis");
  const int D = a.shape().back();
  const std::int64_t rows = a.size() / D;
  Vec<S> out(a.size());
  CMapM<S> x(a.value().data(), rows, D);
  MapM<S> y(out.data(), rows, D);
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = x.row(r).array();
    S m = row.maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (row - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return detail::make_result<S>(
      a.shape(), std::move(out), {a},
      [rows, D](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        CMapM<S> y(n.value.data(), rows, D);
        CMapM<S> g(n.grad.data(), rows, D);
        MapM<S> dx(p->grad.data(), rows, D);
        for (std::int64_t r = 0; r < rows; ++r) {
          S dot = (g.row(r).array() * y.row(r).array()).sum();
          dx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
        }
      },
      "softmax");
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis with affine gain/bias

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
  const int D = x.shape().back();
  require(gamma.shape() == Shape{D} && beta.shape() == Shape{D},
          "layer_norm: gain/bias must be [D]=" + std::to_string(D) + ", got " + shape_str(gamma.shape()) + " and " +
              shape_str(beta.shape()));
  const std::int64_t rows = x.size() / D;
  auto xhat = std::make_shared<Vec<S>>(x.size());
  auto inv_std = std::make_shared<Vec<S>>(rows);
  Vec<S> out(x.size());
  CMapM<S> xm(x.value().data(), rows, D);
  MapM<S> hm(xhat->data(), rows, D);
  MapM<S> om(out.data(), rows, D);
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = xm.row(r).array();
    S mean = row.mean();
    S var = (row - mean).square().mean();
    S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    hm.row(r) = ((row - mean) * is).matrix();
    om.row(r) = (hm.row(r).array() * gamma.value().transpose() + beta.value().transpose()).matrix();
  }
  return detail::make_result<S>(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, D, xhat, inv_std](Node<S>& n) {
        auto& px = n.parents[0];
        auto& pg = n.parents[1];
        auto& pb = n.parents[2];
        CMapM<S> g(n.grad.data(), rows, D);
        CMapM<S> hm(xhat->data(), rows, D);
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r) pg->grad += (g.row(r).array() * hm.row(r).array()).transpose();
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r) pb->grad += g.row(r).array().transpose();
        }
        if (px->requires_grad) {
          px->ensure_grad();
          MapM<S> dx(px->grad.data(), rows, D);
          for (std::int64_t r = 0; r < rows; ++r) {
            Eigen::Array<S, 1, Eigen::Dynamic> dh = g.row(r).array() * pg->value.transpose();
            S m1 = dh.mean();
            S m2 = (dh * hm.row(r).array()).mean();
            dx.row(r).array() += (*inv_std)[r] * (dh - m1 - hm.row(r).array() * m2);
          }
        }
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// nonlinearities

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  const auto& x = a.value();
  Vec<S> out(x.size());
  const S inv_sqrt2 = S(0.7071067811865475244);
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = S(0.5) * x[i] * (S(1) + std::erf(x[i] * inv_sqrt2));
  return detail::make_result<S>(
      a.shape(), std::move(out), {a},
      [inv_sqrt2](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const S c = S(0.3989422804014326779);  // 1/sqrt(2*pi)
        const Vec<S>& x = p->value;
        for (std::int64_t i = 0; i < x.size(); ++i) {
          S cdf = S(0.5) * (S(1) + std::erf(x[i] * inv_sqrt2));
          S pdf = c * std::exp(S(-0.5) * x[i] * x[i]);
          p->grad[i] += n.grad[i] * (cdf + x[i] * pdf);
        }
      },
      "gelu");
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Vec<S> out = a.value().max(S(0));
  return detail::make_result<S>(
      a.shape(), std::move(out), {a},
      [](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        p->grad += n.grad * (p->value > S(0)).template cast<S>();
      },
      "relu");
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  require(shape_numel(shape) == a.size(),
          "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  return detail::make_result<S>(
      std::move(shape), Vec<S>(a.value()), {a},
      [](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        p->grad += n.grad;
      },
      "reshape");
}

// [A,X,Y,D] -> [A,Y,X,D]; the only axis permutation the models need.
template <typename S>
Tensor<S> swap_mid(const Tensor<S>& a) {
  require(a.ndim() == 4, "swap_mid: needs 4 axes, got " + shape_str(a.shape()));
  const int A = a.dim(0), X = a.dim(1), Y = a.dim(2), D = a.dim(3);
  Vec<S> out(a.size());
  const S* src = a.value().data();
  S* dst = out.data();
  for (int q = 0; q < A; ++q)
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y)
        std::copy_n(src + (((std::int64_t)q * X + x) * Y + y) * D, D,
                    dst + (((std::int64_t)q * Y + y) * X + x) * D);
  return detail::make_result<S>(
      {A, Y, X, D}, std::move(out), {a},
      [A, X, Y, D](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const S* g = n.grad.data();
        S* dg = p->grad.data();
        for (int q = 0; q < A; ++q)
          for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
              const S* gs = g + (((std::int64_t)q * Y + y) * X + x) * D;
              S* ds = dg + (((std::int64_t)q * X + x) * Y + y) * D;
              for (int d = 0; d < D; ++d) ds[d] += gs[d];
            }
      },
      "swap_mid");
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int start, int len) {
  require(axis >= 0 && axis < a.ndim(), "slice: axis out of range for " + shape_str(a.shape()));
  require(start >= 0 && len > 0 && start + len <= a.dim(axis),
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) + ") out of bounds in " +
              shape_str(a.shape()));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
  const int ax = a.dim(axis);
  Vec<S> out(outer * len * inner);
  for (std::int64_t o = 0; o < outer; ++o)
    out.segment(o * len * inner, (std::int64_t)len * inner) =
        a.value().segment((o * ax + start) * inner, (std::int64_t)len * inner);
  Shape shape = a.shape();
  shape[static_cast<size_t>(axis)] = len;
  return detail::make_result<S>(
      std::move(shape), std::move(out), {a},
      [outer, inner, ax, start, len](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
          p->grad.segment((o * ax + start) * inner, (std::int64_t)len * inner) +=
              n.grad.segment(o * len * inner, (std::int64_t)len * inner);
      },
      "slice");
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  require(!parts.empty(), "concat: empty input list");
  const Shape& s0 = parts[0].shape();
  require(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range for " + shape_str(s0));
  int total = 0;
  for (const auto& p : parts) {
    require(p.ndim() == static_cast<int>(s0.size()), "concat: rank mismatch " + shape_str(p.shape()) + " vs " +
                                                         shape_str(s0));
    for (int i = 0; i < p.ndim(); ++i)
      require(i == axis || p.dim(i) == s0[static_cast<size_t>(i)],
              "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    total += p.dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape shape = s0;
  shape[static_cast<size_t>(axis)] = total;
  Vec<S> out(outer * total * inner);
  std::vector<int> lens;
  for (const auto& p : parts) lens.push_back(p.dim(axis));
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const std::int64_t seg = (std::int64_t)lens[pi] * inner;
      out.segment((o * total) * inner + off, seg) = parts[pi].value().segment(o * seg, seg);
      off += seg;
    }
  }
  return detail::make_result<S>(
      std::move(shape), std::move(out), parts,
      [outer, inner, total, lens](Node<S>& n) {
        for (std::int64_t o = 0; o < outer; ++o) {
          std::int64_t off = 0;
          for (size_t pi = 0; pi < n.parents.size(); ++pi) {
            const std::int64_t seg = (std::int64_t)lens[pi] * inner;
            auto& p = n.parents[pi];
            if (p->requires_grad) {
              p->ensure_grad();
              p->grad.segment(o * seg, seg) += n.grad.segment((o * total) * inner + off, seg);
            }
            off += seg;
          }
        }
      },
      "concat");
}

// ---------------------------------------------------------------------------
// reductions (double accumulation in fixed index order)

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  double acc = a.value().template cast<double>().sum();
  return detail::make_result<S>(
      {1}, Vec<S>::Constant(1, static_cast<S>(acc)), {a},
      [](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        p->grad += n.grad[0];
      },
      "sum");
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  require(a.size() > 0, "mean: empty tensor");
  double acc = a.value().template cast<double>().sum() / static_cast<double>(a.size());
  return detail::make_result<S>(
      {1}, Vec<S>::Constant(1, static_cast<S>(acc)), {a},
      [](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        p->grad += n.grad[0] / static_cast<S>(p->value.size());
      },
      "mean");
}

// ---------------------------------------------------------------------------
// fused row-indexed embedding add: out.row(r) = x.row(r) + e.row(idx[r]).
// x is any [..., D] tensor viewed as rows; e is [M, D].

template <typename S>
Tensor<S> add_rows(const Tensor<S>& x, const Tensor<S>& e, std::shared_ptr<const std::vector<int>> idx) {
  const int D = x.shape().back();
  require(e.ndim() == 2 && e.dim(1) == D,
          "add_rows: embedding must be [M," + std::to_string(D) + "], got " + shape_str(e.shape()));
  const std::int64_t rows = x.size() / D;
  require(static_cast<std::int64_t>(idx->size()) == rows, "add_rows: index length mismatch");
  const int M = e.dim(0);
  Vec<S> out(x.size());
  CMapM<S> xm(x.value().data(), rows, D);
  CMapM<S> em(e.value().data(), M, D);
  MapM<S> om(out.data(), rows, D);
  for (std::int64_t r = 0; r < rows; ++r) om.row(r) = xm.row(r) + em.row((*idx)[static_cast<size_t>(r)]);
  return detail::make_result<S>(
      x.shape(), std::move(out), {x, e},
      [rows, D, M, idx](Node<S>& n) {
        auto& px = n.parents[0];
        auto& pe = n.parents[1];
        CMapM<S> g(n.grad.data(), rows, D);
        if (px->requires_grad) {
          px->ensure_grad();
          px->grad += n.grad;
        }
        if (pe->requires_grad) {
          pe->ensure_grad();
          MapM<S> de(pe->grad.data(), M, D);
          for (std::int64_t r = 0; r < rows; ++r) de.row((*idx)[static_cast<size_t>(r)]) += g.row(r);
        }
      },
      "add_rows");
}

// Row-wise select: out.row(r) = mask[r] ? a.row(r) : b.row(r or 0).
// b is [D] (shared fallback row, e.g. a learned null token) or [R, D].

template <typename S>
Tensor<S> where_rows(std::shared_ptr<const std::vector<std::uint8_t>> mask, const Tensor<S>& a, const Tensor<S>& b) {
  const int D = a.shape().back();
  const std::int64_t rows = a.size() / D;
  const bool shared_b = (b.ndim() == 1);
  require(shared_b ? b.shape() == Shape{D} : b.shape() == a.shape(),
          "where_rows: fallback must be [D] or match " + shape_str(a.shape()) + ", got " + shape_str(b.shape()));
  require(static_cast<std::int64_t>(mask->size()) == rows, "where_rows: mask length mismatch");
  Vec<S> out(a.size());
  CMapM<S> am(a.value().data(), rows, D);
  MapM<S> om(out.data(), rows, D);
  for (std::int64_t r = 0; r < rows; ++r) {
    if ((*mask)[static_cast<size_t>(r)])
      om.row(r) = am.row(r);
    else if (shared_b)
      om.row(r) = b.value().matrix().transpose();
    else
      om.row(r) = CMapM<S>(b.value().data(), rows, D).row(r);
  }
  return detail::make_result<S>(
      a.shape(), std::move(out), {a, b},
      [rows, D, shared_b, mask](Node<S>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        CMapM<S> g(n.grad.data(), rows, D);
        if (pa->requires_grad) {
          pa->ensure_grad();
          MapM<S> da(pa->grad.data(), rows, D);
          for (std::int64_t r = 0; r < rows; ++r)
            if ((*mask)[static_cast<size_t>(r)]) da.row(r) += g.row(r);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          if (shared_b) {
            for (std::int64_t r = 0; r < rows; ++r)
              if (!(*mask)[static_cast<size_t>(r)]) pb->grad += g.row(r).array().transpose();
          } else {
            MapM<S> db(pb->grad.data(), rows, D);
            for (std::int64_t r = 0; r < rows; ++r)
              if (!(*mask)[static_cast<size_t>(r)]) db.row(r) += g.row(r);
          }
        }
      },
      "where_rows");
}

// ---------------------------------------------------------------------------
// scaled-dot-product attention composite (multi-head, fused forward/backward)
// q: [B,Tq,D], k/v: [B,Tk,D]; heads must divide D.

template <typename S>
Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads) {
  require(q.ndim() == 3 && k.ndim() == 3 && v.ndim() == 3,
          "attention: expects 3-axis inputs, got " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
              shape_str(v.shape()));
  const int B = q.dim(0), Tq = q.dim(1), D = q.dim(2);
  const int Tk = k.dim(1);
  require(k.dim(0) == B && v.dim(0) == B && v.dim(1) == Tk && k.dim(2) == D && v.dim(2) == D,
          "attention: incompatible shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
              shape_str(v.shape()));
  require(heads > 0 && D % heads == 0, "attention: heads must divide width D=" + std::to_string(D));
  const int dh = D / heads;
  const S scl = S(1) / std::sqrt(static_cast<S>(dh));
  Vec<S> out = Vec<S>::Zero(q.size());
  const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  auto weights = keep ? std::make_shared<std::vector<MatRM<S>>>() : nullptr;
  if (keep) weights->reserve(static_cast<size_t>(B) * heads);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < heads; ++h) {
      CStrideMap<S> Qh(q.value().data() + (std::int64_t)b * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
      CStrideMap<S> Kh(k.value().data() + (std::int64_t)b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
      CStrideMap<S> Vh(v.value().data() + (std::int64_t)b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
      MatRM<S> score = (Qh * Kh.transpose()) * scl;
      for (int r = 0; r < Tq; ++r) {
        auto row = score.row(r).array();
        S m = row.maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (row - m).exp();
        score.row(r) = (e / e.sum()).matrix();
      }
      StrideMap<S> Oh(out.data() + (std::int64_t)b * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
      Oh.noalias() = score * Vh;
      if (keep) weights->push_back(std::move(score));
    }
  }
  return detail::make_result<S>(
      q.shape(), std::move(out), {q, k, v},
      [B, Tq, Tk, D, heads, dh, scl, weights](Node<S>& n) {
        auto& pq = n.parents[0];
        auto& pk = n.parents[1];
        auto& pv = n.parents[2];
        if (pq->requires_grad) pq->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        if (pv->requires_grad) pv->ensure_grad();
        for (int b = 0; b < B; ++b) {
          for (int h = 0; h < heads; ++h) {
            const MatRM<S>& W = (*weights)[static_cast<size_t>(b) * heads + h];
            CStrideMap<S> G(n.grad.data() + (std::int64_t)b * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
            CStrideMap<S> Qh(pq->value.data() + (std::int64_t)b * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
            CStrideMap<S> Kh(pk->value.data() + (std::int64_t)b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
            CStrideMap<S> Vh(pv->value.data() + (std::int64_t)b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
            if (pv->requires_grad) {
              StrideMap<S> dV(pv->grad.data() + (std::int64_t)b * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
              dV.noalias() += W.transpose() * G;
            }
            if (pq->requires_grad || pk->requires_grad) {
              MatRM<S> dW = G * Vh.transpose();  // [Tq,Tk]
              MatRM<S> dS(Tq, Tk);
              for (int r = 0; r < Tq; ++r) {
                S dot = (dW.row(r).array() * W.row(r).array()).sum();
                dS.row(r) = (W.row(r).array() * (dW.row(r).array() - dot)).matrix();
              }
              if (pq->requires_grad) {
                StrideMap<S> dQ(pq->grad.data() + (std::int64_t)b * Tq * D + h * dh, Tq, dh,
                                Eigen::OuterStride<>(D));
                dQ.noalias() += dS * Kh * scl;
              }
              if (pk->requires_grad) {
                StrideMap<S> dK(pk->grad.data() + (std::int64_t)b * Tk * D + h * dh, Tk, dh,
                                Eigen::OuterStride<>(D));
                dK.noalias() += dS.transpose() * Qh * scl;
              }
            }
          }
        }
      },
      "attention");
}

// ---------------------------------------------------------------------------
// losses

// sum(w * (pred - target)^2) / sum(w); target and weights are constants.
template <typename S>
Tensor<S> masked_mse(const Tensor<S>& pred, std::shared_ptr<const Vec<S>> target,
                     std::shared_ptr<const Vec<S>> weights) {
  require(target->size() == pred.size() && weights->size() == pred.size(),
          "masked_mse: size mismatch with " + shape_str(pred.shape()));
  const double wsum = weights->template cast<double>().sum();
  require(wsum > 0, "masked_mse: empty selection (weights sum to zero)");
  Vec<S> diff = pred.value() - *target;
  double acc = (diff * diff * *weights).template cast<double>().sum() / wsum;
  return detail::make_result<S>(
      {1}, Vec<S>::Constant(1, static_cast<S>(acc)), {pred},
      [target, weights, wsum](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        p->grad += n.grad[0] * S(2.0 / wsum) * *weights * (p->value - *target);
      },
      "masked_mse");
}

// Weighted mean cross-entropy over logits [N, C] against integer labels.
template <typename S>
Tensor<S> softmax_xent(const Tensor<S>& logits, std::shared_ptr<const std::vector<int>> labels,
                       std::shared_ptr<const Vec<S>> weights) {
  require(logits.ndim() == 2, "softmax_xent: logits must be [N,C], got " + shape_str(logits.shape()));
  const int N = logits.dim(0), C = logits.dim(1);
  require(static_cast<int>(labels->size()) == N && weights->size() == N, "softmax_xent: label/weight count mismatch");
  const double wsum = weights->template cast<double>().sum();
  require(wsum > 0, "softmax_xent: empty selection (weights sum to zero)");
  CMapM<S> lm(logits.value().data(), N, C);
  double acc = 0;
  for (int i = 0; i < N; ++i) {
    auto row = lm.row(i).array();
    S m = row.maxCoeff();
    double lse = static_cast<double>(m) + std::log((row - m).exp().template cast<double>().sum());
    acc += static_cast<double>((*weights)[i]) * (lse - static_cast<double>(row[(*labels)[static_cast<size_t>(i)]]));
  }
  acc /= wsum;
  return detail::make_result<S>(
      {1}, Vec<S>::Constant(1, static_cast<S>(acc)), {logits},
      [N, C, labels, weights, wsum](Node<S>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        CMapM<S> lm(p->value.data(), N, C);
        MapM<S> dm(p->grad.data(), N, C);
        for (int i = 0; i < N; ++i) {
          auto row = lm.row(i).array();
          S m = row.maxCoeff();
          Eigen::Array<S, 1, Eigen::Dynamic> e = (row - m).exp();
          Eigen::Array<S, 1, Eigen::Dynamic> probs = e / e.sum();
          probs[(*labels)[static_cast<size_t>(i)]] -= S(1);
          dm.row(i).array() += n.grad[0] * (*weights)[i] / S(wsum) * probs;
        }
      },
      "softmax_xent");
}

// ---------------------------------------------------------------------------
// named parameter registry (insertion-ordered, deterministic)

template <typename S>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    require(find(name) == nullptr, "duplicate parameter name: " + name);
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }
  Tensor<S>* find(const std::string& name) {
    for (auto& [k, v] : items)
      if (k == name) return &v;
    return nullptr;
  }
  const Tensor<S>* find(const std::string& name) const {
    for (auto& [k, v] : items)
      if (k == name) return &v;
    return nullptr;
  }
  void zero_grads() {
    for (auto& [k, v] : items) v.zero_grad();
  }
  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (auto& [k, v] : items) n += v.size();
    return n;
  }
  bool all_finite() const {
    for (auto& [k, v] : items)
      if (!v.value().allFinite()) return false;
    return true;
  }
};

}  // namespace difflight::numcore
