#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "scanet/numkern/tensor.hpp"

namespace scanet::nk {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
  }
}

inline bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a.value()) + " x " + shape_str(b.value()));
  }
  Array out(a.rows(), b.cols());
  gemm(a.value(), false, b.value(), false, out, false);
  return make_result(std::move(out), {a, b}, "matmul", [](Node& n) {
    const auto& pa = n.parents[0];
    const auto& pb = n.parents[1];
    if (detail::wants(pa)) gemm(n.grad, false, pb->value, true, pa->ensure_grad(), true);
    if (detail::wants(pb)) gemm(pa->value, true, n.grad, false, pb->ensure_grad(), true);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Array out = a.value();
  out.add_scaled(b.value());
  return make_result(std::move(out), {a, b}, "add", [](Node& n) {
    for (const auto& p : n.parents) {
      if (detail::wants(p)) p->ensure_grad().add_scaled(n.grad);
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Array out = a.value();
  out.add_scaled(b.value(), -1.0);
  return make_result(std::move(out), {a, b}, "sub", [](Node& n) {
    if (detail::wants(n.parents[0])) n.parents[0]->ensure_grad().add_scaled(n.grad);
    if (detail::wants(n.parents[1])) n.parents[1]->ensure_grad().add_scaled(n.grad, -1.0);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, "mul", [](Node& n) {
    const auto& pa = n.parents[0];
    const auto& pb = n.parents[1];
    if (detail::wants(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->value[i];
    }
    if (detail::wants(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->value[i];
    }
  });
}

/// Elementwise a / b.
inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return make_result(std::move(out), {a, b}, "div", [](Node& n) {
    const auto& pa = n.parents[0];
    const auto& pb = n.parents[1];
    if (detail::wants(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / pb->value[i];
    }
    if (detail::wants(pb)) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= n.grad[i] * n.value[i] / pb->value[i];
      }
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  Array out = a.value();
  for (auto& x : out.values()) x *= s;
  return make_result(std::move(out), {a}, "scale", [s](Node& n) {
    n.parents[0]->ensure_grad().add_scaled(n.grad, s);
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  Array out = a.value();
  for (auto& x : out.values()) x += s;
  return make_result(std::move(out), {a}, "add_scalar", [](Node& n) {
    n.parents[0]->ensure_grad().add_scaled(n.grad);
  });
}

/// a[r x c] + b[1 x c] broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw DimensionError("add_row: " + shape_str(a.value()) + " + " + shape_str(b.value()));
  }
  Array out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row_ptr(r);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] += b.value()[c];
  }
  return make_result(std::move(out), {a, b}, "add_row", [](Node& n) {
    if (detail::wants(n.parents[0])) n.parents[0]->ensure_grad().add_scaled(n.grad);
    if (detail::wants(n.parents[1])) {
      auto& g = n.parents[1]->ensure_grad();
      for (std::size_t r = 0; r < n.grad.rows(); ++r) {
        const double* gr = n.grad.row_ptr(r);
        for (std::size_t c = 0; c < n.grad.cols(); ++c) g[c] += gr[c];
      }
    }
  });
}

/// Row i of a[r x c] multiplied by s[i]; `s` holds r values (any orientation).
inline Tensor mul_rows(const Tensor& a, const Tensor& s) {
  if (s.numel() != a.rows()) {
    throw DimensionError("mul_rows: " + shape_str(a.value()) + " by " + shape_str(s.value()));
  }
  Array out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row_ptr(r);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] *= s.value()[r];
  }
  return make_result(std::move(out), {a, s}, "mul_rows", [](Node& n) {
    const auto& pa = n.parents[0];
    const auto& ps = n.parents[1];
    if (detail::wants(pa)) {
      auto& g = pa->ensure_grad();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.grad(r, c) * ps->value[r];
      }
    }
    if (detail::wants(ps)) {
      auto& g = ps->ensure_grad();
      for (std::size_t r = 0; r < n.grad.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n.grad.cols(); ++c) acc += n.grad(r, c) * pa->value(r, c);
        g[r] += acc;
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  Array out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a.value()(r, c);
  }
  return make_result(std::move(out), {a}, "transpose", [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.grad(c, r);
    }
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Array out(rows, cols);
  std::size_t r0 = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.row_ptr(r0));
    r0 += p.rows();
  }
  return make_result(std::move(out), parts, "concat_rows", [](Node& n) {
    std::size_t offset = 0;
    for (const auto& p : n.parents) {
      const std::size_t count = p->value.size();
      if (detail::wants(p)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < count; ++i) g[i] += n.grad[offset + i];
      }
      offset += count;
    }
  });
}

/// Rows [begin, end).
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t cols = a.cols();
  Array out(end - begin, cols);
  std::copy(a.value().row_ptr(begin), a.value().row_ptr(begin) + (end - begin) * cols,
            out.storage().begin());
  return make_result(std::move(out), {a}, "slice_rows", [begin, cols](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    double* dst = g.row_ptr(begin);
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    (void)cols;
  });
}

/// Selected rows (duplicates allowed); backward scatter-adds.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  const std::size_t cols = a.cols();
  Array out(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy(a.value().row_ptr(index[i]), a.value().row_ptr(index[i]) + cols, out.row_ptr(i));
  }
  return make_result(std::move(out), {a}, "gather_rows", [index, cols](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) {
      double* dst = g.row_ptr(index[i]);
      const double* src = n.grad.row_ptr(i);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

/// Single element as a 1 x 1 tensor.
inline Tensor element(const Tensor& a, std::size_t r, std::size_t c) {
  if (r >= a.rows() || c >= a.cols()) throw DimensionError("element: index out of range");
  return make_result(Array::scalar(a.value()(r, c)), {a}, "element", [r, c](Node& n) {
    n.parents[0]->ensure_grad()(r, c) += n.grad[0];
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return make_result(Array::scalar(s), {a}, "sum", [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (auto& x : g.values()) x += n.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor sum_squares(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x * x;
  return make_result(Array::scalar(s), {a}, "sum_squares", [](Node& n) {
    auto& p = n.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p->value[i] * n.grad[0];
  });
}

namespace detail {

template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D dfdx) {
  Array out = a.value();
  for (auto& x : out.values()) x = f(x);
  return make_result(std::move(out), {a}, op, [dfdx](Node& n) {
    auto& p = n.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * dfdx(p->value[i], n.value[i]);
  });
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// GELU, tanh approximation (smooth everywhere).
inline Tensor gelu(const Tensor& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return detail::unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(k * (x + c * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * c * x * x);
      });
}

/// max(x, 0); the subgradient at 0 is 0.
inline Tensor hinge(const Tensor& a) {
  return detail::unary(
      a, "hinge", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Clamp into [lo, hi]; zero gradient where clamped.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(
      a, "clamp", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(matmul(x, w), b);
}

inline Tensor softmax_rows(const Tensor& a) {
  Array out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row_ptr(r);
    double mx = o[0];
    for (std::size_t c = 1; c < out.cols(); ++c) mx = std::max(mx, o[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) s += (o[c] = std::exp(o[c] - mx));
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] /= s;
  }
  return make_result(std::move(out), {a}, "softmax_rows", [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += n.grad(r, c) * n.value(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.value(r, c) * (n.grad(r, c) - dot);
    }
  });
}

inline Tensor log_softmax_rows(const Tensor& a) {
  Array out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row_ptr(r);
    double mx = o[0];
    for (std::size_t c = 1; c < out.cols(); ++c) mx = std::max(mx, o[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) s += std::exp(o[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] -= lse;
  }
  return make_result(std::move(out), {a}, "log_softmax_rows", [](Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gs += n.grad(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) {
        g(r, c) += n.grad(r, c) - std::exp(n.value(r, c)) * gs;
      }
    }
  });
}

/// Mean over rows of -log softmax(logits)[row, target[row]].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.rows() || targets.empty()) {
    throw DimensionError("cross_entropy: one target per logits row required");
  }
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  Array probs(rows, cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw DimensionError("cross_entropy: target out of range");
    const double* l = logits.value().row_ptr(r);
    double mx = l[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, l[c]);
    double s = 0.0;
    double* p = probs.row_ptr(r);
    for (std::size_t c = 0; c < cols; ++c) s += (p[c] = std::exp(l[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) p[c] /= s;
    loss += -(l[targets[r]] - mx - std::log(s));
  }
  loss /= static_cast<double>(rows);
  return make_result(Array::scalar(loss), {logits}, "cross_entropy",
                     [probs = std::move(probs), targets](Node& n) {
                       auto& g = n.parents[0]->ensure_grad();
                       const double scale = n.grad[0] / static_cast<double>(targets.size());
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         for (std::size_t c = 0; c < g.cols(); ++c) {
                           g(r, c) += scale * (probs(r, c) - (c == targets[r] ? 1.0 : 0.0));
                         }
                       }
                     });
}

/// Row-wise layer normalization with affine gamma/beta of shape [1 x d].
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: need at least 2 features per row");
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine size mismatch");
  Array xhat(rows, d);
  std::vector<double> rstd(rows);
  Array out(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().row_ptr(r);
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (xr[c] - mu) * rstd[r];
      out(r, c) = xhat(r, c) * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, "layer_norm",
                     [xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
                       const auto& px = n.parents[0];
                       const auto& pg = n.parents[1];
                       const auto& pb = n.parents[2];
                       const std::size_t rows = n.grad.rows();
                       const std::size_t d = n.grad.cols();
                       if (detail::wants(pg) || detail::wants(pb)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < d; ++c) {
                             if (detail::wants(pg)) pg->ensure_grad()[c] += n.grad(r, c) * xhat(r, c);
                             if (detail::wants(pb)) pb->ensure_grad()[c] += n.grad(r, c);
                           }
                         }
                       }
                       if (!detail::wants(px)) return;
                       auto& g = px->ensure_grad();
                       std::vector<double> dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double m1 = 0.0;
                         double m2 = 0.0;
                         for (std::size_t c = 0; c < d; ++c) {
                           dxhat[c] = n.grad(r, c) * pg->value[c];
                           m1 += dxhat[c];
                           m2 += dxhat[c] * xhat(r, c);
                         }
                         m1 /= static_cast<double>(d);
                         m2 /= static_cast<double>(d);
                         for (std::size_t c = 0; c < d; ++c) {
                           g(r, c) += rstd[r] * (dxhat[c] - m1 - xhat(r, c) * m2);
                         }
                       }
                     });
}

/// Scaled dot-product attention with `heads` heads over pre-projected
/// Q [Lq x d], K [Lk x d], V [Lk x d]. Returns [Lq x d].
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   std::size_t heads) {
  const std::size_t lq = q.rows();
  const std::size_t lk = k.rows();
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: model dim not divisible by heads");
  if (k.cols() != d || v.cols() != d || v.rows() != lk) throw DimensionError("attention: Q/K/V shape mismatch");
  if (lk == 0) throw DimensionError("attention: empty key set");
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Array> probs(heads, Array(lq, lk));
  Array out(lq, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Array& p = probs[h];
    for (std::size_t i = 0; i < lq; ++i) {
      const double* qi = q.value().row_ptr(i) + off;
      double* pi = p.row_ptr(i);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < lk; ++j) {
        const double* kj = k.value().row_ptr(j) + off;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        pi[j] = s * inv;
        mx = std::max(mx, pi[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < lk; ++j) z += (pi[j] = std::exp(pi[j] - mx));
      double* oi = out.row_ptr(i) + off;
      for (std::size_t j = 0; j < lk; ++j) {
        pi[j] /= z;
        const double* vj = v.value().row_ptr(j) + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += pi[j] * vj[c];
      }
    }
  }
  return make_result(
      std::move(out), {q, k, v}, "multi_head_attention",
      [probs = std::move(probs), heads, dh, inv](Node& n) {
        const auto& pq = n.parents[0];
        const auto& pk = n.parents[1];
        const auto& pv = n.parents[2];
        const std::size_t lq = pq->value.rows();
        const std::size_t lk = pk->value.rows();
        Array* gq = detail::wants(pq) ? &pq->ensure_grad() : nullptr;
        Array* gk = detail::wants(pk) ? &pk->ensure_grad() : nullptr;
        Array* gv = detail::wants(pv) ? &pv->ensure_grad() : nullptr;
        std::vector<double> dp(lk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          const Array& p = probs[h];
          for (std::size_t i = 0; i < lq; ++i) {
            const double* doi = n.grad.row_ptr(i) + off;
            const double* pi = p.row_ptr(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
              const double* vj = pv->value.row_ptr(j) + off;
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
              dp[j] = s;
              dot += s * pi[j];
              if (gv) {
                double* gvj = gv->row_ptr(j) + off;
                for (std::size_t c = 0; c < dh; ++c) gvj[c] += pi[j] * doi[c];
              }
            }
            const double* qi = pq->value.row_ptr(i) + off;
            double* gqi = gq ? gq->row_ptr(i) + off : nullptr;
            for (std::size_t j = 0; j < lk; ++j) {
              const double ds = pi[j] * (dp[j] - dot) * inv;
              if (ds == 0.0) continue;
              const double* kj = pk->value.row_ptr(j) + off;
              if (gqi) {
                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
              }
              if (gk) {
                double* gkj = gk->row_ptr(j) + off;
                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

}  // namespace scanet::nk
