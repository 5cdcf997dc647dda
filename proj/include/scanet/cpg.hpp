#pragma once

// Complexity-adaptive proposal generation: codebook lookup, count selection,
// slot-wise center/width regression and flattened Gaussian masks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "scanet/error.hpp"
#include "scanet/numkern/attention.hpp"
#include "scanet/numkern/gumbel.hpp"
#include "scanet/numkern/ops.hpp"
#include "scanet/numkern/params.hpp"
#include "scanet/rng.hpp"

namespace scanet::cpg {

using nk::Array;
using nk::Tensor;

struct Codebook {
  Tensor z;  // [K x d]
  std::size_t K = 0;

  static Codebook create(nk::ParamStore& store, const std::string& name, std::size_t K, std::size_t dim,
                         Rng& rng) {
    if (K < 1) throw ConfigError("codebook size K must be >= 1");
    return {store.add(name, nk::normal_array(K, dim, 1.0, rng)), K};
  }
};

/// Row min(alpha, K) of the codebook (alpha is 1-based).
inline Tensor complexity_vector(std::size_t alpha, const Codebook& cb) {
  if (alpha < 1) throw DomainError("scene complexity must be >= 1, got " + std::to_string(alpha));
  const std::size_t row = std::min(alpha, cb.K) - 1;
  return nk::slice_rows(cb.z, row, row + 1);
}

struct Interaction {
  Tensor z;  // [1 x d]
  Tensor v;  // [N_v x d]
  Tensor q;  // [N_q x d]
};

/// One attention layer over [z || v || q], split back by position.
inline Interaction interact(const nk::AttentionBlock& block, const Tensor& z, const Tensor& v, const Tensor& q) {
  if (z.rows() != 1) throw DimensionError("interact: complexity vector must be a single row");
  if (z.cols() != v.cols() || v.cols() != q.cols()) throw DimensionError("interact: width mismatch");
  Tensor out = nk::attention_forward(block, nk::concat_rows({z, v, q}));
  const std::size_t nv = v.rows();
  return {nk::slice_rows(out, 0, 1), nk::slice_rows(out, 1, 1 + nv), nk::slice_rows(out, 1 + nv, out.rows())};
}

struct CountSelector {
  std::size_t p_min = 5;
  std::size_t p_max = 14;
  Tensor w1, b1, w2, b2;

  std::size_t n() const { return p_max - p_min + 1; }
  std::size_t value(std::size_t index) const { return p_min + index; }

  static CountSelector create(nk::ParamStore& store, const std::string& prefix, std::size_t dim,
                              std::size_t p_min, std::size_t p_max, Rng& rng) {
    if (p_min < 1 || p_max < p_min) {
      throw ConfigError("proposal counts need 1 <= p_min <= p_max, got " + std::to_string(p_min) + ".." +
                        std::to_string(p_max));
    }
    CountSelector s;
    s.p_min = p_min;
    s.p_max = p_max;
    s.w1 = store.add(prefix + ".w1", nk::fan_in_init(dim, dim, rng));
    s.b1 = store.add(prefix + ".b1", Array(1, dim));
    s.w2 = store.add(prefix + ".w2", nk::fan_in_init(dim, p_max - p_min + 1, rng, 0.5));
    s.b2 = store.add(prefix + ".b2", Array(1, p_max - p_min + 1));
    return s;
  }
};

enum class CountMode {
  Sample,  // hard Gumbel draw, straight-through gradient
  Soft,    // relaxed Gumbel draw; used for gradient checking
  Argmax,  // noise-free argmax for inference
};

struct CountSelection {
  std::size_t p_alpha = 0;
  std::size_t index = 0;
  Tensor g;  // [1 x n]
};

inline Tensor count_logits(const Tensor& z, const CountSelector& sel) {
  return nk::linear(nk::tanh(nk::linear(z, sel.w1, sel.b1)), sel.w2, sel.b2);
}

inline CountSelection select_count(const Tensor& z, const CountSelector& sel, double tau, Rng& rng,
                                   CountMode mode = CountMode::Sample) {
  Tensor a = count_logits(z, sel);
  nk::GumbelSample s =
      mode == CountMode::Argmax
          ? nk::gumbel_softmax_with_noise(a, std::vector<double>(sel.n(), 0.0), tau, nk::GumbelMode::Hard)
          : nk::gumbel_softmax(a, tau, rng, mode == CountMode::Soft ? nk::GumbelMode::Soft : nk::GumbelMode::Hard);
  return {sel.value(s.index), s.index, s.output};
}

/// Weight of each of the p_max slots: sum_i g_i [I_i > j]. For a one-hot g
/// this is 1 on the first p_alpha slots and 0 elsewhere; the count MLP
/// receives gradient through it.
inline Tensor slot_weights(const Tensor& g, const CountSelector& sel) {
  Array table(sel.n(), sel.p_max);
  for (std::size_t i = 0; i < sel.n(); ++i) {
    for (std::size_t j = 0; j < sel.p_max; ++j) table(i, j) = sel.value(i) > j ? 1.0 : 0.0;
  }
  return nk::matmul(g, nk::constant(std::move(table)));
}

struct SlotRegressor {
  Tensor slots;  // [p_max x d] learnable slot queries
  Tensor w;      // [d x 2]
  Tensor b;      // [1 x 2]
  double w_min = 0.05;

  static SlotRegressor create(nk::ParamStore& store, const std::string& prefix, std::size_t dim,
                              std::size_t p_max, double w_min, Rng& rng) {
    if (!(w_min > 0.0 && w_min <= 1.0)) throw ConfigError("w_min must lie in (0, 1]");
    SlotRegressor r;
    r.slots = store.add(prefix + ".slots", nk::normal_array(p_max, dim, 1.0, rng));
    r.w = store.add(prefix + ".w", nk::fan_in_init(dim, 2, rng));
    r.b = store.add(prefix + ".b", Array(1, 2));
    r.w_min = w_min;
    return r;
  }
};

struct CenterWidth {
  Tensor c;  // [1 x 1]
  Tensor w;  // [1 x 1]
};

/// (c, w) = sigmoid((z + slot_p) W + b) per slot, with w clamped to [w_min, 1].
inline std::vector<CenterWidth> regress_center_width(const Tensor& z, const SlotRegressor& reg) {
  if (z.rows() != 1 || z.cols() != reg.slots.cols()) throw DimensionError("regress_center_width: bad z shape");
  Tensor cw = nk::sigmoid(nk::linear(nk::add_row(reg.slots, z), reg.w, reg.b));
  std::vector<CenterWidth> out;
  out.reserve(cw.rows());
  for (std::size_t p = 0; p < cw.rows(); ++p) {
    out.push_back({nk::element(cw, p, 0), nk::clamp(nk::element(cw, p, 1), reg.w_min, 1.0)});
  }
  return out;
}

/// Scalar Gaussian weight of frame position i (1-based) out of n.
inline double base_mask_value(std::size_t i, double c, double w, double sigma, std::size_t n) {
  const double s = w / sigma;
  const double x = static_cast<double>(i) / static_cast<double>(n) - c;
  return std::exp(-x * x / (2.0 * s * s)) / (std::sqrt(2.0 * std::numbers::pi) * s);
}

/// Gaussian over positions i/n, i = 1..n, centred at c with std w/sigma.
/// Output [1 x n]; differentiable in c and w.
inline Tensor base_mask(const Tensor& c, const Tensor& w, double sigma, std::size_t n) {
  if (c.numel() != 1 || w.numel() != 1) throw DimensionError("base_mask: c and w must be scalars");
  if (!(sigma > 0.0)) throw DomainError("base_mask: gauss_sigma must be positive");
  if (n < 1) throw DimensionError("base_mask: no frames");
  const double cv = c.item();
  const double wv = w.item();
  if (!(wv > 0.0)) throw DomainError("base_mask: width must be positive");
  Array m(1, n);
  for (std::size_t k = 0; k < n; ++k) m[k] = base_mask_value(k + 1, cv, wv, sigma, n);
  const double s = wv / sigma;
  return nk::make_result(std::move(m), {c, w}, "base_mask", [cv, s, sigma, n](nk::Node& node) {
    double dc = 0.0, ds = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = static_cast<double>(k + 1) / static_cast<double>(n) - cv;
      const double gm = node.grad[k] * node.value[k];
      dc += gm * x / (s * s);
      ds += gm * (x * x / (s * s * s) - 1.0 / s);
    }
    if (node.parents[0]->requires_grad) node.parents[0]->ensure_grad()[0] += dc;
    if (node.parents[1]->requires_grad) node.parents[1]->ensure_grad()[0] += ds / sigma;
  });
}

struct ProposalMask {
  Tensor mask;  // [1 x N_v], max exactly 1
  double c = 0.0;
  double w = 0.0;
  std::size_t st = 0;
  std::size_t ed = 0;
};

struct Region {
  std::size_t st = 0;
  std::size_t ed = 0;
};

inline Region mask_region(double c, double w, std::size_t n) {
  const double nn = static_cast<double>(n);
  const auto clampi = [](double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); };
  const double st = clampi(std::floor(nn * (c - w / 2.0)), 0.0, nn - 1.0);
  const double ed = clampi(std::ceil(nn * (c + w / 2.0)) - 1.0, st, nn - 1.0);
  return {static_cast<std::size_t>(st), static_cast<std::size_t>(ed)};
}

/// Replaces the values on [st, ed] by their mean, then divides the whole mask
/// by its maximum. Region bounds come from (c, w) and carry no gradient.
inline ProposalMask flatten_and_normalize(const Tensor& m, double c, double w, std::size_t n) {
  if (m.numel() != n) throw DimensionError("flatten_and_normalize: mask length mismatch");
  const Region r = mask_region(c, w, n);
  const double count = static_cast<double>(r.ed - r.st + 1);
  double mean = 0.0;
  for (std::size_t k = r.st; k <= r.ed; ++k) mean += m.value()[k];
  mean /= count;

  Array u = m.value();
  for (std::size_t k = r.st; k <= r.ed; ++k) u[k] = mean;
  std::size_t arg = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (u[k] > u[arg]) arg = k;
  }
  const double peak = u[arg];
  if (!(peak > 0.0)) throw NumericError("flatten_and_normalize: mask vanished");
  Array out(1, n);
  for (std::size_t k = 0; k < n; ++k) out[k] = u[k] / peak;

  Tensor t = nk::make_result(std::move(out), {m}, "flatten_and_normalize",
                             [u = std::move(u), peak, arg, r, count](nk::Node& node) {
                               const std::size_t len = u.size();
                               Array gu(1, len);
                               double dot = 0.0;
                               for (std::size_t k = 0; k < len; ++k) {
                                 gu[k] = node.grad[k] / peak;
                                 dot += node.grad[k] * u[k];
                               }
                               gu[arg] -= dot / (peak * peak);
                               double region = 0.0;
                               for (std::size_t k = r.st; k <= r.ed; ++k) region += gu[k];
                               auto& g = node.parents[0]->ensure_grad();
                               for (std::size_t k = 0; k < len; ++k) {
                                 g[k] += (k >= r.st && k <= r.ed) ? region / count : gu[k];
                               }
                             });
  return {t, c, w, r.st, r.ed};
}

struct ProposalSet {
  std::size_t p_alpha = 0;
  CountSelection count;
  Tensor slot_weights;               // [1 x p_max]
  std::vector<ProposalMask> masks;   // all p_max slots; the first p_alpha are the proposals
  std::vector<Tensor> features;      // v scaled row-wise by each mask
};

inline Tensor masked_features(const Tensor& v, const Tensor& mask) { return nk::mul_rows(v, mask); }

struct ProposalParams {
  const CountSelector* selector = nullptr;
  const SlotRegressor* regressor = nullptr;
  double gauss_sigma = 8.0;
  double tau = 1.0;
};

/// Count selection from z, then one flattened mask and masked feature
/// sequence per slot over v.
inline ProposalSet build_proposals(const Tensor& v, const Tensor& z, const ProposalParams& p, Rng& rng,
                                   CountMode mode = CountMode::Sample) {
  ProposalSet set;
  set.count = select_count(z, *p.selector, p.tau, rng, mode);
  set.p_alpha = set.count.p_alpha;
  set.slot_weights = slot_weights(set.count.g, *p.selector);
  const std::size_t n = v.rows();
  for (const auto& cw : regress_center_width(z, *p.regressor)) {
    Tensor base = base_mask(cw.c, cw.w, p.gauss_sigma, n);
    set.masks.push_back(flatten_and_normalize(base, cw.c.item(), cw.w.item(), n));
    set.features.push_back(masked_features(v, set.masks.back().mask));
  }
  return set;
}

}  // namespace scanet::cpg
