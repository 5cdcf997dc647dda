#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "scanet/numkern/tensor.hpp"
#include "scanet/rng.hpp"

namespace scanet::nk {

enum class GumbelMode {
  Hard,  // one-hot forward, gradient of the tau-softmax (straight-through)
  Soft,  // tau-softmax forward and backward
};

struct GumbelSample {
  Tensor output;      // [1 x n]
  std::size_t index;  // argmax of logits + noise
};

/// Gumbel-Softmax over a [1 x n] logit row with caller-supplied noise.
inline GumbelSample gumbel_softmax_with_noise(const Tensor& logits, const std::vector<double>& noise,
                                              double tau, GumbelMode mode = GumbelMode::Hard) {
  const std::size_t n = logits.numel();
  if (n < 1) throw DimensionError("gumbel_softmax: empty logits");
  if (noise.size() != n) throw DimensionError("gumbel_softmax: noise size mismatch");
  if (!(tau > 0.0)) throw DomainError("gumbel_softmax: temperature must be positive");

  std::vector<double> perturbed(n);
  std::size_t arg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    perturbed[i] = logits.value()[i] + noise[i];
    if (perturbed[i] > perturbed[arg]) arg = i;
  }
  Array soft(1, n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (soft[i] = std::exp((perturbed[i] - perturbed[arg]) / tau));
  for (std::size_t i = 0; i < n; ++i) soft[i] /= z;

  Array out(1, n);
  if (mode == GumbelMode::Hard) {
    out[arg] = 1.0;
  } else {
    out = soft;
  }
  Tensor t = make_result(std::move(out), {logits}, "gumbel_softmax",
                         [soft = std::move(soft), tau](Node& node) {
                           auto& g = node.parents[0]->ensure_grad();
                           double dot = 0.0;
                           for (std::size_t i = 0; i < soft.size(); ++i) dot += node.grad[i] * soft[i];
                           for (std::size_t i = 0; i < soft.size(); ++i) {
                             g[i] += soft[i] * (node.grad[i] - dot) / tau;
                           }
                         });
  return {t, arg};
}

inline std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
  std::vector<double> noise(n);
  for (auto& g : noise) g = rng.gumbel();
  return noise;
}

inline GumbelSample gumbel_softmax(const Tensor& logits, double tau, Rng& rng,
                                   GumbelMode mode = GumbelMode::Hard) {
  return gumbel_softmax_with_noise(logits, gumbel_noise(logits.numel(), rng), tau, mode);
}

}  // namespace scanet::nk
