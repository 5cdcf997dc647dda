#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scanet/numkern/params.hpp"
#include "scanet/numkern/tensor.hpp"

namespace scanet::nk {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t n_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Denominator floor: error = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences over every element of `params`. `f` must rebuild its graph
/// from the current parameter values on each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  GradCheckOptions opt = {}) {
  for (auto [name, t] : params) t.zero_grad();
  Tensor y = f();
  if (y.numel() != 1) throw DimensionError("grad_check: function must be scalar-valued");
  y.backward();

  GradCheckResult res;
  for (auto [name, t] : params) {
    const Array analytic = t.grad();
    auto& values = t.mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double fp = f().item();
      values[i] = saved - opt.step;
      const double fm = f().item();
      values[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite objective");
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++res.n_checked;
      if (err > res.max_rel_error || res.worst_param.empty()) {
        if (err >= res.max_rel_error) {
          res.max_rel_error = err;
          res.worst_param = name;
          res.worst_index = i;
          res.analytic = a;
          res.numeric = numeric;
        }
      }
    }
  }
  return res;
}

inline GradCheckResult grad_check(const std::function<Tensor()>& f, const ParamStore& store,
                                  GradCheckOptions opt = {}) {
  return grad_check(f, store.entries(), opt);
}

}  // namespace scanet::nk
