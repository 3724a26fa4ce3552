#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "flower/autodiff.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Pure loss evaluator: same ParamSet in, same scalar out.
using LossFn = std::function<double(const ParamSet&)>;

/// Central-difference gradient estimate, (L(theta+h) - L(theta-h)) / 2h per
/// coordinate. This is the gradient-check oracle; it only ever calls the
/// loss evaluator and is independent of the reverse-mode path it verifies.
inline GradMap finite_diff_grad(const LossFn& loss, const ParamSet& params,
                                double step) {
  FLOWER_CHECK(step > 0.0, "finite_diff_grad: step must be positive");
  GradMap out;
  ParamSet probe = params;
  for (const auto& [id, value] : params.values()) {
    Tensor grad(value.shape());
    Tensor& p = probe.mutable_at(id);
    for (std::size_t i = 0; i < value.size(); ++i) {
      double original = p[i];
      p[i] = original + step;
      double up = loss(probe);
      p[i] = original - step;
      double down = loss(probe);
      p[i] = original;
      FLOWER_CHECK(std::isfinite(up) && std::isfinite(down),
                   "finite_diff_grad: non-finite loss probing " + id +
                       "[" + std::to_string(i) + "]");
      grad[i] = (up - down) / (2.0 * step);
    }
    out.emplace(id, std::move(grad));
  }
  return out;
}

/// Max relative error between two gradient maps, with an absolute floor so
/// near-zero coordinates compare on absolute terms. The floor sits above
/// the roundoff of central differences at h ~ 1e-5 on O(1) losses.
inline double max_relative_error(const GradMap& a, const GradMap& b,
                                 double floor = 1e-5) {
  double worst = 0.0;
  for (const auto& [id, ga] : a) {
    auto it = b.find(id);
    FLOWER_CHECK(it != b.end(), "max_relative_error: key missing: " + id);
    const Tensor& gb = it->second;
    FLOWER_CHECK(ga.same_shape(gb), "max_relative_error: shape mismatch: " + id);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double denom = std::max({std::abs(ga[i]), std::abs(gb[i]), floor});
      worst = std::max(worst, std::abs(ga[i] - gb[i]) / denom);
    }
  }
  return worst;
}

}  // namespace flower
