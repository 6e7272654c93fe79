#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "camp/tensor.hpp"

namespace camp {

/// Central-difference gradient of a scalar function with respect to `x`.
///
/// Each coordinate of `x` is perturbed in place by +h and -h and restored
/// afterwards, so `x` may be a live parameter the function reads through a
/// model. Must be called with no tape active.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x, T h) {
  if (!(h > T(0))) throw ConfigError("finite_diff_grad: step must be positive");
  auto grad = Tensor<T>::zeros(x.shape());
  auto xd = x.data_mut();
  auto gd = grad.data_mut();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const T saved = xd[i];
    xd[i] = saved + h;
    const T plus = f(x);
    xd[i] = saved - h;
    const T minus = f(x);
    xd[i] = saved;
    gd[i] = (plus - minus) / (T(2) * h);
  }
  return grad;
}

struct GradComparison {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t count = 0;
};

/// Relative error per coordinate is |a - n| / max(|a|, |n|, floor); `floor`
/// keeps coordinates whose true gradient is ~0 from dominating.
template <typename T>
GradComparison compare_gradients(std::span<const T> analytic, std::span<const T> numeric,
                                 double floor) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("compare_gradients: size mismatch");
  }
  GradComparison out;
  out.count = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    const double n = static_cast<double>(numeric[i]);
    const double abs_err = std::abs(a - n);
    const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = i;
    }
  }
  return out;
}

}  // namespace camp
