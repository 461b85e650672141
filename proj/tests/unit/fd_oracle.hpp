#pragma once

// Central finite differences over leaf tensors. Test-only: it evaluates the
// forward graph repeatedly and never looks at the reverse-mode sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "loopalign/tensor.hpp"

namespace loopalign::testing {

inline std::vector<double> central_difference(const std::function<double()>& f, const Tensor& leaf,
                                              double h = 1e-4) {
  auto values = leaf.mutable_values();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f();
    values[i] = saved - h;
    const double down = f();
    values[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// |a - b|_2 / max(|a|_2, |b|_2, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace loopalign::testing
