#pragma once

#include <cmath>
#include <vector>

#include "pcsep/random.hpp"
#include "pcsep/tensor.hpp"

namespace testing {

inline pcsep::Tensor random_tensor(pcsep::Shape shape, pcsep::Rng& rng, bool requires_grad = false,
                                   double stddev = 1.0) {
  pcsep::Tensor t = pcsep::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_values()) v = pcsep::normal(rng, 0.0, stddev);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<double> to_vector(const pcsep::Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace testing
