#include "pcsep/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "pcsep/errors.hpp"

namespace pcsep {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::span<Tensor> inputs,
                                const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (const Tensor& in : inputs) {
      auto g = tape.grad(in);
      analytic.emplace_back(in.numel(), 0.0);
      std::copy(g.begin(), g.end(), analytic.back().begin());
    }
  }
  double scale = 0.0;
  for (const auto& g : analytic) {
    for (double v : g) scale = std::max(scale, std::abs(v));
  }
  const double floor = std::max(options.floor_fraction * scale, 1e-300);

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& in = inputs[k];
    auto values = in.mutable_values();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_entries_per_input > 0 && n > options.max_entries_per_input) {
      stride = (n + options.max_entries_per_input - 1) / options.max_entries_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = loss_fn().item();
      values[i] = saved - options.step;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          std::ostringstream os;
          os << k << '[' << i << "]: " << a << " vs " << numeric;
          result.worst = os.str();
        }
      }
    }
  }
  return result;
}

}  // namespace pcsep
