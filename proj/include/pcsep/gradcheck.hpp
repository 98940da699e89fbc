#pragma once

#include <functional>
#include <span>
#include <string>

#include "pcsep/tensor.hpp"

namespace pcsep {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst;  // "<input index>[<flat index>]: analytic vs numeric"
};

struct GradCheckOptions {
  double step = 1e-5;
  // Per-entry error is |a - n| / max(|a|, |n|, floor_fraction * max|a|).
  double floor_fraction = 1e-3;
  // 0 checks every entry; otherwise an evenly strided subset per input.
  std::size_t max_entries_per_input = 0;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences. `loss_fn` recomputes the loss from the current values of
// `inputs`, which must be requires_grad leaves; their values are perturbed in
// place and restored.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::span<Tensor> inputs,
                                const GradCheckOptions& options = {});

}  // namespace pcsep
