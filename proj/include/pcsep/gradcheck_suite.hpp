#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pcsep {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;
  std::string worst;

  bool passed() const { return max_rel_error < tolerance; }
};

// Finite-difference checks of every differentiable op (tolerance 1e-4) and,
// when networks is set, of the full micro-config vision net and U-Net
// (tolerance 1e-3).
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, bool networks = true);

}  // namespace pcsep
