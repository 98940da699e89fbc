#pragma once

#include <cstddef>
#include <vector>

namespace pcsep {

// Row-major 2-D array of doubles (time-frequency maps, masks).
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace pcsep
