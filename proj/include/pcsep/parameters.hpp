#pragma once

#include <string>
#include <vector>

#include "pcsep/ops.hpp"
#include "pcsep/random.hpp"
#include "pcsep/tensor.hpp"

namespace pcsep {

// Learning-rate group of a parameter.
enum class ParamGroup { vision, rest };

struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

// Non-learned state that still belongs in a checkpoint (running statistics).
struct BufferRef {
  std::string name;
  std::vector<double>* values;
};

// Weights drawn from U(-b, b) with b = sqrt(6 / fan_in).
Tensor init_fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// Learnable affine pair of a batch norm plus its running statistics.
struct NormParams {
  Tensor gamma;
  Tensor beta;
  ops::BatchNormState state;

  static NormParams identity(std::size_t channels);
  void collect(const std::string& prefix, ParamGroup group, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers);
};

}  // namespace pcsep
