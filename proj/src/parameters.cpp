#include "pcsep/parameters.hpp"

#include <cmath>

namespace pcsep {

Tensor init_fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_values()) v = uniform(rng, -bound, bound);
  return t;
}

NormParams NormParams::identity(std::size_t channels) {
  return NormParams{Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true),
                    ops::BatchNormState(channels)};
}

void NormParams::collect(const std::string& prefix, ParamGroup group, std::vector<ParamRef>& params,
                         std::vector<BufferRef>& buffers) {
  params.push_back({prefix + ".gamma", gamma, group});
  params.push_back({prefix + ".beta", beta, group});
  buffers.push_back({prefix + ".running_mean", &state.running_mean});
  buffers.push_back({prefix + ".running_var", &state.running_var});
}

}  // namespace pcsep
