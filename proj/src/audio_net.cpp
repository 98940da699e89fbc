#include "pcsep/audio_net.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pcsep/errors.hpp"

namespace pcsep::audio {

std::size_t UNetConfig::width(std::size_t depth) const {
  if (depth == 0) return base_channels;
  const std::size_t shift = std::min<std::size_t>(depth - 1, 3);
  return base_channels << shift;
}

namespace {

ConvNorm2d make_conv_norm(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) {
  return ConvNorm2d{init_fan_in_uniform({cout, cin, k, k}, cin * k * k, rng), NormParams::identity(cout)};
}

Tensor conv_norm(const Tensor& x, ConvNorm2d& layer, int stride, int padding, ops::Mode mode) {
  Tensor y = ops::conv2d(x, layer.kernel, stride, padding);
  return ops::batch_norm(y, layer.norm.gamma, layer.norm.beta, layer.norm.state, mode);
}

}  // namespace

UNet::UNet(const UNetConfig& config, Rng& rng) : config_(config) {
  if (config.levels < 1 || config.K < 1 || config.base_channels < 1 || config.in_channels < 1) {
    throw ConfigError("unet needs levels, K, base_channels and in_channels >= 1");
  }
  const std::size_t L = config.levels;
  for (std::size_t i = 1; i <= L; ++i) {
    const std::size_t cin = i == 1 ? config.in_channels : config.width(i - 1);
    encoder_.push_back(make_conv_norm(cin, config.width(i), 4, rng));
  }
  decoder_.resize(L);
  for (std::size_t i = L; i-- > 0;) {
    // d_{i+1} upsampled, concatenated with e_i (e_0 is the input) -> d_i.
    const std::size_t from = config.width(i + 1);
    const std::size_t skip = i == 0 ? config.in_channels : config.width(i);
    decoder_[i] = make_conv_norm(from + skip, config.width(i), 3, rng);
  }
  out_kernel_ = init_fan_in_uniform({config.K, config.width(0), 1, 1}, config.width(0), rng);
  out_bias_ = Tensor::zeros({config.K}, true);
}

Tensor UNet::forward(const Tensor& x, ops::Mode mode) {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw DimensionError("unet expects [B," + std::to_string(config_.in_channels) + ",H,W], got " +
                         shape_str(x.shape()));
  }
  const std::size_t L = config_.levels;
  const std::size_t unit = std::size_t{1} << L;
  if (x.dim(2) % unit != 0 || x.dim(3) % unit != 0) {
    throw DimensionError("unet input " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " is not divisible by 2^" + std::to_string(L));
  }
  skip_trace_.clear();
  std::vector<Tensor> enc{x};
  for (std::size_t i = 0; i < L; ++i) {
    enc.push_back(ops::leaky_relu(conv_norm(enc.back(), encoder_[i], 2, 1, mode), config_.leaky_slope));
  }
  Tensor d = enc[L];
  for (std::size_t i = L; i-- > 0;) {
    Tensor up = ops::upsample_nearest(d, 2);
    const Tensor parts[] = {up, enc[i]};
    skip_trace_.push_back(i);
    d = ops::relu(conv_norm(ops::concat_channels(parts), decoder_[i], 1, 1, mode));
  }
  return ops::conv2d(d, out_kernel_, 1, 0, out_bias_);
}

void UNet::collect(std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string p = "audio.enc" + std::to_string(i + 1);
    params.push_back({p + ".conv", encoder_[i].kernel, ParamGroup::rest});
    encoder_[i].norm.collect(p + ".bn", ParamGroup::rest, params, buffers);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::string p = "audio.dec" + std::to_string(i);
    params.push_back({p + ".conv", decoder_[i].kernel, ParamGroup::rest});
    decoder_[i].norm.collect(p + ".bn", ParamGroup::rest, params, buffers);
  }
  params.push_back({"audio.out.conv", out_kernel_, ParamGroup::rest});
  params.push_back({"audio.out.bias", out_bias_, ParamGroup::rest});
}

Tensor log_magnitude(const Tensor& magnitude, double floor) {
  std::vector<double> out(magnitude.numel());
  auto in = magnitude.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (in[i] < 0.0) throw ContractError("log_magnitude: negative magnitude");
    out[i] = std::log(in[i] + floor);
  }
  return Tensor(magnitude.shape(), std::move(out));
}

}  // namespace pcsep::audio
