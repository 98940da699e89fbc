#pragma once

#include <vector>

#include "pcsep/parameters.hpp"

namespace pcsep::audio {

// Channel width at encoder depth i (1-based) is min(base * 2^(i-1), 8 * base).
struct UNetConfig {
  std::size_t levels = 7;
  std::size_t K = 16;
  std::size_t base_channels = 8;
  std::size_t in_channels = 1;
  double leaky_slope = 0.2;

  std::size_t width(std::size_t depth) const;
};

struct ConvNorm2d {
  Tensor kernel;  // [C', C, kh, kw]
  NormParams norm;
};

// Encoder: conv 4x4 stride 2 padding 1, batch norm, leaky relu.
// Decoder: nearest upsample x2, concat with the encoder map one level up
// (the input itself at the top), conv 3x3 padding 1, batch norm, relu.
// A final 1x1 conv with bias maps to K channels; no output activation.
class UNet {
 public:
  UNet(const UNetConfig& config, Rng& rng);

  const UNetConfig& config() const { return config_; }

  // x: [B, in_channels, H, W] -> S: [B, K, H, W]. H and W must be divisible
  // by 2^levels.
  Tensor forward(const Tensor& x, ops::Mode mode);

  // Encoder index concatenated by each decoder step of the last forward, in
  // decoder order (0 is the network input).
  const std::vector<std::size_t>& skip_trace() const { return skip_trace_; }

  void collect(std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

  std::vector<ConvNorm2d>& encoder() { return encoder_; }
  std::vector<ConvNorm2d>& decoder() { return decoder_; }
  Tensor& out_kernel() { return out_kernel_; }
  Tensor& out_bias() { return out_bias_; }

 private:
  UNetConfig config_;
  std::vector<ConvNorm2d> encoder_;  // encoder_[i] produces depth i+1
  std::vector<ConvNorm2d> decoder_;  // decoder_[i] produces depth i
  Tensor out_kernel_;
  Tensor out_bias_;
  std::vector<std::size_t> skip_trace_;
};

// log(magnitude + floor), the network's input scaling.
Tensor log_magnitude(const Tensor& magnitude, double floor = 1e-3);

}  // namespace pcsep::audio
