#pragma once

#include <span>
#include <vector>

#include "pcsep/tensor.hpp"

// Differentiable dense operations. Every op records itself on the thread's
// active GradTape when any input is tracked.
namespace pcsep::ops {

// x: [B,C,H,W], kernel: [C',C,kh,kw], optional bias: [C'] -> [B,C',H',W'],
// H' = floor((H + 2*padding - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding, const Tensor& bias = {});

// Adjoint of conv2d with the same kernel layout: x: [B,C',H,W] -> [B,C,H',W'],
// H' = (H - 1) * stride - 2 * padding + kh.
Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, int stride, int padding);

enum class Mode { train, eval };

struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}

  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Normalizes over every axis except axis 1. Train mode uses batch statistics
// and updates `state`; eval mode reads the running statistics only.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode);

enum class Activation { relu, leaky_relu, sigmoid };

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor sigmoid(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

// Non-overlapping window `factor` on [B,C,H,W]; ties route to the first maximum.
Tensor max_pool2d(const Tensor& x, int factor);
Tensor upsample_nearest(const Tensor& x, int factor);
// Concatenates [B,Ci,H,W] maps along axis 1.
Tensor concat_channels(std::span<const Tensor> inputs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// x: [R,K] viewed as R/group consecutive groups of `group` rows; returns the
// per-group column maximum [R/group, K]. Ties route to the lowest row.
Tensor group_max_rows(const Tensor& x, std::size_t group);

// Mean softmax cross-entropy of logits [R,C] against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace pcsep::ops
