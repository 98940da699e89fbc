#include "pcsep/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "pcsep/errors.hpp"

namespace pcsep::ops {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatRM>;
using MutMap = Eigen::Map<MatRM>;

Tensor make_output(Shape shape, std::vector<double> values, const char* op) {
  check_finite(values, op);
  return Tensor(std::move(shape), std::move(values));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Geometry of a forward convolution from an input map [C,H,W] to [Co,Ho,Wo].
struct ConvGeom {
  std::size_t batch, in_c, in_h, in_w, out_c, kh, kw, out_h, out_w;
  int stride, padding;

  std::size_t col_rows() const { return in_c * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
  std::size_t in_size() const { return in_c * in_h * in_w; }
  std::size_t out_size() const { return out_c * out_h * out_w; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.padding + static_cast<long>(ki);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.padding + static_cast<long>(kj);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.in_w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* x) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.padding + static_cast<long>(ki);
          if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
          double* dst = x + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.padding + static_cast<long>(kj);
            if (iw >= 0 && iw < static_cast<long>(g.in_w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_kernel(const Tensor& x, const Tensor& kernel, std::size_t x_channels_axis_value, std::size_t kernel_axis,
                  const char* op) {
  if (kernel.dim(kernel_axis) != x_channels_axis_value) {
    throw DimensionError(std::string(op) + ": input channel axis 1 has " + std::to_string(x_channels_axis_value) +
                         " but kernel axis " + std::to_string(kernel_axis) + " has " +
                         std::to_string(kernel.dim(kernel_axis)) + " (input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ")");
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding, const Tensor& bias) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  check_kernel(x, kernel, x.dim(1), 1, "conv2d");
  ConvGeom g{};
  g.batch = x.dim(0);
  g.in_c = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_c = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  const long padded_h = static_cast<long>(g.in_h) + 2L * padding;
  const long padded_w = static_cast<long>(g.in_w) + 2L * padding;
  if (static_cast<long>(g.kh) > padded_h || static_cast<long>(g.kw) > padded_w) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " exceeds padded input axes 2,3 of " +
                         shape_str(x.shape()));
  }
  g.out_h = static_cast<std::size_t>((padded_h - static_cast<long>(g.kh)) / stride + 1);
  g.out_w = static_cast<std::size_t>((padded_w - static_cast<long>(g.kw)) / stride + 1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_c)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match output channels " +
                         std::to_string(g.out_c));
  }

  std::vector<double> out(g.batch * g.out_size());
  std::vector<double> col(g.col_rows() * g.col_cols());
  ConstMap w(kernel.values().data(), static_cast<long>(g.out_c), static_cast<long>(g.col_rows()));
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.values().data() + b * g.in_size(), g, col.data());
    ConstMap cm(col.data(), static_cast<long>(g.col_rows()), static_cast<long>(g.col_cols()));
    MutMap y(out.data() + b * g.out_size(), static_cast<long>(g.out_c), static_cast<long>(g.col_cols()));
    y.noalias() = w * cm;
    if (bias.defined()) {
      for (std::size_t o = 0; o < g.out_c; ++o) y.row(static_cast<long>(o)).array() += bias.values()[o];
    }
  }
  Tensor result = make_output({g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), "conv2d");
  if (GradTape::should_record({&x, &kernel, &bias})) {
    GradTape::active()->record(
        {x.id(), kernel.id(), bias.id()}, result, [x, kernel, bias, result, g](GradTape& tape) {
          auto gy = tape.grad(result);
          std::vector<double> col(g.col_rows() * g.col_cols());
          std::vector<double> dcol(x.tracked() ? col.size() : 0);
          ConstMap w(kernel.values().data(), static_cast<long>(g.out_c), static_cast<long>(g.col_rows()));
          for (std::size_t b = 0; b < g.batch; ++b) {
            ConstMap gyb(gy.data() + b * g.out_size(), static_cast<long>(g.out_c), static_cast<long>(g.col_cols()));
            if (kernel.tracked()) {
              im2col(x.values().data() + b * g.in_size(), g, col.data());
              ConstMap cm(col.data(), static_cast<long>(g.col_rows()), static_cast<long>(g.col_cols()));
              MutMap dw(tape.grad_buffer(kernel).data(), static_cast<long>(g.out_c), static_cast<long>(g.col_rows()));
              dw.noalias() += gyb * cm.transpose();
            }
            if (x.tracked()) {
              MutMap dc(dcol.data(), static_cast<long>(g.col_rows()), static_cast<long>(g.col_cols()));
              dc.noalias() = w.transpose() * gyb;
              col2im(dcol.data(), g, tape.grad_buffer(x).data() + b * g.in_size());
            }
            if (bias.tracked()) {
              auto db = tape.grad_buffer(bias);
              // Plain loop: Eigen's vectorized sum peels by address, which
              // would make the result depend on allocation alignment.
              const double* gp = gy.data() + b * g.out_size();
              for (std::size_t o = 0; o < g.out_c; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.col_cols(); ++i) acc += gp[o * g.col_cols() + i];
                db[o] += acc;
              }
            }
          }
        });
  }
  return result;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  require_rank(x, 4, "conv2d_transpose", "input");
  require_rank(kernel, 4, "conv2d_transpose", "kernel");
  if (stride < 1) throw ContractError("conv2d_transpose: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d_transpose: padding must be >= 0");
  check_kernel(x, kernel, x.dim(1), 0, "conv2d_transpose");
  // Geometry of the forward conv that maps the output back onto x.
  ConvGeom g{};
  g.batch = x.dim(0);
  g.out_c = x.dim(1);
  g.out_h = x.dim(2);
  g.out_w = x.dim(3);
  g.in_c = kernel.dim(1);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  const long h = (static_cast<long>(g.out_h) - 1) * stride - 2L * padding + static_cast<long>(g.kh);
  const long w_ = (static_cast<long>(g.out_w) - 1) * stride - 2L * padding + static_cast<long>(g.kw);
  if (h < 1 || w_ < 1) {
    throw DimensionError("conv2d_transpose: padding " + std::to_string(padding) + " leaves empty output axes 2,3 for " +
                         shape_str(x.shape()));
  }
  g.in_h = static_cast<std::size_t>(h);
  g.in_w = static_cast<std::size_t>(w_);

  std::vector<double> out(g.batch * g.in_size(), 0.0);
  std::vector<double> col(g.col_rows() * g.col_cols());
  ConstMap w(kernel.values().data(), static_cast<long>(g.out_c), static_cast<long>(g.col_rows()));
  for (std::size_t b = 0; b < g.batch; ++b) {
    ConstMap xb(x.values().data() + b * g.out_size(), static_cast<long>(g.out_c), static_cast<long>(g.col_cols()));
    MutMap cm(col.data(), static_cast<long>(g.col_rows()), static_cast<long>(g.col_cols()));
    cm.noalias() = w.transpose() * xb;
    col2im(col.data(), g, out.data() + b * g.in_size());
  }
  Tensor result = make_output({g.batch, g.in_c, g.in_h, g.in_w}, std::move(out), "conv2d_transpose");
  if (GradTape::should_record({&x, &kernel})) {
    GradTape::active()->record({x.id(), kernel.id()}, result, [x, kernel, result, g](GradTape& tape) {
      auto gy = tape.grad(result);
      std::vector<double> col(g.col_rows() * g.col_cols());
      ConstMap w(kernel.values().data(), static_cast<long>(g.out_c), static_cast<long>(g.col_rows()));
      for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(gy.data() + b * g.in_size(), g, col.data());
        ConstMap cm(col.data(), static_cast<long>(g.col_rows()), static_cast<long>(g.col_cols()));
        if (x.tracked()) {
          MutMap dx(tape.grad_buffer(x).data() + b * g.out_size(), static_cast<long>(g.out_c),
                    static_cast<long>(g.col_cols()));
          dx.noalias() += w * cm;
        }
        if (kernel.tracked()) {
          ConstMap xb(x.values().data() + b * g.out_size(), static_cast<long>(g.out_c),
                      static_cast<long>(g.col_cols()));
          MutMap dw(tape.grad_buffer(kernel).data(), static_cast<long>(g.out_c), static_cast<long>(g.col_rows()));
          dw.noalias() += xb * cm.transpose();
        }
      }
    });
  }
  return result;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  if (x.rank() < 2) throw DimensionError("batch_norm: input " + shape_str(x.shape()) + " has no channel axis 1");
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.size() != c || state.running_var.size() != c) {
    throw DimensionError("batch_norm: channel axis 1 of " + shape_str(x.shape()) + " does not match gamma " +
                         shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) + " / running stats " +
                         std::to_string(state.running_mean.size()));
  }
  const std::size_t inner = x.numel() / (n * c);
  const std::size_t count = n * inner;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xv.data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) s += p[j];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xv.data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) ss += (p[j] - m) * (p[j] - m);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * m;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        out[off + j] = gv[ch] * (xv[off + j] - mean[ch]) * inv_std[ch] + bv[ch];
      }
    }
  }
  Tensor result = make_output(x.shape(), std::move(out), "batch_norm");
  if (GradTape::should_record({&x, &gamma, &beta})) {
    GradTape::active()->record(
        {x.id(), gamma.id(), beta.id()}, result,
        [x, gamma, beta, result, mean, inv_std, n, c, inner, count, mode](GradTape& tape) {
          auto gy = tape.grad(result);
          const auto xv = x.values();
          const auto gv = gamma.values();
          for (std::size_t ch = 0; ch < c; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t off = (i * c + ch) * inner;
              for (std::size_t j = 0; j < inner; ++j) {
                const double xhat = (xv[off + j] - mean[ch]) * inv_std[ch];
                sum_dy += gy[off + j];
                sum_dy_xhat += gy[off + j] * xhat;
              }
            }
            if (gamma.tracked()) tape.grad_buffer(gamma)[ch] += sum_dy_xhat;
            if (beta.tracked()) tape.grad_buffer(beta)[ch] += sum_dy;
            if (!x.tracked()) continue;
            auto dx = tape.grad_buffer(x);
            const double k = gv[ch] * inv_std[ch];
            if (mode == Mode::eval) {
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t off = (i * c + ch) * inner;
                for (std::size_t j = 0; j < inner; ++j) dx[off + j] += k * gy[off + j];
              }
              continue;
            }
            const double inv_count = 1.0 / static_cast<double>(count);
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t off = (i * c + ch) * inner;
              for (std::size_t j = 0; j < inner; ++j) {
                const double xhat = (xv[off + j] - mean[ch]) * inv_std[ch];
                dx[off + j] += k * (gy[off + j] - inv_count * sum_dy - xhat * inv_count * sum_dy_xhat);
              }
            }
          }
        });
  }
  return result;
}

namespace {

template <typename Fwd, typename Deriv>
Tensor elementwise(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor result = make_output(x.shape(), std::move(out), name);
  if (GradTape::should_record({&x})) {
    GradTape::active()->record({x.id()}, result, [x, result, deriv](GradTape& tape) {
      auto gy = tape.grad(result);
      auto dx = tape.grad_buffer(x);
      const auto xv = x.values();
      const auto yv = result.values();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gy[i] * deriv(xv[i], yv[i]);
    });
  }
  return result;
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor relu(const Tensor& x) {
  return elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return elementwise(
      x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return elementwise(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::leaky_relu:
      return leaky_relu(x, 0.2);
    case Activation::sigmoid:
      return sigmoid(x);
  }
  throw ContractError("unknown activation kind");
}

Tensor max_pool2d(const Tensor& x, int factor) {
  require_rank(x, 4, "max_pool2d", "input");
  if (factor < 1) throw ContractError("max_pool2d: factor must be >= 1");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % f != 0 || w % f != 0) {
    throw DimensionError("max_pool2d: axes 2,3 of " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(factor));
  }
  const std::size_t oh = h / f, ow = w / f;
  const auto xv = x.values();
  std::vector<double> out(b * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = plane * h * w + (i * f) * w + j * f;
        for (std::size_t di = 0; di < f; ++di) {
          for (std::size_t dj = 0; dj < f; ++dj) {
            const std::size_t idx = plane * h * w + (i * f + di) * w + (j * f + dj);
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + i) * ow + j;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  Tensor result = make_output({b, c, oh, ow}, std::move(out), "max_pool2d");
  if (GradTape::should_record({&x})) {
    GradTape::active()->record({x.id()}, result, [x, result, argmax = std::move(argmax)](GradTape& tape) {
      auto gy = tape.grad(result);
      auto dx = tape.grad_buffer(x);
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += gy[o];
    });
  }
  return result;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 4, "upsample_nearest", "input");
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * f, ow = w * f;
  const auto xv = x.values();
  std::vector<double> out(b * c * oh * ow);
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out[(plane * oh + i) * ow + j] = xv[(plane * h + i / f) * w + j / f];
      }
    }
  }
  Tensor result = make_output({b, c, oh, ow}, std::move(out), "upsample_nearest");
  if (GradTape::should_record({&x})) {
    GradTape::active()->record({x.id()}, result, [x, result, b, c, h, w, f](GradTape& tape) {
      auto gy = tape.grad(result);
      auto dx = tape.grad_buffer(x);
      const std::size_t oh = h * f, ow = w * f;
      for (std::size_t plane = 0; plane < b * c; ++plane) {
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            dx[(plane * h + i / f) * w + j / f] += gy[(plane * oh + i) * ow + j];
          }
        }
      }
    });
  }
  return result;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw EmptyInputError("concat_channels: no inputs");
  const Shape& ref = inputs.front().shape();
  if (ref.size() < 2) throw DimensionError("concat_channels: inputs need a channel axis 1");
  std::size_t total_c = 0;
  for (const Tensor& t : inputs) {
    const Shape& s = t.shape();
    if (s.size() != ref.size()) {
      throw DimensionError("concat_channels: rank mismatch " + shape_str(s) + " vs " + shape_str(ref));
    }
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != 1 && s[a] != ref[a]) {
        throw DimensionError("concat_channels: axis " + std::to_string(a) + " differs: " + shape_str(s) + " vs " +
                             shape_str(ref));
      }
    }
    total_c += s[1];
  }
  const std::size_t batch = ref[0];
  const std::size_t inner = shape_numel(ref) / (ref[0] * ref[1]);
  Shape out_shape = ref;
  out_shape[1] = total_c;
  std::vector<double> out(batch * total_c * inner);
  std::vector<std::size_t> offsets;
  std::size_t c_off = 0;
  for (const Tensor& t : inputs) {
    offsets.push_back(c_off);
    const std::size_t ci = t.dim(1);
    const auto v = t.values();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(v.data() + b * ci * inner, ci * inner, out.data() + (b * total_c + c_off) * inner);
    }
    c_off += ci;
  }
  Tensor result = make_output(std::move(out_shape), std::move(out), "concat_channels");
  if (GradTape::should_record(inputs)) {
    std::vector<Tensor> ins(inputs.begin(), inputs.end());
    std::vector<const TensorNode*> ids;
    for (const Tensor& t : ins) ids.push_back(t.id());
    GradTape::active()->record(
        std::move(ids), result, [ins, result, offsets, batch, total_c, inner](GradTape& tape) {
          auto gy = tape.grad(result);
          for (std::size_t k = 0; k < ins.size(); ++k) {
            if (!ins[k].tracked()) continue;
            const std::size_t ci = ins[k].dim(1);
            auto dx = tape.grad_buffer(ins[k]);
            for (std::size_t b = 0; b < batch; ++b) {
              const double* src = gy.data() + (b * total_c + offsets[k]) * inner;
              double* dst = dx.data() + b * ci * inner;
              for (std::size_t i = 0; i < ci * inner; ++i) dst[i] += src[i];
            }
          }
        });
  }
  return result;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor result = make_output(a.shape(), std::move(out), "add");
  if (GradTape::should_record({&a, &b})) {
    GradTape::active()->record({a.id(), b.id()}, result, [a, b, result](GradTape& tape) {
      auto gy = tape.grad(result);
      if (a.tracked()) add_into(tape.grad_buffer(a), gy);
      if (b.tracked()) add_into(tape.grad_buffer(b), gy);
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor result = make_output(a.shape(), std::move(out), "mul");
  if (GradTape::should_record({&a, &b})) {
    GradTape::active()->record({a.id(), b.id()}, result, [a, b, result](GradTape& tape) {
      auto gy = tape.grad(result);
      if (a.tracked()) {
        auto da = tape.grad_buffer(a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += gy[i] * b.values()[i];
      }
      if (b.tracked()) {
        auto db = tape.grad_buffer(b);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += gy[i] * a.values()[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  Tensor result = make_output(a.shape(), std::move(out), "scale");
  if (GradTape::should_record({&a})) {
    GradTape::active()->record({a.id()}, result, [a, result, factor](GradTape& tape) {
      auto gy = tape.grad(result);
      auto da = tape.grad_buffer(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += gy[i] * factor;
    });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor result = make_output({1}, {s}, "sum");
  if (GradTape::should_record({&a})) {
    GradTape::active()->record({a.id()}, result, [a, result](GradTape& tape) {
      const double g = tape.grad(result)[0];
      for (double& d : tape.grad_buffer(a)) d += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor result = make_output(std::move(shape), std::move(out), "reshape");
  if (GradTape::should_record({&a})) {
    GradTape::active()->record({a.id()}, result, [a, result](GradTape& tape) {
      add_into(tape.grad_buffer(a), tape.grad(result));
    });
  }
  return result;
}

Tensor group_max_rows(const Tensor& x, std::size_t group) {
  require_rank(x, 2, "group_max_rows", "input");
  const std::size_t rows = x.dim(0), k = x.dim(1);
  if (group == 0 || rows % group != 0) {
    throw DimensionError("group_max_rows: axis 0 of " + shape_str(x.shape()) + " not divisible into groups of " +
                         std::to_string(group));
  }
  const std::size_t groups = rows / group;
  const auto xv = x.values();
  std::vector<double> out(groups * k);
  std::vector<std::size_t> argmax(groups * k);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t best = g * group * k + j;
      for (std::size_t r = 1; r < group; ++r) {
        const std::size_t idx = (g * group + r) * k + j;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[g * k + j] = xv[best];
      argmax[g * k + j] = best;
    }
  }
  Tensor result = make_output({groups, k}, std::move(out), "group_max_rows");
  if (GradTape::should_record({&x})) {
    GradTape::active()->record({x.id()}, result, [x, result, argmax = std::move(argmax)](GradTape& tape) {
      auto gy = tape.grad(result);
      auto dx = tape.grad_buffer(x);
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += gy[o];
    });
  }
  return result;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for axis 0 of " +
                         shape_str(logits.shape()));
  }
  const auto lv = logits.values();
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) throw ContractError("softmax_cross_entropy: label out of range");
    const double* row = lv.data() + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - mx) / z;
    loss -= (row[labels[r]] - mx) - std::log(z);
  }
  loss /= static_cast<double>(rows);
  Tensor result = make_output({1}, {loss}, "softmax_cross_entropy");
  if (GradTape::should_record({&logits})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    GradTape::active()->record({logits.id()}, result,
                               [logits, result, probs = std::move(probs), lab, rows, classes](GradTape& tape) {
                                 const double g = tape.grad(result)[0] / static_cast<double>(rows);
                                 auto dl = tape.grad_buffer(logits);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < classes; ++c) {
                                     const double target = c == lab[r] ? 1.0 : 0.0;
                                     dl[r * classes + c] += g * (probs[r * classes + c] - target);
                                   }
                                 }
                               });
  }
  return result;
}

}  // namespace pcsep::ops
