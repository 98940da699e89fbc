#include "pcsep/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "pcsep/errors.hpp"

namespace pcsep::fusion {

namespace {

constexpr std::array<std::string_view, kInstrumentCount> kNames{"cello", "doublebass", "guitar", "saxophone",
                                                                "violin"};

}  // namespace

std::string_view instrument_name(Instrument instrument) { return kNames[static_cast<std::size_t>(instrument)]; }

std::optional<Instrument> parse_instrument(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Instrument>(i);
  }
  return std::nullopt;
}

const std::array<Instrument, kInstrumentCount>& all_instruments() {
  static const std::array<Instrument, kInstrumentCount> all{Instrument::cello, Instrument::doublebass,
                                                            Instrument::guitar, Instrument::saxophone,
                                                            Instrument::violin};
  return all;
}

Tensor one_hot(Instrument instrument) {
  Tensor h = Tensor::zeros({kInstrumentCount});
  h.mutable_values()[static_cast<std::size_t>(instrument)] = 1.0;
  return h;
}

Tensor one_hot_rows(std::span<const Instrument> instruments) {
  Tensor h = Tensor::zeros({instruments.size(), kInstrumentCount});
  auto values = h.mutable_values();
  for (std::size_t r = 0; r < instruments.size(); ++r) {
    values[r * kInstrumentCount + static_cast<std::size_t>(instruments[r])] = 1.0;
  }
  return h;
}

FusionParams FusionParams::init(std::size_t K) {
  return FusionParams{Tensor::full({K}, 1.0, true), Tensor::zeros({1}, true)};
}

void FusionParams::collect(std::vector<ParamRef>& params) {
  params.push_back({"fusion.alpha", alpha, ParamGroup::rest});
  params.push_back({"fusion.beta", beta, ParamGroup::rest});
}

Tensor fuse_logits(const Tensor& v, const Tensor& S, const FusionParams& params, std::size_t group) {
  if (v.rank() != 2 || S.rank() != 4) {
    throw DimensionError("fuse: expected v [R,K] and S [B,K,H,W], got " + shape_str(v.shape()) + " and " +
                         shape_str(S.shape()));
  }
  const std::size_t R = v.dim(0), K = v.dim(1);
  const std::size_t B = S.dim(0), H = S.dim(2), W = S.dim(3), HW = H * W;
  if (S.dim(1) != K) {
    throw DimensionError("fuse: v has " + std::to_string(K) + " channels, S has " + std::to_string(S.dim(1)));
  }
  if (group == 0 || R != B * group) throw DimensionError("fuse: row count does not match batch * group");
  if (params.alpha.numel() != K || params.beta.numel() != 1) {
    throw DimensionError("fuse: alpha must have K entries and beta one");
  }
  auto vv = v.values();
  auto sv = S.values();
  auto av = params.alpha.values();
  const double beta = params.beta.values()[0];
  std::vector<double> z(R * HW);
  for (std::size_t r = 0; r < R; ++r) {
    const double* s = sv.data() + (r / group) * K * HW;
    double* zr = z.data() + r * HW;
    std::fill(zr, zr + HW, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double w = av[k] * vv[r * K + k];
      const double* sk = s + k * HW;
      for (std::size_t i = 0; i < HW; ++i) zr[i] += w * sk[i];
    }
    for (std::size_t i = 0; i < HW; ++i) zr[i] += beta;
  }
  check_finite(z, "fuse");
  Tensor out({R, H, W}, std::move(z));
  const Tensor alpha = params.alpha, beta_t = params.beta;
  if (GradTape::should_record({&v, &S, &alpha, &beta_t})) {
    GradTape::active()->record(
        {v.id(), S.id(), alpha.id(), beta_t.id()}, out, [v, S, alpha, beta_t, out, group, R, K, HW](GradTape& tape) {
          auto gz = tape.grad(out);
          auto vv = v.values();
          auto sv = S.values();
          auto av = alpha.values();
          std::vector<double> gw(R * K, 0.0);  // d/d(alpha_k v_rk)
          for (std::size_t r = 0; r < R; ++r) {
            const double* s = sv.data() + (r / group) * K * HW;
            const double* g = gz.data() + r * HW;
            for (std::size_t k = 0; k < K; ++k) {
              const double* sk = s + k * HW;
              double acc = 0.0;
              for (std::size_t i = 0; i < HW; ++i) acc += g[i] * sk[i];
              gw[r * K + k] = acc;
            }
          }
          if (v.tracked()) {
            auto gv = tape.grad_buffer(v);
            for (std::size_t r = 0; r < R; ++r)
              for (std::size_t k = 0; k < K; ++k) gv[r * K + k] += av[k] * gw[r * K + k];
          }
          if (alpha.tracked()) {
            auto ga = tape.grad_buffer(alpha);
            for (std::size_t r = 0; r < R; ++r)
              for (std::size_t k = 0; k < K; ++k) ga[k] += vv[r * K + k] * gw[r * K + k];
          }
          if (beta_t.tracked()) {
            double acc = 0.0;
            for (double g : gz) acc += g;
            tape.grad_buffer(beta_t)[0] += acc;
          }
          if (S.tracked()) {
            auto gs = tape.grad_buffer(S);
            for (std::size_t r = 0; r < R; ++r) {
              double* gsb = gs.data() + (r / group) * K * HW;
              const double* g = gz.data() + r * HW;
              for (std::size_t k = 0; k < K; ++k) {
                const double w = av[k] * vv[r * K + k];
                double* gsk = gsb + k * HW;
                for (std::size_t i = 0; i < HW; ++i) gsk[i] += w * g[i];
              }
            }
          }
        });
  }
  return out;
}

Tensor fuse(const Tensor& v, const Tensor& S, const FusionParams& params, std::size_t group) {
  return ops::sigmoid(fuse_logits(v, S, params, group));
}

Mask mask_from_tensor(const Tensor& masks, std::size_t r, MaskKind kind) {
  if (masks.rank() != 3 || r >= masks.dim(0)) throw DimensionError("mask_from_tensor: bad row or rank");
  const std::size_t H = masks.dim(1), W = masks.dim(2);
  Mask m{Grid(H, W), kind};
  auto src = masks.values().subspan(r * H * W, H * W);
  std::copy(src.begin(), src.end(), m.values.values.begin());
  return m;
}

Mask ideal_binary_mask(std::span<const Grid> source_mags, std::size_t i) {
  if (source_mags.empty()) throw EmptyInputError("ideal_binary_mask: no sources");
  if (i >= source_mags.size()) throw ContractError("ideal_binary_mask: source index out of range");
  const Grid& target = source_mags[i];
  for (const Grid& g : source_mags) {
    if (!g.same_shape(target)) throw DimensionError("ideal_binary_mask: spectrogram shapes differ");
  }
  Mask m{Grid(target.rows, target.cols, 1.0), MaskKind::ibm};
  for (std::size_t b = 0; b < target.values.size(); ++b) {
    const double mine = std::abs(target.values[b]);
    for (const Grid& g : source_mags) {
      if (std::abs(g.values[b]) > mine) {
        m.values.values[b] = 0.0;
        break;
      }
    }
  }
  return m;
}

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

double bce_term(double p, double y) {
  const double q = clamp_probability(p);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

}  // namespace

Tensor bce_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw DimensionError("bce_loss: " + shape_str(predicted.shape()) + " vs " + shape_str(target.shape()));
  }
  const std::size_t n = predicted.numel();
  if (n == 0) throw EmptyInputError("bce_loss: empty mask");
  auto p = predicted.values();
  auto y = target.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += bce_term(p[i], y[i]);
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  if (GradTape::should_record({&predicted})) {
    GradTape::active()->record({predicted.id()}, out, [predicted, target, out, n](GradTape& tape) {
      const double g = tape.grad(out)[0] / static_cast<double>(n);
      auto p = predicted.values();
      auto y = target.values();
      auto gp = tape.grad_buffer(predicted);
      for (std::size_t i = 0; i < n; ++i) {
        if (p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp) continue;
        gp[i] += g * (-(y[i] / p[i]) + (1.0 - y[i]) / (1.0 - p[i]));
      }
    });
  }
  return out;
}

double bce_loss(const Mask& predicted, const Mask& target) {
  if (!predicted.values.same_shape(target.values)) throw DimensionError("bce_loss: mask shapes differ");
  const std::size_t n = predicted.values.values.size();
  if (n == 0) throw EmptyInputError("bce_loss: empty mask");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += bce_term(predicted.values.values[i], target.values.values[i]);
  return total / static_cast<double>(n);
}

}  // namespace pcsep::fusion
