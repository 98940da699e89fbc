#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcsep/grid.hpp"
#include "pcsep/parameters.hpp"

namespace pcsep::fusion {

// Fixed label order of the conditioning one-hot vector.
enum class Instrument { cello, doublebass, guitar, saxophone, violin };
inline constexpr std::size_t kInstrumentCount = 5;

std::string_view instrument_name(Instrument instrument);
std::optional<Instrument> parse_instrument(std::string_view name);
const std::array<Instrument, kInstrumentCount>& all_instruments();

// One-hot h of length 5.
Tensor one_hot(Instrument instrument);
// Rows one_hot(instruments[r]): [R, 5].
Tensor one_hot_rows(std::span<const Instrument> instruments);

struct FusionParams {
  Tensor alpha;  // [K]
  Tensor beta;   // [1]

  // alpha = 1, beta = 0.
  static FusionParams init(std::size_t K);
  void collect(std::vector<ParamRef>& params);
};

// z[r] = sum_k alpha_k v[r,k] S[r / group, k] + beta.
// v: [R,K], S: [B,K,H,W] with R = B * group -> [R,H,W].
Tensor fuse_logits(const Tensor& v, const Tensor& S, const FusionParams& params, std::size_t group = 1);
// sigmoid(fuse_logits(...)).
Tensor fuse(const Tensor& v, const Tensor& S, const FusionParams& params, std::size_t group = 1);

enum class MaskKind { predicted, ibm };

struct Mask {
  Grid values;
  MaskKind kind = MaskKind::predicted;
};

// Row r of a [R,H,W] mask tensor.
Mask mask_from_tensor(const Tensor& masks, std::size_t r, MaskKind kind = MaskKind::predicted);

// 1 where |S_i| >= |S_n| for every n, else 0. Ties mark every tied source.
Mask ideal_binary_mask(std::span<const Grid> source_mags, std::size_t i);

inline constexpr double kProbabilityClamp = 1e-7;

// Mean over bins of -[y log p + (1-y) log(1-p)], p clamped to
// [1e-7, 1 - 1e-7]. Gradient is zero where the clamp is active.
Tensor bce_loss(const Tensor& predicted, const Tensor& target);
double bce_loss(const Mask& predicted, const Mask& target);

}  // namespace pcsep::fusion
