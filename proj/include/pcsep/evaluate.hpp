#pragma once

#include <string_view>
#include <vector>

#include "pcsep/metrics.hpp"
#include "pcsep/trainer.hpp"

namespace pcsep::eval {

// ones: the all-ones mask, i.e. the mixture itself as the estimate.
enum class Method { depth, rgb_depth, label, ibm, ones };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
// The model conditioning a learned method needs; nullopt for ibm and ones.
std::optional<train::Conditioning> required_conditioning(Method m);

struct EvalOptions {
  std::size_t items = 20;
  std::size_t N = 2;
  std::size_t F = 1;
  std::uint64_t seed = 1;
};

// Fixed test mixtures: item i depends only on (seed, i). No augmentation.
std::vector<data::TrainingItem> test_items(const data::Dataset& test_set, const EvalOptions& options);

// Masks [N, kFrames, kWarpBins] for one item.
std::vector<Grid> item_masks(Method method, train::Model* model, const data::TrainingItem& item);

// One report row per (item, source). model may be null for ibm and ones.
std::vector<metrics::MetricReport> evaluate(Method method, train::Model* model,
                                            std::span<const data::TrainingItem> items);

}  // namespace pcsep::eval
