#include "pcsep/evaluate.hpp"

#include "pcsep/errors.hpp"

namespace pcsep::eval {

namespace {

constexpr std::uint64_t kTestStream = 0x7e57;

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::depth: return "depth";
    case Method::rgb_depth: return "rgb-depth";
    case Method::label: return "label";
    case Method::ibm: return "ibm";
    case Method::ones: return "ones";
  }
  return "ibm";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::depth, Method::rgb_depth, Method::label, Method::ibm, Method::ones}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "' (expected depth, rgb-depth, label, ibm or ones)");
}

std::optional<train::Conditioning> required_conditioning(Method m) {
  switch (m) {
    case Method::depth: return train::Conditioning::depth;
    case Method::rgb_depth: return train::Conditioning::rgb_depth;
    case Method::label: return train::Conditioning::label;
    default: return std::nullopt;
  }
}

std::vector<data::TrainingItem> test_items(const data::Dataset& test_set, const EvalOptions& options) {
  const data::SampleOptions sample{options.N, options.F, false};
  std::vector<data::TrainingItem> items;
  for (std::size_t i = 0; i < options.items; ++i) {
    Rng rng = derive_stream(options.seed, {kTestStream, i});
    items.push_back(data::sample_training_item(test_set, rng, sample));
  }
  return items;
}

std::vector<Grid> item_masks(Method method, train::Model* model, const data::TrainingItem& item) {
  std::vector<Grid> masks;
  const std::size_t n = item.instruments.size();
  if (method == Method::ibm) {
    for (const auto& m : item.ibm) masks.push_back(m.values);
    return masks;
  }
  if (method == Method::ones) {
    masks.assign(n, Grid(dsp::kFrames, dsp::kWarpBins, 1.0));
    return masks;
  }
  if (!model) throw ContractError(std::string(method_name(method)) + " evaluation needs a checkpoint");
  if (model->config().conditioning != *required_conditioning(method)) {
    throw ConfigError("checkpoint was trained with " +
                      std::string(train::conditioning_name(model->config().conditioning)) +
                      " conditioning, cannot evaluate method " + std::string(method_name(method)));
  }
  const Tensor out = model->forward(std::span(&item, 1), ops::Mode::eval);
  for (std::size_t r = 0; r < n; ++r) masks.push_back(fusion::mask_from_tensor(out, r).values);
  return masks;
}

std::vector<metrics::MetricReport> evaluate(Method method, train::Model* model,
                                            std::span<const data::TrainingItem> items) {
  std::vector<metrics::MetricReport> rows;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    std::vector<std::vector<double>> refs;
    for (const auto& s : item.snippets) refs.push_back(s.samples);
    const auto masks = item_masks(method, model, item);
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const dsp::AudioClip estimate = dsp::separate(item.mixture, masks[r]);
      metrics::MetricReport row = metrics::evaluate_estimate(estimate.samples, refs, r);
      row.item_id = "item" + std::to_string(i);
      row.instrument = std::string(fusion::instrument_name(item.instruments[r]));
      row.method = std::string(method_name(method));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace pcsep::eval
