#include "pcsep/trainer.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>

#include "pcsep/errors.hpp"
#include "pcsep/log.hpp"

namespace pcsep::train {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7a11;
constexpr std::uint64_t kValidationStream = 0x7a1d;

}  // namespace

std::string_view conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::depth: return "depth";
    case Conditioning::rgb_depth: return "rgb-depth";
    case Conditioning::label: return "label";
  }
  return "depth";
}

Conditioning parse_conditioning(std::string_view name) {
  if (name == "depth") return Conditioning::depth;
  if (name == "rgb-depth") return Conditioning::rgb_depth;
  if (name == "label") return Conditioning::label;
  throw ConfigError("unknown conditioning '" + std::string(name) + "' (expected depth, rgb-depth or label)");
}

void TrainConfig::validate() {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(iterations, "iterations");
  positive(batch_size, "batch_size");
  positive(N, "N");
  positive(F, "F");
  positive(K, "K");
  positive(vision_base_channels, "vision_base_channels");
  positive(unet_base_channels, "unet_base_channels");
  positive(unet_levels, "unet_levels");
  positive(validation_every, "validation_every");
  positive(validation_batches, "validation_batches");
  positive(checkpoint_every, "checkpoint_every");
  if (!(lr_vision > 0.0) || !(lr_rest > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(voxel_size > 0.0)) throw ConfigError("voxel_size must be positive");
  if ((std::size_t{1} << unet_levels) > dsp::kFrames) throw ConfigError("unet_levels too deep for a 256x256 input");
  if (conditioning == Conditioning::label) K = fusion::kInstrumentCount;
}

Model::Model(const TrainConfig& config) : config_(config) {
  config_.validate();
  Rng rng = derive_stream(config_.seed, {kInitStream});
  if (config_.conditioning != Conditioning::label) {
    vision::VisionConfig vc;
    vc.base_channels = config_.vision_base_channels;
    vc.K = config_.K;
    vc.voxel_size = config_.voxel_size;
    vc.feature_source =
        config_.conditioning == Conditioning::rgb_depth ? sparse::FeatureSource::rgb : sparse::FeatureSource::depth;
    vision_ = std::make_unique<vision::VisionNet>(vc, rng);
  }
  audio::UNetConfig uc;
  uc.levels = config_.unet_levels;
  uc.K = config_.K;
  uc.base_channels = config_.unet_base_channels;
  unet_ = std::make_unique<audio::UNet>(uc, rng);
  fusion_ = fusion::FusionParams::init(config_.K);
}

Tensor Model::conditioning(std::span<const data::TrainingItem> items, ops::Mode mode) {
  if (!vision_) {
    std::vector<fusion::Instrument> labels;
    for (const auto& item : items) labels.insert(labels.end(), item.instruments.begin(), item.instruments.end());
    return fusion::one_hot_rows(labels);
  }
  std::vector<sparse::PointCloudFrame> frames;
  for (const auto& item : items) {
    for (const auto& source_frames : item.frames) {
      if (source_frames.size() != config_.F) throw DimensionError("item carries a different frame count than F");
      frames.insert(frames.end(), source_frames.begin(), source_frames.end());
    }
  }
  const auto& vc = vision_->config();
  sparse::SparseTensor3 voxels = sparse::voxelize_batch(frames, vc.voxel_size, vc.feature_source);
  return vision_->encode_videos(voxels, config_.F, mode).v;
}

Tensor Model::forward(std::span<const data::TrainingItem> items, ops::Mode mode) {
  if (items.empty()) throw EmptyInputError("model forward: empty batch");
  for (const auto& item : items) {
    if (item.instruments.size() != config_.N) throw DimensionError("item source count differs from N");
  }
  Tensor v = conditioning(items, mode);
  Tensor S = unet_->forward(mixture_input(items), mode);
  return fusion::fuse(v, S, fusion_, config_.N);
}

Tensor Model::visual_conditioning(std::span<const sparse::PointCloudFrame> frames, ops::Mode mode) {
  if (!vision_) throw ConfigError("label-conditioned model has no vision branch");
  if (frames.empty()) throw EmptyInputError("no frames to condition on");
  const auto& vc = vision_->config();
  return vision_->encode_videos(sparse::voxelize_batch(frames, vc.voxel_size, vc.feature_source), frames.size(), mode)
      .v;
}

Tensor Model::masks_for(const Grid& mixture_magnitude, const Tensor& v, ops::Mode mode) {
  if (mixture_magnitude.rows != dsp::kFrames || mixture_magnitude.cols != dsp::kWarpBins) {
    throw DimensionError("mixture magnitude must be " + std::to_string(dsp::kFrames) + "x" +
                         std::to_string(dsp::kWarpBins));
  }
  Tensor x = audio::log_magnitude(Tensor({1, 1, dsp::kFrames, dsp::kWarpBins}, mixture_magnitude.values));
  return fusion::fuse(v, unet_->forward(x, mode), fusion_, v.dim(0));
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> p;
  std::vector<BufferRef> b;
  if (vision_) vision_->collect(p, b);
  unet_->collect(p, b);
  fusion_.collect(p);
  return p;
}

std::vector<BufferRef> Model::buffers() {
  std::vector<ParamRef> p;
  std::vector<BufferRef> b;
  if (vision_) vision_->collect(p, b);
  unet_->collect(p, b);
  return b;
}

void Model::save(Checkpoint& ckpt) {
  for (auto& p : params()) {
    std::vector<std::uint64_t> shape(p.tensor.shape().begin(), p.tensor.shape().end());
    ckpt.put("param/" + p.name, shape, std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()));
  }
  for (auto& b : buffers()) ckpt.put("buffer/" + b.name, {b.values->size()}, *b.values);
}

void Model::load(const Checkpoint& ckpt) {
  for (auto& p : params()) {
    const std::string key = "param/" + p.name;
    if (!ckpt.contains(key)) throw DataError("checkpoint lacks " + key);
    const NamedArray& a = ckpt.get(key);
    if (!std::equal(a.shape.begin(), a.shape.end(), p.tensor.shape().begin(), p.tensor.shape().end())) {
      throw DataError("checkpoint array " + key + " has shape mismatch");
    }
    std::copy(a.values.begin(), a.values.end(), p.tensor.mutable_values().begin());
  }
  for (auto& b : buffers()) {
    const std::string key = "buffer/" + b.name;
    if (!ckpt.contains(key)) throw DataError("checkpoint lacks " + key);
    const NamedArray& a = ckpt.get(key);
    if (a.values.size() != b.values->size()) throw DataError("checkpoint array " + key + " has size mismatch");
    *b.values = a.values;
  }
}

Tensor ibm_targets(std::span<const data::TrainingItem> items) {
  const std::size_t plane = dsp::kFrames * dsp::kWarpBins;
  std::vector<double> values;
  std::size_t rows = 0;
  for (const auto& item : items) {
    for (const auto& m : item.ibm) {
      if (m.values.values.size() != plane) throw DimensionError("ibm target of unexpected size");
      values.insert(values.end(), m.values.values.begin(), m.values.values.end());
      ++rows;
    }
  }
  return Tensor({rows, dsp::kFrames, dsp::kWarpBins}, std::move(values));
}

Tensor mixture_input(std::span<const data::TrainingItem> items) {
  const std::size_t plane = dsp::kFrames * dsp::kWarpBins;
  std::vector<double> values;
  values.reserve(items.size() * plane);
  for (const auto& item : items) {
    if (item.mixture_magnitude.values.size() != plane) throw DimensionError("mixture magnitude of unexpected size");
    values.insert(values.end(), item.mixture_magnitude.values.begin(), item.mixture_magnitude.values.end());
  }
  return audio::log_magnitude(Tensor({items.size(), 1, dsp::kFrames, dsp::kWarpBins}, std::move(values)));
}

void sgd_step(std::span<ParamRef> params, std::map<std::string, std::vector<double>>& buffers, double lr_vision,
              double lr_rest, double momentum) {
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + p.name);
    }
  }
  for (auto& p : params) {
    auto values = p.tensor.mutable_values();
    auto grad = p.tensor.grad();
    auto& buf = buffers[p.name];
    if (buf.empty()) buf.assign(values.size(), 0.0);
    if (buf.size() != values.size()) throw DimensionError("momentum buffer of " + p.name + " has the wrong size");
    const double lr = p.group == ParamGroup::vision ? lr_vision : lr_rest;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      buf[i] = momentum * buf[i] + g;
      values[i] -= lr * buf[i];
    }
  }
}

Trainer::Trainer(const TrainConfig& config, data::Dataset train_set, data::Dataset validation_set)
    : config_(config),
      train_set_(std::move(train_set)),
      validation_set_(std::move(validation_set)),
      model_(config),
      best_validation_(std::numeric_limits<double>::infinity()) {
  config_ = model_.config();
  if (train_set_.instruments().size() < config_.N) {
    throw DataError("training split has fewer than N = " + std::to_string(config_.N) + " usable instruments");
  }
}

namespace {

std::vector<data::TrainingItem> sample_batch(const data::Dataset& ds, std::uint64_t seed, std::uint64_t stream,
                                             std::size_t index, std::size_t batch_size,
                                             const data::SampleOptions& options) {
  // Each item owns its stream, so workers cannot change the outcome.
  std::vector<std::future<data::TrainingItem>> futures;
  for (std::size_t b = 0; b < batch_size; ++b) {
    futures.push_back(std::async(std::launch::async, [&, b] {
      Rng rng = derive_stream(seed, {stream, index, b});
      return data::sample_training_item(ds, rng, options);
    }));
  }
  std::vector<data::TrainingItem> items;
  for (auto& f : futures) items.push_back(f.get());
  return items;
}

}  // namespace

std::vector<data::TrainingItem> Trainer::batch(std::size_t iteration) const {
  const data::SampleOptions opts{config_.N, config_.F, config_.augment};
  return sample_batch(train_set_, config_.seed, kTrainStream, iteration, config_.batch_size, opts);
}

double Trainer::step() {
  const auto items = batch(iteration_);
  auto params = model_.params();
  for (auto& p : params) p.tensor.zero_grad();
  double loss_value;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor masks = model_.forward(items, ops::Mode::train);
    Tensor loss = fusion::bce_loss(masks, ibm_targets(items));
    loss_value = loss.item();
    tape.backward(loss);
    std::vector<Tensor> leaves;
    for (const auto& p : params) leaves.push_back(p.tensor);
    tape.accumulate_into_leaves(leaves);
  }
  sgd_step(params, momentum_, config_.lr_vision, config_.lr_rest, config_.momentum);
  ++iteration_;
  train_curve_.push_back({iteration_, loss_value});
  return loss_value;
}

double Trainer::validate() {
  if (validation_set_.instruments().size() < config_.N) {
    throw DataError("validation split has fewer than N usable instruments");
  }
  const data::SampleOptions opts{config_.N, config_.F, false};
  double total = 0.0;
  for (std::size_t v = 0; v < config_.validation_batches; ++v) {
    const auto items = sample_batch(validation_set_, config_.seed, kValidationStream, v, config_.batch_size, opts);
    Tensor masks = model_.forward(items, ops::Mode::eval);
    total += fusion::bce_loss(masks, ibm_targets(items)).item();
  }
  const double loss = total / static_cast<double>(config_.validation_batches);
  validation_curve_.push_back({iteration_, loss});
  return loss;
}

void Trainer::run(const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(std::size_t, double)>& on_step) {
  if (out_dir) std::filesystem::create_directories(*out_dir);
  auto save = [&](const std::string& name) {
    if (out_dir) state().save(*out_dir / name);
  };
  auto write_curves = [&] {
    if (!out_dir) return;
    write_curve(*out_dir / "train_loss.txt", train_curve_);
    write_curve(*out_dir / "val_loss.txt", validation_curve_);
  };
  const bool has_validation = validation_set_.instruments().size() >= config_.N;
  if (!has_validation) log_warning("validation split lacks N instruments; best checkpoint follows training loss");
  while (iteration_ < config_.iterations) {
    double loss;
    try {
      loss = step();
    } catch (const NumericalError&) {
      save("last.ckpt");
      write_curves();
      throw;
    }
    if (on_step) on_step(iteration_, loss);
    if (iteration_ % config_.validation_every == 0 || iteration_ == config_.iterations) {
      const double val = has_validation ? validate() : loss;
      log_info("iteration " + std::to_string(iteration_) + " train " + std::to_string(loss) + " val " +
               std::to_string(val));
      if (val < best_validation_) {
        best_validation_ = val;
        save("best.ckpt");
      }
    }
    if (iteration_ % config_.checkpoint_every == 0 || iteration_ == config_.iterations) {
      save("last.ckpt");
      write_curves();
    }
  }
}

namespace {

void put_curve(Checkpoint& ckpt, const std::string& name, std::span<const LossPoint> curve) {
  std::vector<double> flat;
  for (const auto& p : curve) {
    flat.push_back(static_cast<double>(p.iteration));
    flat.push_back(p.loss);
  }
  if (flat.empty()) return;
  ckpt.put(name, {curve.size(), 2}, std::move(flat));
}

std::vector<LossPoint> get_curve(const Checkpoint& ckpt, const std::string& name) {
  std::vector<LossPoint> curve;
  if (!ckpt.contains(name)) return curve;
  const auto& a = ckpt.get(name);
  for (std::size_t i = 0; i + 1 < a.values.size(); i += 2) {
    curve.push_back({static_cast<std::size_t>(a.values[i]), a.values[i + 1]});
  }
  return curve;
}

}  // namespace

Checkpoint Trainer::state() {
  Checkpoint ckpt;
  save_config(ckpt, config_);
  model_.save(ckpt);
  for (const auto& [name, buf] : momentum_) ckpt.put("momentum/" + name, {buf.size()}, buf);
  ckpt.put_scalar("train.iteration", static_cast<double>(iteration_));
  ckpt.put_scalar("train.best_validation", best_validation_);
  put_curve(ckpt, "train.curve", train_curve_);
  put_curve(ckpt, "train.validation_curve", validation_curve_);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const TrainConfig saved = load_config(ckpt);
  if (saved.K != config_.K || saved.conditioning != config_.conditioning || saved.N != config_.N ||
      saved.F != config_.F || saved.vision_base_channels != config_.vision_base_channels ||
      saved.unet_base_channels != config_.unet_base_channels || saved.unet_levels != config_.unet_levels) {
    throw ConfigError("checkpoint was written for a different model configuration");
  }
  model_.load(ckpt);
  momentum_.clear();
  for (const auto& a : ckpt.arrays()) {
    if (a.name.starts_with("momentum/")) momentum_[a.name.substr(9)] = a.values;
  }
  iteration_ = static_cast<std::size_t>(ckpt.get_scalar("train.iteration"));
  best_validation_ = ckpt.get_scalar("train.best_validation");
  train_curve_ = get_curve(ckpt, "train.curve");
  validation_curve_ = get_curve(ckpt, "train.validation_curve");
}

void write_curve(const std::filesystem::path& path, std::span<const LossPoint> curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& p : curve) out << p.iteration << '\t' << p.loss << '\n';
}

void save_config(Checkpoint& ckpt, const TrainConfig& c) {
  ckpt.put_scalar("config.K", static_cast<double>(c.K));
  ckpt.put_scalar("config.N", static_cast<double>(c.N));
  ckpt.put_scalar("config.F", static_cast<double>(c.F));
  ckpt.put_scalar("config.conditioning", static_cast<double>(c.conditioning));
  // Two 32-bit halves so seeds above 2^53 survive the f64 storage.
  ckpt.put("config.seed", {2}, {static_cast<double>(c.seed >> 32), static_cast<double>(c.seed & 0xffffffffULL)});
  ckpt.put_scalar("config.vision_base_channels", static_cast<double>(c.vision_base_channels));
  ckpt.put_scalar("config.unet_base_channels", static_cast<double>(c.unet_base_channels));
  ckpt.put_scalar("config.unet_levels", static_cast<double>(c.unet_levels));
  ckpt.put_scalar("config.voxel_size", c.voxel_size);
}

TrainConfig load_config(const Checkpoint& ckpt) {
  TrainConfig c;
  auto count = [&](const char* name) { return static_cast<std::size_t>(ckpt.get_scalar(name)); };
  c.K = count("config.K");
  c.N = count("config.N");
  c.F = count("config.F");
  c.conditioning = static_cast<Conditioning>(count("config.conditioning"));
  const auto& seed = ckpt.get("config.seed").values;
  if (seed.size() != 2) throw DataError("checkpoint array config.seed must hold two halves");
  c.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
  c.vision_base_channels = count("config.vision_base_channels");
  c.unet_base_channels = count("config.unet_base_channels");
  c.unet_levels = count("config.unet_levels");
  c.voxel_size = ckpt.get_scalar("config.voxel_size");
  return c;
}

}  // namespace pcsep::train
