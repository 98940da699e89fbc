#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcsep/audio_net.hpp"
#include "pcsep/checkpoint.hpp"
#include "pcsep/data.hpp"
#include "pcsep/fusion.hpp"
#include "pcsep/vision_net.hpp"

namespace pcsep::train {

enum class Conditioning { depth, rgb_depth, label };

std::string_view conditioning_name(Conditioning c);
Conditioning parse_conditioning(std::string_view name);

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 4;
  double momentum = 0.9;
  double lr_vision = 1e-4;
  double lr_rest = 1e-3;
  std::size_t K = 16;
  std::size_t N = 2;
  std::size_t F = 1;
  Conditioning conditioning = Conditioning::depth;
  std::uint64_t seed = 1;

  std::size_t vision_base_channels = 16;
  std::size_t unet_base_channels = 8;
  std::size_t unet_levels = 7;
  double voxel_size = 0.05;
  bool augment = true;
  std::size_t validation_every = 100;
  std::size_t validation_batches = 2;
  std::size_t checkpoint_every = 100;

  // Throws ConfigError on non-positive values. Label conditioning forces K = 5.
  void validate();
};

// Vision branch (absent under label conditioning), U-Net and fusion head.
class Model {
 public:
  explicit Model(const TrainConfig& config);

  const TrainConfig& config() const { return config_; }

  // v for every source of every item: [items * N, K].
  Tensor conditioning(std::span<const data::TrainingItem> items, ops::Mode mode);
  // Predicted masks [items * N, kFrames, kWarpBins].
  Tensor forward(std::span<const data::TrainingItem> items, ops::Mode mode);

  // v [1, K] from the frames of one video, any frame count.
  Tensor visual_conditioning(std::span<const sparse::PointCloudFrame> frames, ops::Mode mode);
  // Masks of one mixture for conditioning rows v [R, K]: [R, kFrames, kWarpBins].
  Tensor masks_for(const Grid& mixture_magnitude, const Tensor& v, ops::Mode mode);

  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();

  void save(Checkpoint& ckpt);
  // Shapes must match; throws DataError naming the first missing or
  // mismatched array.
  void load(const Checkpoint& ckpt);

  vision::VisionNet* vision() { return vision_.get(); }
  audio::UNet& unet() { return *unet_; }
  fusion::FusionParams& fusion() { return fusion_; }

 private:
  TrainConfig config_;
  std::unique_ptr<vision::VisionNet> vision_;
  std::unique_ptr<audio::UNet> unet_;
  fusion::FusionParams fusion_;
};

// Stacked IBM targets [items * N, kFrames, kWarpBins].
Tensor ibm_targets(std::span<const data::TrainingItem> items);
// U-Net input log(|X| + 1e-3): [items, 1, kFrames, kWarpBins].
Tensor mixture_input(std::span<const data::TrainingItem> items);

// Per parameter: buf = momentum * buf + grad; p -= lr * buf, lr by group.
// All gradients are checked before any update; a non-finite one raises
// NumericalError naming the parameter. Missing gradients count as zero.
void sgd_step(std::span<ParamRef> params, std::map<std::string, std::vector<double>>& buffers, double lr_vision,
              double lr_rest, double momentum);

struct LossPoint {
  std::size_t iteration;
  double loss;
};

class Trainer {
 public:
  Trainer(const TrainConfig& config, data::Dataset train_set, data::Dataset validation_set);

  Model& model() { return model_; }
  std::size_t iteration() const { return iteration_; }
  const std::vector<LossPoint>& train_curve() const { return train_curve_; }
  const std::vector<LossPoint>& validation_curve() const { return validation_curve_; }
  double best_validation() const { return best_validation_; }

  // Items of iteration `it`; depends only on (seed, it).
  std::vector<data::TrainingItem> batch(std::size_t iteration) const;

  // One SGD iteration; returns the batch loss before the update.
  double step();
  // Mean BCE over fixed held-out batches in eval mode.
  double validate();

  // Runs until config.iterations. Writes last.ckpt, best.ckpt and loss
  // curves under out_dir when it is set. on_step sees (iteration, loss).
  void run(const std::optional<std::filesystem::path>& out_dir = std::nullopt,
           const std::function<void(std::size_t, double)>& on_step = {});

  Checkpoint state();
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig config_;
  data::Dataset train_set_;
  data::Dataset validation_set_;
  Model model_;
  std::map<std::string, std::vector<double>> momentum_;
  std::size_t iteration_ = 0;
  std::vector<LossPoint> train_curve_;
  std::vector<LossPoint> validation_curve_;
  double best_validation_;
};

void write_curve(const std::filesystem::path& path, std::span<const LossPoint> curve);

// Checkpoint arrays "config.*" hold the model-shaping fields.
void save_config(Checkpoint& ckpt, const TrainConfig& config);
TrainConfig load_config(const Checkpoint& ckpt);

}  // namespace pcsep::train
