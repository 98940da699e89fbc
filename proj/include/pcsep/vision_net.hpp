#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcsep/parameters.hpp"
#include "pcsep/sparse.hpp"

namespace pcsep::vision {

struct VisionConfig {
  std::size_t base_channels = 16;
  std::size_t K = 16;
  std::array<std::size_t, 4> stage_blocks{2, 2, 2, 2};
  sparse::FeatureSource feature_source = sparse::FeatureSource::depth;
  double voxel_size = 0.02;
  std::size_t in_channels = 3;
};

// Sparse conv without bias followed by batch norm.
struct SparseConvNorm {
  sparse::SparseKernel conv;
  NormParams norm;

  static SparseConvNorm init(int half_extent, std::size_t cin, std::size_t cout, Rng& rng);
  sparse::SparseTensor3 forward(const sparse::SparseTensor3& x, int stride, ops::Mode mode);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);
};

struct ResidualBlockParams {
  int stride = 1;
  SparseConvNorm first;   // 3x3x3, carries the stride
  SparseConvNorm second;  // 3x3x3, stride 1
  // 1x1x1 projection when the block changes stride or width.
  std::optional<SparseConvNorm> shortcut;

  static ResidualBlockParams init(std::size_t cin, std::size_t cout, int stride, Rng& rng);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);
};

// relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))
sparse::SparseTensor3 residual_block(const sparse::SparseTensor3& x, ResidualBlockParams& params, ops::Mode mode);

// v in (0,1)^K per video plus the pre-pooling per-frame features.
struct VisualFeature {
  Tensor v;          // [videos, K]
  Tensor per_frame;  // [videos * F, K]
};

// Sparse Resnet18: stem, four stages of residual blocks (stages 2-4 open with
// stride 2 and double the width), a 3x3x3 conv to K channels and a global
// max pool per frame.
class VisionNet {
 public:
  VisionNet(const VisionConfig& config, Rng& rng);

  const VisionConfig& config() const { return config_; }

  // frames: batch tensor, one batch index per frame -> [frames, K].
  Tensor encode_frames(const sparse::SparseTensor3& frames, ops::Mode mode);
  // One voxelized frame -> [K].
  Tensor encode_frame(const sparse::SparseTensor3& frame, ops::Mode mode);

  // frames holds videos * frames_per_video batch indices, video-major.
  VisualFeature encode_videos(const sparse::SparseTensor3& frames, std::size_t frames_per_video, ops::Mode mode);
  // Frames of a single video, each voxelized on its own.
  VisualFeature encode_video(std::span<const sparse::SparseTensor3> frames, ops::Mode mode);

  void collect(std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

  SparseConvNorm& stem() { return stem_; }
  std::vector<ResidualBlockParams>& blocks() { return blocks_; }
  sparse::SparseKernel& head() { return head_; }
  Tensor& head_bias() { return head_bias_; }

 private:
  VisionConfig config_;
  SparseConvNorm stem_;
  std::vector<ResidualBlockParams> blocks_;
  sparse::SparseKernel head_;
  Tensor head_bias_;
};

// Stacks single-frame tensors into one tensor with batch index = position.
// Differentiable with respect to the feature rows.
sparse::SparseTensor3 stack_frames(std::span<const sparse::SparseTensor3> frames);

}  // namespace pcsep::vision
