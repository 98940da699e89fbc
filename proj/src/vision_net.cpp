#include "pcsep/vision_net.hpp"

#include "pcsep/errors.hpp"

namespace pcsep::vision {

using sparse::SparseTensor3;

namespace {

sparse::SparseKernel init_kernel(int half_extent, std::size_t cin, std::size_t cout, Rng& rng) {
  const std::size_t e = static_cast<std::size_t>(2 * half_extent + 1);
  const std::size_t volume = e * e * e;
  return sparse::SparseKernel{init_fan_in_uniform({volume, cin, cout}, volume * cin, rng), half_extent};
}

}  // namespace

SparseConvNorm SparseConvNorm::init(int half_extent, std::size_t cin, std::size_t cout, Rng& rng) {
  return SparseConvNorm{init_kernel(half_extent, cin, cout, rng), NormParams::identity(cout)};
}

SparseTensor3 SparseConvNorm::forward(const SparseTensor3& x, int stride, ops::Mode mode) {
  return sparse::sparse_batchnorm(sparse::sparse_conv3d(x, conv, stride), norm.gamma, norm.beta, norm.state, mode);
}

void SparseConvNorm::collect(const std::string& prefix, std::vector<ParamRef>& params,
                             std::vector<BufferRef>& buffers) {
  params.push_back({prefix + ".conv", conv.weights, ParamGroup::vision});
  norm.collect(prefix + ".bn", ParamGroup::vision, params, buffers);
}

ResidualBlockParams ResidualBlockParams::init(std::size_t cin, std::size_t cout, int stride, Rng& rng) {
  if (stride != 1 && stride != 2) throw ContractError("residual block stride must be 1 or 2");
  ResidualBlockParams p;
  p.stride = stride;
  p.first = SparseConvNorm::init(1, cin, cout, rng);
  p.second = SparseConvNorm::init(1, cout, cout, rng);
  if (stride != 1 || cin != cout) p.shortcut = SparseConvNorm::init(0, cin, cout, rng);
  return p;
}

void ResidualBlockParams::collect(const std::string& prefix, std::vector<ParamRef>& params,
                                  std::vector<BufferRef>& buffers) {
  first.collect(prefix + ".conv1", params, buffers);
  second.collect(prefix + ".conv2", params, buffers);
  if (shortcut) shortcut->collect(prefix + ".shortcut", params, buffers);
}

SparseTensor3 residual_block(const SparseTensor3& x, ResidualBlockParams& params, ops::Mode mode) {
  if (x.channels() != params.first.conv.in_channels()) {
    throw DimensionError("residual_block: input has " + std::to_string(x.channels()) + " channels, block expects " +
                         std::to_string(params.first.conv.in_channels()));
  }
  SparseTensor3 h = sparse::sparse_relu(params.first.forward(x, params.stride, mode));
  h = params.second.forward(h, 1, mode);
  SparseTensor3 skip = params.shortcut ? params.shortcut->forward(x, params.stride, mode) : x;
  return sparse::sparse_relu(sparse::sparse_add(h, skip));
}

VisionNet::VisionNet(const VisionConfig& config, Rng& rng) : config_(config) {
  if (config.K < 1 || config.base_channels < 1) throw ConfigError("vision net needs K >= 1 and base_channels >= 1");
  stem_ = SparseConvNorm::init(1, config.in_channels, config.base_channels, rng);
  std::size_t width = config.base_channels;
  for (std::size_t stage = 0; stage < config.stage_blocks.size(); ++stage) {
    const std::size_t out = config.base_channels << stage;
    for (std::size_t b = 0; b < config.stage_blocks[stage]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      blocks_.push_back(ResidualBlockParams::init(width, out, stride, rng));
      width = out;
    }
  }
  head_ = init_kernel(1, width, config.K, rng);
  head_bias_ = Tensor::zeros({config.K}, true);
}

Tensor VisionNet::encode_frames(const SparseTensor3& frames, ops::Mode mode) {
  if (frames.size() == 0) throw EmptyInputError("encode_frames: empty frame");
  SparseTensor3 h = sparse::sparse_relu(stem_.forward(frames, 1, mode));
  for (auto& block : blocks_) h = residual_block(h, block, mode);
  h = sparse::sparse_conv3d(h, head_, 1, head_bias_);
  return sparse::global_maxpool(h);
}

Tensor VisionNet::encode_frame(const SparseTensor3& frame, ops::Mode mode) {
  if (frame.coords && frame.coords->batch_count() != 1) {
    throw ContractError("encode_frame expects a single-frame tensor");
  }
  return ops::reshape(encode_frames(frame, mode), {config_.K});
}

VisualFeature VisionNet::encode_videos(const SparseTensor3& frames, std::size_t frames_per_video, ops::Mode mode) {
  if (frames_per_video == 0) throw EmptyInputError("encode_videos: no frames per video");
  Tensor per_frame = encode_frames(frames, mode);
  Tensor pooled = ops::group_max_rows(per_frame, frames_per_video);
  return VisualFeature{ops::sigmoid(pooled), per_frame};
}

VisualFeature VisionNet::encode_video(std::span<const SparseTensor3> frames, ops::Mode mode) {
  if (frames.empty()) throw EmptyInputError("encode_video: empty frame list");
  return encode_videos(stack_frames(frames), frames.size(), mode);
}

void VisionNet::collect(std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  stem_.collect("vision.stem", params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("vision.block" + std::to_string(i), params, buffers);
  }
  params.push_back({"vision.head.conv", head_.weights, ParamGroup::vision});
  params.push_back({"vision.head.bias", head_bias_, ParamGroup::vision});
}

SparseTensor3 stack_frames(std::span<const SparseTensor3> frames) {
  if (frames.empty()) throw EmptyInputError("stack_frames: no frames");
  const std::size_t c = frames.front().channels();
  std::vector<sparse::Coord> coords;
  std::vector<double> feats;
  std::vector<Tensor> inputs;
  for (std::size_t b = 0; b < frames.size(); ++b) {
    const SparseTensor3& f = frames[b];
    if (f.size() == 0) throw EmptyInputError("stack_frames: empty frame " + std::to_string(b));
    if (f.channels() != c) throw DimensionError("stack_frames: frames disagree on channel count");
    for (const auto& co : f.coords->coords()) {
      coords.push_back({static_cast<std::int32_t>(b), co.x, co.y, co.z});
    }
    feats.insert(feats.end(), f.feats.values().begin(), f.feats.values().end());
    inputs.push_back(f.feats);
  }
  const std::size_t n = coords.size();
  Tensor stacked({n, c}, std::move(feats));
  if (GradTape::should_record(inputs)) {
    std::vector<const TensorNode*> ids;
    for (const auto& t : inputs) ids.push_back(t.id());
    GradTape::active()->record(std::move(ids), stacked, [inputs, stacked](GradTape& tape) {
      auto gy = tape.grad(stacked);
      std::size_t offset = 0;
      for (const Tensor& t : inputs) {
        if (t.tracked()) {
          auto dx = tape.grad_buffer(t);
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gy[offset + i];
        }
        offset += t.numel();
      }
    });
  }
  return SparseTensor3{sparse::CoordSet::create(std::move(coords)), stacked, frames.front().voxel_size};
}

}  // namespace pcsep::vision
