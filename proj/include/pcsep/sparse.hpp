#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcsep/ops.hpp"
#include "pcsep/tensor.hpp"

namespace pcsep::sparse {

using Vec3 = std::array<double, 3>;

// Raw points of one frame. colors are rgb in [0,1], or empty when the source
// carries no color.
struct PointCloudFrame {
  std::vector<Vec3> coords;
  std::vector<Vec3> colors;

  std::size_t size() const { return coords.size(); }
  bool has_colors() const { return !colors.empty(); }
};

// Which per-point vector becomes the voxel feature: the non-discretized
// coordinates, or the rgb color.
enum class FeatureSource { depth, rgb };

// Integer voxel coordinate. batch separates frames that share one tensor; it
// never takes part in kernel offsets.
struct Coord {
  std::int32_t batch = 0;
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  auto operator<=>(const Coord&) const = default;
};

struct CoordHash {
  std::size_t operator()(const Coord& c) const noexcept;
};

// floor(value / divisor) for a positive divisor.
std::int32_t floor_div(std::int32_t value, std::int32_t divisor);

struct KernelMap;

// Deduplicated, immutable coordinate set with O(1) lookup. Derived sets and
// kernel maps are memoized and safe to request from several threads.
class CoordSet : public std::enable_shared_from_this<CoordSet> {
 public:
  // Throws ContractError on duplicate coordinates.
  static std::shared_ptr<const CoordSet> create(std::vector<Coord> coords);

  std::size_t size() const { return coords_.size(); }
  const std::vector<Coord>& coords() const { return coords_; }
  std::optional<std::size_t> find(const Coord& c) const;
  // One more than the largest batch index.
  std::size_t batch_count() const { return batch_count_; }

  // Unique floor(c / stride) of the set, in first-occurrence order. stride 1
  // returns this set.
  std::shared_ptr<const CoordSet> downsample(int stride) const;

  // Map from this set to downsample(stride) for a (2L+1)^3 kernel.
  std::shared_ptr<const KernelMap> kernel_map(int half_extent, int stride) const;

 private:
  CoordSet() = default;

  std::vector<Coord> coords_;
  std::unordered_map<Coord, std::size_t, CoordHash> index_;
  std::size_t batch_count_ = 0;

  mutable std::mutex cache_mutex_;
  mutable std::map<int, std::shared_ptr<const CoordSet>> downsampled_;
  mutable std::map<std::pair<int, int>, std::shared_ptr<const KernelMap>> kernel_maps_;
};

struct KernelPair {
  std::uint32_t input;
  std::uint32_t output;

  auto operator<=>(const KernelPair&) const = default;
};

// Per kernel offset, the (input, output) index pairs such that
// input coord == stride * output coord + offset.
struct KernelMap {
  int half_extent = 0;
  int stride = 1;
  std::shared_ptr<const CoordSet> output;
  std::vector<std::vector<KernelPair>> pairs;

  std::size_t offset_count() const { return pairs.size(); }
  std::size_t pair_count() const;
};

// Offset (i,j,k), |i|,|j|,|k| <= L, to its row in a kernel weight array.
std::size_t kernel_offset_index(int i, int j, int k, int half_extent);
std::array<int, 3> kernel_offset(std::size_t index, int half_extent);

// Hash-probe construction: O(|out| * (2L+1)^3).
KernelMap build_kernel_map(const CoordSet& input, std::shared_ptr<const CoordSet> output, int half_extent, int stride);

struct SparseTensor3 {
  std::shared_ptr<const CoordSet> coords;
  Tensor feats;  // [|coords|, channels]
  double voxel_size = 1.0;

  std::size_t size() const { return coords ? coords->size() : 0; }
  std::size_t channels() const { return feats.dim(1); }
};

// Builds a tensor from parallel coordinate / feature rows. Duplicate
// coordinates are merged by averaging their features.
SparseTensor3 make_sparse_tensor(std::span<const Coord> coords, std::span<const double> feats, std::size_t channels,
                                 double voxel_size);

struct SparseKernel {
  Tensor weights;  // [(2L+1)^3, in_channels, out_channels]
  int half_extent = 1;

  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t out_channels() const { return weights.dim(2); }
  int extent() const { return 2 * half_extent + 1; }

  static SparseKernel zeros(int half_extent, std::size_t in_channels, std::size_t out_channels,
                            bool requires_grad = false);
};

// floor(c / voxel_size) per point; points sharing a voxel have their features
// averaged. Throws EmptyInputError on an empty frame.
SparseTensor3 voxelize(const PointCloudFrame& frame, double voxel_size, FeatureSource source = FeatureSource::depth,
                       std::int32_t batch = 0);

// Voxelizes frames[b] under batch index b into one tensor.
SparseTensor3 voxelize_batch(std::span<const PointCloudFrame> frames, double voxel_size, FeatureSource source);

// out[o] = sum over offsets d with stride*o + d occupied of W[d]^T in[stride*o + d]
// for every o in input.coords->downsample(stride).
SparseTensor3 sparse_conv3d(const SparseTensor3& input, const SparseKernel& kernel, int stride,
                            const Tensor& bias = {});

SparseTensor3 sparse_batchnorm(const SparseTensor3& input, const Tensor& gamma, const Tensor& beta,
                               ops::BatchNormState& state, ops::Mode mode);
SparseTensor3 sparse_relu(const SparseTensor3& input);
// Elementwise sum of two tensors over the same coordinate set.
SparseTensor3 sparse_add(const SparseTensor3& a, const SparseTensor3& b);

// Per batch index and channel, the max over occupied voxels: [batch_count, C].
// Gradient routes to the lowest-index argmax voxel.
Tensor global_maxpool(const SparseTensor3& input);

}  // namespace pcsep::sparse
