#include "pcsep/sparse.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "pcsep/errors.hpp"

namespace pcsep::sparse {

std::size_t CoordHash::operator()(const Coord& c) const noexcept {
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (std::int32_t v : {c.batch, c.x, c.y, c.z}) {
    h ^= static_cast<std::uint32_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return static_cast<std::size_t>(h);
}

std::int32_t floor_div(std::int32_t value, std::int32_t divisor) {
  std::int32_t q = value / divisor;
  if ((value % divisor != 0) && (value < 0)) --q;
  return q;
}

std::shared_ptr<const CoordSet> CoordSet::create(std::vector<Coord> coords) {
  std::shared_ptr<CoordSet> set(new CoordSet());
  set->index_.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].batch < 0) throw ContractError("negative batch index in coordinate set");
    if (!set->index_.emplace(coords[i], i).second) {
      throw ContractError("duplicate coordinate in coordinate set at row " + std::to_string(i));
    }
    set->batch_count_ = std::max(set->batch_count_, static_cast<std::size_t>(coords[i].batch) + 1);
  }
  set->coords_ = std::move(coords);
  return set;
}

std::optional<std::size_t> CoordSet::find(const Coord& c) const {
  auto it = index_.find(c);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::shared_ptr<const CoordSet> CoordSet::downsample(int stride) const {
  if (stride < 1) throw ContractError("downsample stride must be >= 1");
  if (stride == 1) return shared_from_this();
  std::lock_guard lock(cache_mutex_);
  auto it = downsampled_.find(stride);
  if (it != downsampled_.end()) return it->second;
  std::vector<Coord> out;
  std::unordered_map<Coord, std::size_t, CoordHash> seen;
  for (const Coord& c : coords_) {
    Coord d{c.batch, floor_div(c.x, stride), floor_div(c.y, stride), floor_div(c.z, stride)};
    if (seen.emplace(d, out.size()).second) out.push_back(d);
  }
  auto set = create(std::move(out));
  downsampled_.emplace(stride, set);
  return set;
}

std::shared_ptr<const KernelMap> CoordSet::kernel_map(int half_extent, int stride) const {
  auto output = downsample(stride);
  std::lock_guard lock(cache_mutex_);
  const auto key = std::make_pair(half_extent, stride);
  auto it = kernel_maps_.find(key);
  if (it != kernel_maps_.end()) return it->second;
  auto map = std::make_shared<const KernelMap>(build_kernel_map(*this, output, half_extent, stride));
  kernel_maps_.emplace(key, map);
  return map;
}

std::size_t KernelMap::pair_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.size();
  return n;
}

std::size_t kernel_offset_index(int i, int j, int k, int half_extent) {
  const int e = 2 * half_extent + 1;
  return static_cast<std::size_t>(((i + half_extent) * e + (j + half_extent)) * e + (k + half_extent));
}

std::array<int, 3> kernel_offset(std::size_t index, int half_extent) {
  const int e = 2 * half_extent + 1;
  const int idx = static_cast<int>(index);
  return {idx / (e * e) - half_extent, (idx / e) % e - half_extent, idx % e - half_extent};
}

KernelMap build_kernel_map(const CoordSet& input, std::shared_ptr<const CoordSet> output, int half_extent,
                           int stride) {
  if (half_extent < 0) throw ContractError("kernel half extent must be >= 0");
  if (stride < 1) throw ContractError("kernel map stride must be >= 1");
  KernelMap map;
  map.half_extent = half_extent;
  map.stride = stride;
  const int e = 2 * half_extent + 1;
  map.pairs.resize(static_cast<std::size_t>(e * e * e));
  const auto& outs = output->coords();
  for (std::size_t o = 0; o < outs.size(); ++o) {
    const Coord& oc = outs[o];
    for (std::size_t off = 0; off < map.pairs.size(); ++off) {
      const auto d = kernel_offset(off, half_extent);
      const Coord probe{oc.batch, stride * oc.x + d[0], stride * oc.y + d[1], stride * oc.z + d[2]};
      if (auto in = input.find(probe)) {
        map.pairs[off].push_back({static_cast<std::uint32_t>(*in), static_cast<std::uint32_t>(o)});
      }
    }
  }
  map.output = std::move(output);
  return map;
}

SparseKernel SparseKernel::zeros(int half_extent, std::size_t in_channels, std::size_t out_channels,
                                 bool requires_grad) {
  const std::size_t e = static_cast<std::size_t>(2 * half_extent + 1);
  return SparseKernel{Tensor::zeros({e * e * e, in_channels, out_channels}, requires_grad), half_extent};
}

SparseTensor3 make_sparse_tensor(std::span<const Coord> coords, std::span<const double> feats, std::size_t channels,
                                 double voxel_size) {
  if (coords.empty()) throw EmptyInputError("sparse tensor needs at least one coordinate");
  if (channels == 0 || feats.size() != coords.size() * channels) {
    throw DimensionError("sparse tensor: " + std::to_string(feats.size()) + " feature values for " +
                         std::to_string(coords.size()) + " coordinates x " + std::to_string(channels) + " channels");
  }
  check_finite(feats, "sparse tensor features");
  std::unordered_map<Coord, std::size_t, CoordHash> slot;
  std::vector<Coord> unique;
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    auto [it, inserted] = slot.emplace(coords[i], unique.size());
    if (inserted) {
      unique.push_back(coords[i]);
      sums.insert(sums.end(), channels, 0.0);
      counts.push_back(0);
    }
    const std::size_t r = it->second;
    for (std::size_t c = 0; c < channels; ++c) sums[r * channels + c] += feats[i * channels + c];
    ++counts[r];
  }
  for (std::size_t r = 0; r < unique.size(); ++r) {
    if (counts[r] == 1) continue;
    for (std::size_t c = 0; c < channels; ++c) sums[r * channels + c] /= static_cast<double>(counts[r]);
  }
  const std::size_t n = unique.size();
  return SparseTensor3{CoordSet::create(std::move(unique)), Tensor({n, channels}, std::move(sums)), voxel_size};
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;

void gather_rows(const double* src, std::size_t width, const std::vector<KernelPair>& pairs,
                 std::uint32_t KernelPair::*side, RowMat& dst) {
  dst.resize(static_cast<long>(pairs.size()), static_cast<long>(width));
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    std::copy_n(src + pairs[r].*side * width, width, dst.data() + r * width);
  }
}

void scatter_add_rows(const RowMat& rows, const std::vector<KernelPair>& pairs, std::uint32_t KernelPair::*side,
                      double* dst) {
  const std::size_t width = static_cast<std::size_t>(rows.cols());
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    double* d = dst + pairs[r].*side * width;
    const double* s = rows.data() + r * width;
    for (std::size_t c = 0; c < width; ++c) d[c] += s[c];
  }
}

std::int32_t discretize(double c, double voxel_size) {
  if (!std::isfinite(c)) throw NumericalError("non-finite point coordinate during voxelization");
  const double v = std::floor(c / voxel_size);
  if (std::abs(v) >= 2147483648.0) {
    throw NumericalError("voxel coordinate " + std::to_string(v) + " exceeds the 32-bit grid range");
  }
  return static_cast<std::int32_t>(v);
}

void append_frame(const PointCloudFrame& frame, double voxel_size, FeatureSource source, std::int32_t batch,
                  std::vector<Coord>& coords, std::vector<double>& feats) {
  if (frame.coords.empty()) throw EmptyInputError("voxelize: empty point cloud frame");
  if (source == FeatureSource::rgb && frame.colors.size() != frame.coords.size()) {
    throw DataError("voxelize: rgb features requested but frame has " + std::to_string(frame.colors.size()) +
                    " colors for " + std::to_string(frame.coords.size()) + " points");
  }
  for (std::size_t i = 0; i < frame.coords.size(); ++i) {
    const Vec3& p = frame.coords[i];
    coords.push_back(Coord{batch, discretize(p[0], voxel_size), discretize(p[1], voxel_size),
                           discretize(p[2], voxel_size)});
    const Vec3& f = source == FeatureSource::depth ? p : frame.colors[i];
    feats.insert(feats.end(), f.begin(), f.end());
  }
}

}  // namespace

SparseTensor3 voxelize(const PointCloudFrame& frame, double voxel_size, FeatureSource source, std::int32_t batch) {
  if (!(voxel_size > 0.0)) throw ContractError("voxelize: voxel size must be positive");
  std::vector<Coord> coords;
  std::vector<double> feats;
  append_frame(frame, voxel_size, source, batch, coords, feats);
  return make_sparse_tensor(coords, feats, 3, voxel_size);
}

SparseTensor3 voxelize_batch(std::span<const PointCloudFrame> frames, double voxel_size, FeatureSource source) {
  if (frames.empty()) throw EmptyInputError("voxelize_batch: no frames");
  if (!(voxel_size > 0.0)) throw ContractError("voxelize: voxel size must be positive");
  std::vector<Coord> coords;
  std::vector<double> feats;
  for (std::size_t b = 0; b < frames.size(); ++b) {
    append_frame(frames[b], voxel_size, source, static_cast<std::int32_t>(b), coords, feats);
  }
  return make_sparse_tensor(coords, feats, 3, voxel_size);
}

SparseTensor3 sparse_conv3d(const SparseTensor3& input, const SparseKernel& kernel, int stride, const Tensor& bias) {
  if (stride < 1) throw ContractError("sparse_conv3d: stride must be >= 1, got " + std::to_string(stride));
  if (kernel.weights.rank() != 3 ||
      kernel.weights.dim(0) != static_cast<std::size_t>(kernel.extent() * kernel.extent() * kernel.extent())) {
    throw DimensionError("sparse_conv3d: kernel weights " + shape_str(kernel.weights.shape()) +
                         " do not match extent " + std::to_string(kernel.extent()));
  }
  if (kernel.in_channels() != input.channels()) {
    throw DimensionError("sparse_conv3d: kernel expects " + std::to_string(kernel.in_channels()) +
                         " input channels, tensor has " + std::to_string(input.channels()));
  }
  const std::size_t cin = kernel.in_channels();
  const std::size_t cout = kernel.out_channels();
  if (bias.defined() && bias.numel() != cout) {
    throw DimensionError("sparse_conv3d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
  }
  auto map = input.coords->kernel_map(kernel.half_extent, stride);
  const std::size_t n_out = map->output->size();
  const auto x = input.feats.values();
  const auto w = kernel.weights.values();
  std::vector<double> out(n_out * cout, 0.0);
  if (bias.defined()) {
    for (std::size_t o = 0; o < n_out; ++o) {
      for (std::size_t c = 0; c < cout; ++c) out[o * cout + c] = bias.values()[c];
    }
  }
  // Per offset: gather the paired input rows, one GEMM, scatter-add.
  RowMat xg, yg;
  for (std::size_t off = 0; off < map->pairs.size(); ++off) {
    const auto& pairs = map->pairs[off];
    if (pairs.empty()) continue;
    gather_rows(x.data(), cin, pairs, &KernelPair::input, xg);
    ConstRowMap wo(w.data() + off * cin * cout, static_cast<long>(cin), static_cast<long>(cout));
    yg.noalias() = xg * wo;
    scatter_add_rows(yg, pairs, &KernelPair::output, out.data());
  }
  check_finite(out, "sparse_conv3d");
  Tensor feats({n_out, cout}, std::move(out));
  const Tensor& in_feats = input.feats;
  const Tensor& weights = kernel.weights;
  if (GradTape::should_record({&in_feats, &weights, &bias})) {
    GradTape::active()->record(
        {in_feats.id(), weights.id(), bias.id()}, feats,
        [in_feats, weights, bias, feats, map, cin, cout](GradTape& tape) {
          auto gy = tape.grad(feats);
          const auto x = in_feats.values();
          const auto w = weights.values();
          if (bias.tracked()) {
            auto db = tape.grad_buffer(bias);
            for (std::size_t o = 0; o < gy.size() / cout; ++o) {
              for (std::size_t c = 0; c < cout; ++c) db[c] += gy[o * cout + c];
            }
          }
          std::span<double> dx = in_feats.tracked() ? tape.grad_buffer(in_feats) : std::span<double>{};
          std::span<double> dw = weights.tracked() ? tape.grad_buffer(weights) : std::span<double>{};
          RowMat gg, xg, dxg, dwg;
          for (std::size_t off = 0; off < map->pairs.size(); ++off) {
            const auto& pairs = map->pairs[off];
            if (pairs.empty()) continue;
            gather_rows(gy.data(), cout, pairs, &KernelPair::output, gg);
            if (!dx.empty()) {
              ConstRowMap wo(w.data() + off * cin * cout, static_cast<long>(cin), static_cast<long>(cout));
              dxg.noalias() = gg * wo.transpose();
              scatter_add_rows(dxg, pairs, &KernelPair::input, dx.data());
            }
            if (!dw.empty()) {
              gather_rows(x.data(), cin, pairs, &KernelPair::input, xg);
              // Product into an owned (aligned) matrix: Eigen's small-product
              // path otherwise peels by the destination address.
              dwg.noalias() = xg.transpose() * gg;
              double* dwo = dw.data() + off * cin * cout;
              for (std::size_t i = 0; i < cin * cout; ++i) dwo[i] += dwg.data()[i];
            }
          }
        });
  }
  return SparseTensor3{map->output, std::move(feats), input.voxel_size * stride};
}

SparseTensor3 sparse_batchnorm(const SparseTensor3& input, const Tensor& gamma, const Tensor& beta,
                               ops::BatchNormState& state, ops::Mode mode) {
  if (input.size() == 0) throw EmptyInputError("sparse_batchnorm: empty tensor");
  return SparseTensor3{input.coords, ops::batch_norm(input.feats, gamma, beta, state, mode), input.voxel_size};
}

SparseTensor3 sparse_relu(const SparseTensor3& input) {
  if (input.size() == 0) throw EmptyInputError("sparse_relu: empty tensor");
  return SparseTensor3{input.coords, ops::relu(input.feats), input.voxel_size};
}

SparseTensor3 sparse_add(const SparseTensor3& a, const SparseTensor3& b) {
  if (a.coords != b.coords && a.coords->coords() != b.coords->coords()) {
    throw DimensionError("sparse_add: operands have different coordinate sets");
  }
  return SparseTensor3{a.coords, ops::add(a.feats, b.feats), a.voxel_size};
}

Tensor global_maxpool(const SparseTensor3& input) {
  if (input.size() == 0) throw EmptyInputError("global_maxpool: empty tensor");
  const std::size_t batches = input.coords->batch_count();
  const std::size_t c = input.channels();
  const auto& coords = input.coords->coords();
  const auto x = input.feats.values();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> argmax(batches * c, kNone);
  for (std::size_t r = 0; r < coords.size(); ++r) {
    const std::size_t b = static_cast<std::size_t>(coords[r].batch);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t& best = argmax[b * c + ch];
      const std::size_t idx = r * c + ch;
      if (best == kNone || x[idx] > x[best] || (x[idx] == x[best] && idx < best)) best = idx;
    }
  }
  std::vector<double> out(batches * c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (argmax[i] == kNone) {
      throw EmptyInputError("global_maxpool: batch index " + std::to_string(i / c) + " has no voxels");
    }
    out[i] = x[argmax[i]];
  }
  Tensor result({batches, c}, std::move(out));
  const Tensor& feats = input.feats;
  if (GradTape::should_record({&feats})) {
    GradTape::active()->record({feats.id()}, result, [feats, result, argmax = std::move(argmax)](GradTape& tape) {
      auto gy = tape.grad(result);
      auto dx = tape.grad_buffer(feats);
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += gy[i];
    });
  }
  return result;
}

}  // namespace pcsep::sparse
