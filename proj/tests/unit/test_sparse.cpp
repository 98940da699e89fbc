#include <algorithm>
#include <set>
#include <tuple>

#include "../oracles.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "pcsep/errors.hpp"
#include "pcsep/gradcheck.hpp"
#include "pcsep/ply.hpp"
#include "pcsep/sparse.hpp"

using namespace pcsep;
using namespace pcsep::sparse;

namespace {

SparseTensor3 random_cloud(Rng& rng, std::size_t points, int extent, std::size_t channels, int batches = 1) {
  std::set<Coord> seen;
  std::vector<Coord> coords;
  std::vector<double> feats;
  while (coords.size() < points) {
    Coord c{static_cast<std::int32_t>(uniform_index(rng, batches)),
            static_cast<std::int32_t>(uniform_index(rng, extent)), static_cast<std::int32_t>(uniform_index(rng, extent)),
            static_cast<std::int32_t>(uniform_index(rng, extent))};
    if (!seen.insert(c).second) continue;
    coords.push_back(c);
    for (std::size_t ch = 0; ch < channels; ++ch) feats.push_back(normal(rng, 0.0, 1.0));
  }
  return make_sparse_tensor(coords, feats, channels, 1.0);
}

SparseKernel random_kernel(Rng& rng, int half, std::size_t cin, std::size_t cout) {
  SparseKernel k = SparseKernel::zeros(half, cin, cout);
  for (double& w : k.weights.mutable_values()) w = normal(rng, 0.0, 1.0);
  return k;
}

using PairSet = std::multiset<std::tuple<std::size_t, std::uint32_t, std::uint32_t>>;

}  // namespace

TEST_CASE("voxelize floors and averages") {
  PointCloudFrame f;
  f.coords = {{0.05, -0.03, 0.019}};
  const auto v = voxelize(f, 0.02);
  REQUIRE(v.size() == 1);
  CHECK(v.coords->coords()[0] == Coord{0, 2, -2, 0});

  PointCloudFrame g;
  g.coords = {{0.001, 0.001, 0.001}, {0.002, 0.002, 0.002}};
  g.colors = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
  const auto c = voxelize(g, 0.02, FeatureSource::rgb);
  REQUIRE(c.size() == 1);
  CHECK(testing::to_vector(c.feats) == std::vector<double>{0.5, 0.5, 0.0});

  CHECK_THROWS_AS(voxelize(PointCloudFrame{}, 0.02), EmptyInputError);
}

TEST_CASE("voxel count matches a hash-set oracle") {
  Rng rng(21);
  PointCloudFrame f;
  for (int i = 0; i < 1000; ++i) f.coords.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
  std::set<std::tuple<long, long, long>> cells;
  for (const auto& p : f.coords) {
    cells.emplace(static_cast<long>(std::floor(p[0] / 0.02)), static_cast<long>(std::floor(p[1] / 0.02)),
                  static_cast<long>(std::floor(p[2] / 0.02)));
  }
  CHECK(voxelize(f, 0.02).size() == cells.size());
}

TEST_CASE("voxelize is idempotent on discretized coordinates") {
  Rng rng(22);
  PointCloudFrame f;
  for (int i = 0; i < 200; ++i) f.coords.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
  const double vs = 0.05;
  const auto first = voxelize(f, vs);
  PointCloudFrame snapped;
  for (const auto& c : first.coords->coords()) {
    // Cell centers sit safely inside their cell.
    snapped.coords.push_back({(c.x + 0.5) * vs, (c.y + 0.5) * vs, (c.z + 0.5) * vs});
  }
  const auto second = voxelize(snapped, vs);
  CHECK(second.coords->coords() == first.coords->coords());
}

TEST_CASE("kernel map edge cases") {
  const auto far = CoordSet::create({{0, 0, 0, 0}, {0, 5, 0, 0}});
  const auto map = far->kernel_map(1, 1);
  for (std::size_t off = 0; off < map->pairs.size(); ++off) {
    if (off == kernel_offset_index(0, 0, 0, 1)) {
      CHECK(map->pairs[off].size() == 2);
    } else {
      CHECK(map->pairs[off].empty());
    }
  }

  std::vector<Coord> block;
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 3; ++z) block.push_back({0, x, y, z});
  const auto dense = CoordSet::create(block);
  const std::size_t center = *dense->find({0, 1, 1, 1});
  std::size_t pairs = 0;
  for (const auto& list : dense->kernel_map(1, 1)->pairs)
    for (const auto& p : list) pairs += p.output == center;
  CHECK(pairs == 27);
}

TEST_CASE("kernel map equals the all-pairs oracle") {
  Rng rng(23);
  for (int stride : {1, 2}) {
    const auto cloud = random_cloud(rng, 200, 12, 1, 2);
    const auto map = cloud.coords->kernel_map(1, stride);
    PairSet got;
    for (std::size_t off = 0; off < map->pairs.size(); ++off)
      for (const auto& p : map->pairs[off]) got.emplace(off, p.input, p.output);
    PairSet expected;
    const auto& in = cloud.coords->coords();
    const auto& out = map->output->coords();
    for (std::uint32_t o = 0; o < out.size(); ++o) {
      for (std::uint32_t i = 0; i < in.size(); ++i) {
        if (in[i].batch != out[o].batch) continue;
        const int dx = in[i].x - stride * out[o].x, dy = in[i].y - stride * out[o].y, dz = in[i].z - stride * out[o].z;
        if (std::abs(dx) > 1 || std::abs(dy) > 1 || std::abs(dz) > 1) continue;
        expected.emplace(static_cast<std::size_t>(((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1)), i, o);
      }
    }
    CHECK(got == expected);
  }
}

TEST_CASE("downsample is the floor set") {
  const auto s = CoordSet::create({{0, -1, 0, 3}, {0, 1, 1, 2}, {0, 0, 0, 2}, {1, -2, -1, 3}});
  const auto d = s->downsample(2);
  std::set<Coord> got(d->coords().begin(), d->coords().end());
  CHECK(got == std::set<Coord>{{0, -1, 0, 1}, {0, 0, 0, 1}, {1, -1, -1, 1}});
  CHECK(s->downsample(1) == s);
}

TEST_CASE("sparse conv trivial cases") {
  Rng rng(24);
  const auto one = make_sparse_tensor(std::vector<Coord>{{0, 4, -2, 7}}, std::vector<double>{1.5, -2.0}, 2, 1.0);
  const auto k = random_kernel(rng, 1, 2, 3);
  const auto y = sparse_conv3d(one, k, 1);
  const std::size_t c = kernel_offset_index(0, 0, 0, 1);
  for (std::size_t o = 0; o < 3; ++o) {
    CHECK(y.feats.at(o) == doctest::Approx(1.5 * k.weights.at((c * 2 + 0) * 3 + o) - 2.0 * k.weights.at((c * 2 + 1) * 3 + o)));
  }

  auto zero = random_cloud(rng, 30, 6, 2);
  zero.feats = Tensor::zeros(zero.feats.shape());
  const auto z = sparse_conv3d(zero, k, 1);
  CHECK(z.coords == zero.coords);
  for (double v : z.feats.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(sparse_conv3d(zero, k, 0), ContractError);
  CHECK_THROWS_AS(sparse_conv3d(zero, random_kernel(rng, 1, 3, 3), 1), DimensionError);
}

TEST_CASE("sparse conv equals dense convolution on a 9^3 grid") {
  Rng rng(25);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_cloud(rng, 1 + uniform_index(rng, 120), 9, 1 + t % 4, 1 + t % 2);
    const auto k = random_kernel(rng, 1 + t % 2, 1 + t % 4, 1 + (t / 2) % 4);
    const int stride = 1 + t % 3 / 2;
    const auto y = sparse_conv3d(x, k, stride);
    const auto expected = oracle::dense_conv3d(x, k, stride, y.coords->coords());
    CHECK(testing::max_abs_diff(y.feats.values(), expected) < 1e-12);
  }
}

TEST_CASE("storage permutation permutes outputs identically") {
  Rng rng(26);
  const auto x = random_cloud(rng, 60, 7, 3);
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Coord> pc;
  std::vector<double> pf;
  for (std::size_t i : perm) {
    pc.push_back(x.coords->coords()[i]);
    for (std::size_t c = 0; c < 3; ++c) pf.push_back(x.feats.at(i * 3 + c));
  }
  const auto xp = make_sparse_tensor(pc, pf, 3, 1.0);
  const auto k = random_kernel(rng, 1, 3, 2);
  const auto y = sparse_relu(sparse_conv3d(x, k, 1));
  const auto yp = sparse_relu(sparse_conv3d(xp, k, 1));
  for (std::size_t i = 0; i < yp.size(); ++i) {
    const std::size_t j = *y.coords->find(yp.coords->coords()[i]);
    // Summation order over offsets is the same, so values agree exactly.
    CHECK(yp.feats.at(i * 2) == y.feats.at(j * 2));
    CHECK(yp.feats.at(i * 2 + 1) == y.feats.at(j * 2 + 1));
  }
  CHECK(testing::to_vector(global_maxpool(y)) == testing::to_vector(global_maxpool(yp)));
}

TEST_CASE("sparse batch norm and relu") {
  Rng rng(27);
  auto x = random_cloud(rng, 40, 6, 2);
  ops::BatchNormState state(2);
  const Tensor gamma(Shape{2}, {1.3, -0.4}), beta(Shape{2}, {0.2, 0.7});
  const auto y = sparse_batchnorm(x, gamma, beta, state, ops::Mode::train);
  // Masked dense oracle: statistics over occupied rows only.
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < x.size(); ++r) mean += x.feats.at(r * 2 + c);
    mean /= static_cast<double>(x.size());
    for (std::size_t r = 0; r < x.size(); ++r) var += std::pow(x.feats.at(r * 2 + c) - mean, 2);
    var /= static_cast<double>(x.size());
    for (std::size_t r = 0; r < x.size(); ++r) {
      const double expected = gamma.at(c) * (x.feats.at(r * 2 + c) - mean) / std::sqrt(var + 1e-5) + beta.at(c);
      CHECK(y.feats.at(r * 2 + c) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  x.feats = Tensor::full(x.feats.shape(), 3.0);
  const auto flat = sparse_batchnorm(x, gamma, beta, state, ops::Mode::train);
  for (std::size_t r = 0; r < flat.size(); ++r) CHECK(flat.feats.at(r * 2 + 1) == doctest::Approx(0.7));
  CHECK(sparse_relu(y).coords == y.coords);
}

TEST_CASE("global max pool") {
  const auto one = make_sparse_tensor(std::vector<Coord>{{0, 1, 1, 1}}, std::vector<double>{2.5}, 1, 1.0);
  CHECK(global_maxpool(one).item() == 2.5);
  const auto two = make_sparse_tensor(std::vector<Coord>{{0, 0, 0, 0}, {0, 1, 0, 0}}, std::vector<double>{1, 5, 3, 2}, 2, 1.0);
  CHECK(testing::to_vector(global_maxpool(two)) == std::vector<double>{3.0, 5.0});

  Rng rng(28);
  const auto x = random_cloud(rng, 50, 5, 3, 3);
  const Tensor pooled = global_maxpool(x);
  REQUIRE(pooled.shape() == Shape{3, 3});
  // Dense oracle: -inf in empty cells never wins.
  std::vector<double> dense(3 * 3, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < x.size(); ++r) {
    const auto b = static_cast<std::size_t>(x.coords->coords()[r].batch);
    for (std::size_t c = 0; c < 3; ++c) dense[b * 3 + c] = std::max(dense[b * 3 + c], x.feats.at(r * 3 + c));
  }
  CHECK(testing::to_vector(pooled) == dense);
}

TEST_CASE("sparse conv gradients on a 20-voxel input") {
  Rng rng(29);
  auto x = random_cloud(rng, 20, 4, 2);
  x.feats = testing::random_tensor(x.feats.shape(), rng, true);
  auto k = random_kernel(rng, 1, 2, 3);
  k.weights = testing::random_tensor(k.weights.shape(), rng, true);
  for (int stride : {1, 2}) {
    const Tensor w = testing::random_tensor({x.coords->downsample(stride)->size(), 3}, rng);
    Tensor inputs[] = {x.feats, k.weights};
    const auto r = check_gradients(
        [&] {
          SparseTensor3 in{x.coords, inputs[0], 1.0};
          SparseKernel kk{inputs[1], 1};
          return ops::sum(ops::mul(sparse_conv3d(in, kk, stride).feats, w));
        },
        inputs);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("PLY parsing") {
  PointCloudFrame f;
  f.coords = {{0.5, -1.0, 2.0}, {0.0, 0.25, -0.75}};
  f.colors = {{1.0, 0.0, 0.5019607843137255}, {0.0, 1.0, 0.0}};
  for (bool binary : {false, true}) {
    const auto back = parse_ply(to_ply(f, binary));
    REQUIRE(back.size() == 2);
    CHECK(back.coords[1][2] == doctest::Approx(-0.75));
    CHECK(back.colors[0][2] == doctest::Approx(128.0 / 255.0));
  }

  const std::string header = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                             "property float z\nend_header\n";
  try {
    parse_ply(header + "1 2 3\n4 five 6\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() >= header.size() + 6);
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_ply("plx\n"), ParseError);
  // Truncated binary body.
  const std::string bin = to_ply(f, true);
  try {
    parse_ply(bin.substr(0, bin.size() - 4));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() > 0);
  }
}
