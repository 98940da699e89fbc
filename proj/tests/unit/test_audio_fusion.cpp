#include "doctest.h"
#include "helpers.hpp"
#include "pcsep/audio_net.hpp"
#include "pcsep/errors.hpp"
#include "pcsep/fusion.hpp"
#include "pcsep/gradcheck.hpp"

using namespace pcsep;
using testing::random_tensor;

namespace {

double stable_sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

TEST_CASE("U-Net widths") {
  audio::UNetConfig c;
  c.base_channels = 8;
  CHECK(c.width(1) == 8);
  CHECK(c.width(2) == 16);
  CHECK(c.width(4) == 64);
  CHECK(c.width(5) == 64);
  CHECK(c.width(7) == 64);
}

TEST_CASE("U-Net output keeps the spatial size") {
  for (std::size_t levels : {5, 7}) {
    for (std::size_t hw : {32, 256}) {
      if (hw % (std::size_t{1} << levels) != 0) continue;
      audio::UNetConfig c;
      c.levels = levels;
      c.K = 3;
      c.base_channels = 2;
      Rng rng(41);
      audio::UNet net(c, rng);
      Rng data(42);
      const Tensor S = net.forward(random_tensor({1, 1, hw, hw}, data), ops::Mode::train);
      CHECK(S.shape() == Shape{1, 3, hw, hw});
    }
  }
  audio::UNetConfig c;
  c.levels = 7;
  Rng rng(43);
  audio::UNet net(c, rng);
  CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 1, 96, 128}), ops::Mode::eval), DimensionError);
}

TEST_CASE("every encoder level feeds exactly one decoder step") {
  audio::UNetConfig c;
  c.levels = 5;
  c.base_channels = 2;
  Rng rng(44);
  audio::UNet net(c, rng);
  net.forward(Tensor::zeros({1, 1, 32, 32}), ops::Mode::eval);
  const auto& trace = net.skip_trace();
  // Decoders run deepest first; each consumes the encoder map one level up.
  CHECK(trace == std::vector<std::size_t>{4, 3, 2, 1, 0});
}

TEST_CASE("U-Net zero input with zero biases") {
  audio::UNetConfig c;
  c.levels = 3;
  c.K = 2;
  c.base_channels = 2;
  Rng rng(45);
  audio::UNet net(c, rng);
  const Tensor S = net.forward(Tensor::zeros({2, 1, 16, 16}), ops::Mode::train);
  for (double v : S.values()) CHECK(v == 0.0);
}

TEST_CASE("U-Net eval forward is deterministic") {
  audio::UNetConfig c;
  c.levels = 3;
  c.K = 2;
  c.base_channels = 2;
  Rng rng(46);
  audio::UNet net(c, rng);
  Rng data(47);
  const Tensor x = random_tensor({1, 1, 16, 16}, data);
  CHECK(testing::to_vector(net.forward(x, ops::Mode::eval)) == testing::to_vector(net.forward(x, ops::Mode::eval)));
}

TEST_CASE("log magnitude input") {
  const Tensor m(Shape{3}, {0.0, 1.0, 9.999});
  const Tensor l = audio::log_magnitude(m);
  CHECK(l.at(0) == doctest::Approx(std::log(1e-3)));
  CHECK(l.at(2) == doctest::Approx(std::log(10.0)));
}

TEST_CASE("fuse matches a scalar loop") {
  Rng rng(48);
  const std::size_t R = 4, B = 2, K = 3, H = 5, W = 6, group = 2;
  const Tensor v = random_tensor({R, K}, rng), S = random_tensor({B, K, H, W}, rng);
  fusion::FusionParams p = fusion::FusionParams::init(K);
  for (double& a : p.alpha.mutable_values()) a = normal(rng, 0.0, 1.0);
  p.beta.mutable_values()[0] = 0.3;
  const Tensor m = fusion::fuse(v, S, p, group);
  REQUIRE(m.shape() == Shape{R, H, W});
  double worst = 0.0;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < H * W; ++i) {
      double z = p.beta.at(0);
      for (std::size_t k = 0; k < K; ++k) z += p.alpha.at(k) * v.at(r * K + k) * S.at(((r / group) * K + k) * H * W + i);
      worst = std::max(worst, std::abs(m.at(r * H * W + i) - stable_sigmoid(z)));
    }
  CHECK(worst < 1e-12);

  CHECK_THROWS_AS(fusion::fuse(random_tensor({R, K + 1}, rng), S, p, group), DimensionError);
}

TEST_CASE("fuse selection and constant cases") {
  Rng rng(49);
  const Tensor S = random_tensor({1, 5, 4, 4}, rng, false, 4.0);
  fusion::FusionParams p = fusion::FusionParams::init(5);
  for (const auto inst : fusion::all_instruments()) {
    const fusion::Instrument one[] = {inst};
    const Tensor m = fusion::fuse(fusion::one_hot_rows(one), S, p);
    const std::size_t k = static_cast<std::size_t>(inst);
    const Tensor channel = ops::sigmoid(Tensor({16}, {S.values().begin() + k * 16, S.values().begin() + (k + 1) * 16}));
    CHECK(testing::to_vector(m) == testing::to_vector(channel));
  }
  p.beta.mutable_values()[0] = -1.25;
  const Tensor c = fusion::fuse(Tensor::zeros({1, 5}), S, p);
  for (double x : c.values()) CHECK(x == stable_sigmoid(-1.25));
}

TEST_CASE("ideal binary mask") {
  Grid a(1, 3), b(1, 3);
  a.values = {3.0, 1.0, 2.0};
  b.values = {2.0, 4.0, 2.0};
  const Grid mags[] = {a, b};
  CHECK(fusion::ideal_binary_mask(mags, 0).values.values == std::vector<double>{1.0, 0.0, 1.0});
  CHECK(fusion::ideal_binary_mask(mags, 1).values.values == std::vector<double>{0.0, 1.0, 1.0});
  const Grid single[] = {a};
  CHECK(fusion::ideal_binary_mask(single, 0).values.values == std::vector<double>{1.0, 1.0, 1.0});

  // At every bin some source qualifies.
  Rng rng(50);
  std::vector<Grid> many(3, Grid(8, 8));
  for (auto& g : many)
    for (double& v : g.values) v = std::floor(uniform(rng, 0.0, 3.0));
  std::vector<fusion::Mask> masks;
  for (std::size_t i = 0; i < 3; ++i) masks.push_back(fusion::ideal_binary_mask(many, i));
  for (std::size_t j = 0; j < 64; ++j) {
    CHECK(masks[0].values.values[j] + masks[1].values.values[j] + masks[2].values.values[j] >= 1.0);
  }
  const Grid wrong[] = {a, Grid(2, 3)};
  CHECK_THROWS_AS(fusion::ideal_binary_mask(wrong, 0), DimensionError);
}

TEST_CASE("binary cross-entropy") {
  const Tensor y(Shape{4}, {0.0, 1.0, 1.0, 0.0});
  const double perfect = fusion::bce_loss(y, y).item();
  CHECK(perfect > 0.0);
  CHECK(perfect < 2e-7);
  CHECK(fusion::bce_loss(Tensor::full({4}, 0.5), y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(51);
  Tensor p = Tensor::zeros({30}), t = Tensor::zeros({30});
  for (double& v : p.mutable_values()) v = uniform(rng, 0.0, 1.0);
  for (double& v : t.mutable_values()) v = uniform_index(rng, 2) == 0 ? 0.0 : 1.0;
  double expected = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    const double q = std::clamp(p.at(i), 1e-7, 1.0 - 1e-7);
    expected -= t.at(i) * std::log(q) + (1.0 - t.at(i)) * std::log(1.0 - q);
  }
  const double got = fusion::bce_loss(p, t).item();
  CHECK(got >= 0.0);
  CHECK(std::abs(got - expected / 30.0) < 1e-12);
}

TEST_CASE("BCE gradient with respect to logits is (p - y) / count") {
  Rng rng(52);
  Tensor z = random_tensor({12}, rng, true);
  Tensor y = Tensor::zeros({12});
  for (double& v : y.mutable_values()) v = uniform_index(rng, 2);
  GradTape tape;
  GradTape::Scope scope(tape);
  const Tensor p = ops::sigmoid(z);
  tape.backward(fusion::bce_loss(p, y));
  const auto g = tape.grad(z);
  for (std::size_t i = 0; i < 12; ++i) CHECK(g[i] == doctest::Approx((p.at(i) - y.at(i)) / 12.0).epsilon(1e-9));

  Tensor inputs[] = {z};
  const auto r = check_gradients([&] { return fusion::bce_loss(ops::sigmoid(inputs[0]), y); }, inputs);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("BCE gradient vanishes under the clamp") {
  Tensor p(Shape{2}, {0.0, 1.0}, true);
  const Tensor y(Shape{2}, {0.0, 1.0});
  GradTape tape;
  GradTape::Scope scope(tape);
  tape.backward(fusion::bce_loss(p, y));
  for (double g : tape.grad(p)) CHECK(g == 0.0);
}

TEST_CASE("instrument names and one-hot rows") {
  for (const auto inst : fusion::all_instruments()) {
    CHECK(fusion::parse_instrument(fusion::instrument_name(inst)) == inst);
  }
  CHECK_FALSE(fusion::parse_instrument("kazoo").has_value());
  const Tensor v = fusion::one_hot(fusion::Instrument::guitar);
  CHECK(testing::to_vector(v) == std::vector<double>{0, 0, 1, 0, 0});
}
