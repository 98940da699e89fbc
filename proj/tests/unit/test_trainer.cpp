#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "pcsep/config.hpp"
#include "pcsep/errors.hpp"
#include "pcsep/synthetic.hpp"
#include "pcsep/trainer.hpp"

using namespace pcsep;
using namespace pcsep::train;

namespace {

TrainConfig tiny(Conditioning c = Conditioning::depth) {
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.K = 3;
  cfg.conditioning = c;
  cfg.vision_base_channels = 2;
  cfg.unet_base_channels = 2;
  cfg.unet_levels = 5;
  cfg.voxel_size = 0.2;
  cfg.augment = false;
  cfg.validation_batches = 1;
  cfg.seed = 5;
  cfg.lr_vision = 0.01;
  cfg.lr_rest = 0.01;
  cfg.validate();
  return cfg;
}

synth::SynthConfig small_data() {
  synth::SynthConfig s;
  s.recordings_per_instrument = 1;
  s.videos_per_instrument = 1;
  s.frames_per_video = 2;
  s.points = 120;
  return s;
}

Trainer make_trainer(const TrainConfig& cfg) {
  return Trainer(cfg, synth::make_dataset(small_data(), data::Split::train),
                 synth::make_dataset(small_data(), data::Split::validation));
}

std::vector<double> snapshot(Model& m) {
  std::vector<double> all;
  for (const auto& p : m.params()) all.insert(all.end(), p.tensor.values().begin(), p.tensor.values().end());
  for (const auto& b : m.buffers()) all.insert(all.end(), b.values->begin(), b.values->end());
  return all;
}

}  // namespace

TEST_CASE("SGD with zero gradients leaves parameters alone") {
  std::vector<ParamRef> params{{"a", Tensor(Shape{3}, {1.0, 2.0, 3.0}, true), ParamGroup::rest}};
  params[0].tensor.mutable_grad();
  std::map<std::string, std::vector<double>> buffers;
  sgd_step(params, buffers, 0.1, 0.1, 0.9);
  CHECK(std::vector<double>(params[0].tensor.values().begin(), params[0].tensor.values().end()) ==
        std::vector<double>{1.0, 2.0, 3.0});
  CHECK(buffers["a"] == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("SGD momentum recursion") {
  // Quadratic f(p) = p^2 / 2 has gradient p.
  std::vector<ParamRef> params{{"p", Tensor(Shape{1}, {1.0}, true), ParamGroup::rest}};
  std::map<std::string, std::vector<double>> buffers;
  const double lr = 0.1, mu = 0.9;
  double p = 1.0, buf = 0.0;
  for (int t = 0; t < 3; ++t) {
    params[0].tensor.zero_grad();
    params[0].tensor.mutable_grad()[0] = params[0].tensor.at(0);
    sgd_step(params, buffers, 0.5, lr, mu);
    buf = mu * buf + p;
    p -= lr * buf;
    CHECK(std::abs(params[0].tensor.at(0) - p) < 1e-12);
  }
  // 1 -> 0.9 -> 0.72 -> 0.486 by hand.
  CHECK(p == doctest::Approx(0.486));
}

TEST_CASE("SGD learning-rate groups") {
  std::vector<ParamRef> params{{"v", Tensor(Shape{1}, {0.0}, true), ParamGroup::vision},
                               {"r", Tensor(Shape{1}, {0.0}, true), ParamGroup::rest}};
  for (auto& p : params) p.tensor.mutable_grad()[0] = 1.0;
  std::map<std::string, std::vector<double>> buffers;
  sgd_step(params, buffers, 0.01, 0.3, 0.0);
  CHECK(params[0].tensor.at(0) == doctest::Approx(-0.01));
  CHECK(params[1].tensor.at(0) == doctest::Approx(-0.3));
}

TEST_CASE("non-finite gradient names the parameter and updates nothing") {
  std::vector<ParamRef> params{{"fine", Tensor(Shape{1}, {1.0}, true), ParamGroup::rest},
                               {"unet.enc0.conv.weight", Tensor(Shape{2}, {1.0, 1.0}, true), ParamGroup::rest}};
  params[0].tensor.mutable_grad()[0] = 1.0;
  params[1].tensor.mutable_grad()[1] = std::nan("");
  std::map<std::string, std::vector<double>> buffers;
  try {
    sgd_step(params, buffers, 0.1, 0.1, 0.9);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("unet.enc0.conv.weight") != std::string::npos);
  }
  CHECK(params[0].tensor.at(0) == 1.0);
}

TEST_CASE("config validation and sources") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig label;
  label.conditioning = Conditioning::label;
  label.validate();
  CHECK(label.K == 5);

  TrainConfig j;
  config::apply_json(j, R"({"iterations": 7, "lr_rest": 0.5, "conditioning": "rgb-depth"})");
  CHECK(j.iterations == 7);
  CHECK(j.lr_rest == 0.5);
  CHECK(j.conditioning == Conditioning::rgb_depth);
  CHECK_THROWS_AS(config::apply_json(j, R"({"learning_rate": 1})"), ConfigError);
  CHECK_THROWS_AS(config::apply_json(j, R"({"iterations": "many"})"), ConfigError);
  CHECK_THROWS_AS(config::apply_json(j, "[1, 2]"), ConfigError);

  TrainConfig back;
  config::apply_json(back, config::to_json(j));
  CHECK(back.iterations == 7);
  CHECK(back.conditioning == Conditioning::rgb_depth);

  ::setenv("PCSEP_SEED", "12345", 1);
  config::apply_env(j);
  CHECK(j.seed == 12345);
  ::setenv("PCSEP_SEED", "twelve", 1);
  CHECK_THROWS_AS(config::apply_env(j), ConfigError);
  ::unsetenv("PCSEP_SEED");
}

TEST_CASE("checkpoint container round trip") {
  Checkpoint c;
  c.put("a/b", {2, 2}, {1.0, -2.5, 1e-300, 3.0});
  c.put_scalar("s", 0.1);
  std::stringstream ss;
  c.write(ss);
  const Checkpoint d = Checkpoint::read(ss);
  CHECK(d.get("a/b").shape == std::vector<std::uint64_t>{2, 2});
  CHECK(d.get("a/b").values == c.get("a/b").values);
  CHECK(d.get_scalar("s") == 0.1);
  CHECK_FALSE(d.contains("missing"));

  std::stringstream bad("PCSEP999");
  CHECK_THROWS(Checkpoint::read(bad));
  std::string bytes;
  {
    std::stringstream full;
    c.write(full);
    bytes = full.str();
  }
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(Checkpoint::read(cut));
}

TEST_CASE("large seeds survive a checkpoint") {
  TrainConfig c = tiny();
  c.seed = 0xFEDCBA9876543211ULL;
  Checkpoint ckpt;
  save_config(ckpt, c);
  CHECK(load_config(ckpt).seed == c.seed);
}

TEST_CASE("validation does not touch parameters or statistics") {
  Trainer t = make_trainer(tiny());
  t.step();
  const auto before = snapshot(t.model());
  const double a = t.validate();
  const double b = t.validate();
  CHECK(snapshot(t.model()) == before);
  CHECK(a == b);
  CHECK(t.validation_curve().size() == 2);
}

TEST_CASE("restored trainer continues identically") {
  const TrainConfig cfg = tiny(Conditioning::rgb_depth);
  Trainer a = make_trainer(cfg);
  a.step();
  std::stringstream ss;
  a.state().write(ss);
  const double next = a.step();

  Trainer b = make_trainer(cfg);
  b.restore(Checkpoint::read(ss));
  CHECK(b.iteration() == 1);
  CHECK(b.step() == next);
  CHECK(snapshot(b.model()) == snapshot(a.model()));

  TrainConfig other = cfg;
  other.K = 4;
  Trainer c = make_trainer(other);
  CHECK_THROWS_AS(c.restore(a.state()), ConfigError);
}

TEST_CASE("batches depend only on seed and iteration") {
  Trainer a = make_trainer(tiny());
  Trainer b = make_trainer(tiny());
  b.step();
  const auto x = a.batch(3), y = b.batch(3);
  CHECK(x[0].mixture.samples == y[0].mixture.samples);
  CHECK(x[0].instruments == y[0].instruments);
}

TEST_CASE("label conditioning has no vision branch") {
  Model m(tiny(Conditioning::label));
  CHECK(m.vision() == nullptr);
  CHECK(m.config().K == 5);
  for (const auto& p : m.params()) CHECK(p.group == ParamGroup::rest);
}
