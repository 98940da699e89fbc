#include "pcsep/gradcheck_suite.hpp"

#include <functional>
#include <set>

#include "pcsep/audio_net.hpp"
#include "pcsep/fusion.hpp"
#include "pcsep/gradcheck.hpp"
#include "pcsep/vision_net.hpp"

namespace pcsep {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kNetTolerance = 1e-3;

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double stddev = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_values()) v = normal(rng, 0.0, stddev);
  return t;
}

sparse::SparseTensor3 random_sparse(Rng& rng, std::size_t points, int extent, std::size_t channels,
                                    std::int32_t batches = 1) {
  std::set<sparse::Coord> seen;
  std::vector<sparse::Coord> coords;
  while (coords.size() < points) {
    sparse::Coord c{static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(batches))),
                    static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(extent))),
                    static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(extent))),
                    static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(extent)))};
    if (seen.insert(c).second) coords.push_back(c);
  }
  return {sparse::CoordSet::create(std::move(coords)), random_tensor({points, channels}, rng), 1.0};
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed) {}

  // build receives a fresh stream and returns the inputs plus a loss closure.
  void add(const std::string& name, double tolerance,
           const std::function<std::function<Tensor()>(Rng&, std::vector<Tensor>&)>& build,
           std::size_t max_entries = 0) {
    Rng rng = derive_stream(seed_, {cases_.size()});
    std::vector<Tensor> inputs;
    auto loss = build(rng, inputs);
    GradCheckOptions opts;
    opts.max_entries_per_input = max_entries;
    const GradCheckResult r = check_gradients(loss, inputs, opts);
    cases_.push_back({name, r.max_rel_error, tolerance, r.entries_checked, r.worst});
  }

  std::vector<GradCheckCase> take() { return std::move(cases_); }

 private:
  std::uint64_t seed_;
  std::vector<GradCheckCase> cases_;
};

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, bool networks) {
  Suite suite(seed);
  using Inputs = std::vector<Tensor>;
  using Loss = std::function<Tensor()>;

  suite.add("conv2d", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({2, 3, 7, 6}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)};
    Tensor w = random_tensor({2, 4, 4, 3}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::conv2d(in[0], in[1], 2, 1, in[2]), w)); };
  });
  suite.add("conv2d_transpose", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({2, 4, 3, 3}, rng), random_tensor({4, 3, 4, 4}, rng)};
    Tensor w = random_tensor({2, 3, 6, 6}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::conv2d_transpose(in[0], in[1], 2, 1), w)); };
  });
  suite.add("batch_norm.train", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({3, 2, 4, 3}, rng), random_tensor({2}, rng), random_tensor({2}, rng)};
    Tensor w = random_tensor({3, 2, 4, 3}, rng, false);
    auto state = std::make_shared<ops::BatchNormState>(2);
    return [in, w, state] {
      return ops::sum(ops::mul(ops::batch_norm(in[0], in[1], in[2], *state, ops::Mode::train), w));
    };
  });
  suite.add("batch_norm.eval", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({3, 2, 4}, rng), random_tensor({2}, rng), random_tensor({2}, rng)};
    Tensor w = random_tensor({3, 2, 4}, rng, false);
    auto state = std::make_shared<ops::BatchNormState>(2);
    state->running_mean = {0.3, -0.2};
    state->running_var = {1.5, 0.7};
    return [in, w, state] {
      return ops::sum(ops::mul(ops::batch_norm(in[0], in[1], in[2], *state, ops::Mode::eval), w));
    };
  });
  for (auto kind : {ops::Activation::relu, ops::Activation::leaky_relu, ops::Activation::sigmoid}) {
    const char* name = kind == ops::Activation::relu ? "relu" : kind == ops::Activation::leaky_relu ? "leaky_relu"
                                                                                                      : "sigmoid";
    suite.add(name, kOpTolerance, [kind](Rng& rng, Inputs& in) -> Loss {
      in = {random_tensor({5, 7}, rng)};
      Tensor w = random_tensor({5, 7}, rng, false);
      return [in, w, kind] { return ops::sum(ops::mul(ops::activation(in[0], kind), w)); };
    });
  }
  suite.add("max_pool2d", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({2, 2, 4, 6}, rng)};
    Tensor w = random_tensor({2, 2, 2, 3}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::max_pool2d(in[0], 2), w)); };
  });
  suite.add("upsample_nearest", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({2, 2, 3, 2}, rng)};
    Tensor w = random_tensor({2, 2, 6, 4}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::upsample_nearest(in[0], 2), w)); };
  });
  suite.add("concat_channels", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({2, 1, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)};
    Tensor w = random_tensor({2, 4, 3, 3}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::concat_channels(in), w)); };
  });
  suite.add("add_mul_scale_mean", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    return [in] { return ops::mean(ops::scale(ops::mul(ops::add(in[0], in[1]), in[1]), 1.7)); };
  });
  suite.add("reshape", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({3, 4}, rng)};
    Tensor w = random_tensor({2, 6}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::reshape(in[0], {2, 6}), w)); };
  });
  suite.add("group_max_rows", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({6, 4}, rng)};
    Tensor w = random_tensor({2, 4}, rng, false);
    return [in, w] { return ops::sum(ops::mul(ops::group_max_rows(in[0], 3), w)); };
  });
  suite.add("softmax_cross_entropy", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({4, 5}, rng)};
    return [in] {
      const std::size_t labels[] = {0, 3, 4, 1};
      return ops::softmax_cross_entropy(in[0], labels);
    };
  });

  for (int stride : {1, 2}) {
    suite.add("sparse_conv3d.stride" + std::to_string(stride), kOpTolerance, [stride](Rng& rng, Inputs& in) -> Loss {
      auto x = random_sparse(rng, 40, 6, 3, 2);
      in = {x.feats, random_tensor({27, 3, 2}, rng), random_tensor({2}, rng)};
      auto coords = x.coords;
      const std::size_t out_n = coords->downsample(stride)->size();
      Tensor w = random_tensor({out_n, 2}, rng, false);
      return [in, coords, w, stride] {
        sparse::SparseTensor3 t{coords, in[0], 1.0};
        auto y = sparse::sparse_conv3d(t, sparse::SparseKernel{in[1], 1}, stride, in[2]);
        return ops::sum(ops::mul(y.feats, w));
      };
    });
  }
  suite.add("sparse_batchnorm_relu_add", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    auto x = random_sparse(rng, 30, 5, 3);
    in = {x.feats, random_tensor({30, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)};
    auto coords = x.coords;
    Tensor w = random_tensor({30, 3}, rng, false);
    auto state = std::make_shared<ops::BatchNormState>(3);
    return [in, coords, w, state] {
      sparse::SparseTensor3 a{coords, in[0], 1.0}, b{coords, in[1], 1.0};
      auto y = sparse::sparse_add(sparse::sparse_relu(sparse::sparse_batchnorm(a, in[2], in[3], *state,
                                                                               ops::Mode::train)),
                                  b);
      return ops::sum(ops::mul(y.feats, w));
    };
  });
  suite.add("global_maxpool", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    auto x = random_sparse(rng, 30, 5, 3, 3);
    in = {x.feats};
    auto coords = x.coords;
    Tensor w = random_tensor({3, 3}, rng, false);
    return [in, coords, w] {
      return ops::sum(ops::mul(sparse::global_maxpool({coords, in[0], 1.0}), w));
    };
  });
  suite.add("stack_frames", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    auto a = random_sparse(rng, 10, 4, 2);
    auto b = random_sparse(rng, 7, 4, 2);
    in = {a.feats, b.feats};
    Tensor w = random_tensor({17, 2}, rng, false);
    auto ca = a.coords, cb = b.coords;
    return [in, ca, cb, w] {
      const sparse::SparseTensor3 frames[] = {{ca, in[0], 1.0}, {cb, in[1], 1.0}};
      return ops::sum(ops::mul(vision::stack_frames(frames).feats, w));
    };
  });
  suite.add("residual_block", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    auto x = random_sparse(rng, 40, 6, 2);
    auto block = std::make_shared<vision::ResidualBlockParams>(vision::ResidualBlockParams::init(2, 3, 2, rng));
    for (auto* t : {&block->first.norm.gamma, &block->first.norm.beta, &block->second.norm.beta}) {
      for (double& v : t->mutable_values()) v += normal(rng, 0.0, 0.3);
    }
    in = {x.feats, block->first.conv.weights, block->second.conv.weights, block->shortcut->conv.weights,
          block->first.norm.gamma, block->second.norm.beta};
    auto coords = x.coords;
    const std::size_t out_n = coords->downsample(2)->size();
    Tensor w = random_tensor({out_n, 3}, rng, false);
    return [in, coords, w, block] {
      auto y = vision::residual_block({coords, in[0], 1.0}, *block, ops::Mode::train);
      return ops::sum(ops::mul(y.feats, w));
    };
  });
  suite.add("fuse_logits", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({4, 3}, rng), random_tensor({2, 3, 3, 4}, rng), random_tensor({3}, rng),
          random_tensor({1}, rng)};
    Tensor w = random_tensor({4, 3, 4}, rng, false);
    return [in, w] {
      fusion::FusionParams p{in[2], in[3]};
      return ops::sum(ops::mul(fusion::fuse_logits(in[0], in[1], p, 2), w));
    };
  });
  suite.add("fuse_bce", kOpTolerance, [](Rng& rng, Inputs& in) -> Loss {
    in = {random_tensor({2, 3}, rng), random_tensor({1, 3, 4, 4}, rng), random_tensor({3}, rng),
          random_tensor({1}, rng)};
    Tensor y = Tensor::zeros({2, 4, 4});
    for (double& v : y.mutable_values()) v = uniform_index(rng, 2) ? 1.0 : 0.0;
    return [in, y] {
      fusion::FusionParams p{in[2], in[3]};
      return fusion::bce_loss(fusion::fuse(in[0], in[1], p, 2), y);
    };
  });

  if (networks) {
    suite.add(
        "vision_net.micro", kNetTolerance,
        [](Rng& rng, Inputs& in) -> Loss {
          vision::VisionConfig vc;
          vc.base_channels = 2;
          vc.K = 4;
          auto net = std::make_shared<vision::VisionNet>(vc, rng);
          std::vector<ParamRef> params;
          std::vector<BufferRef> buffers;
          net->collect(params, buffers);
          for (auto& p : params) {
            if (p.name.find(".bn.") != std::string::npos) {
              for (double& v : p.tensor.mutable_values()) v += normal(rng, 0.0, 0.2);
            }
          }
          auto x = random_sparse(rng, 60, 8, 3, 2);
          in = {x.feats};
          for (auto& p : params) in.push_back(p.tensor);
          auto coords = x.coords;
          Tensor w = random_tensor({1, 4}, rng, false);
          return [in, coords, w, net] {
            return ops::sum(ops::mul(net->encode_videos({coords, in[0], 1.0}, 2, ops::Mode::train).v, w));
          };
        },
        24);
    suite.add(
        "audio_net.micro", kNetTolerance,
        [](Rng& rng, Inputs& in) -> Loss {
          audio::UNetConfig uc;
          uc.levels = 3;
          uc.K = 3;
          uc.base_channels = 2;
          auto net = std::make_shared<audio::UNet>(uc, rng);
          std::vector<ParamRef> params;
          std::vector<BufferRef> buffers;
          net->collect(params, buffers);
          for (auto& p : params) {
            if (p.name.find(".bn.") != std::string::npos || p.name == "audio.out.bias") {
              for (double& v : p.tensor.mutable_values()) v += normal(rng, 0.0, 0.2);
            }
          }
          in = {random_tensor({2, 1, 16, 16}, rng)};
          for (auto& p : params) in.push_back(p.tensor);
          Tensor w = random_tensor({2, 3, 16, 16}, rng, false);
          return [in, w, net] { return ops::sum(ops::mul(net->forward(in[0], ops::Mode::train), w)); };
        },
        24);
  }
  return suite.take();
}

}  // namespace pcsep
