// Command-line front end: train, evaluate, separate, oracle-ibm, gradcheck,
// voxel-stats, synth and warmup.

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcsep/config.hpp"
#include "pcsep/errors.hpp"
#include "pcsep/evaluate.hpp"
#include "pcsep/gradcheck_suite.hpp"
#include "pcsep/log.hpp"
#include "pcsep/ply.hpp"
#include "pcsep/synthetic.hpp"
#include "pcsep/trainer.hpp"
#include "pcsep/wav.hpp"

namespace fs = std::filesystem;
using namespace pcsep;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct TrainFlags {
  std::string config_path;
  std::string manifest;
  std::string out_dir = "run";
  std::string resume;
  std::string vision_init;
  std::optional<std::size_t> iterations, batch_size, K, N, F, seed;
  std::optional<double> lr_vision, lr_rest;
  std::optional<std::string> conditioning;
};

train::TrainConfig resolve_config(const TrainFlags& f) {
  train::TrainConfig c = f.config_path.empty() ? train::TrainConfig{} : config::load_file(f.config_path);
  config::apply_env(c);
  if (f.iterations) c.iterations = *f.iterations;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.K) c.K = *f.K;
  if (f.N) c.N = *f.N;
  if (f.F) c.F = *f.F;
  if (f.seed) c.seed = *f.seed;
  if (f.lr_vision) c.lr_vision = *f.lr_vision;
  if (f.lr_rest) c.lr_rest = *f.lr_rest;
  if (f.conditioning) c.conditioning = train::parse_conditioning(*f.conditioning);
  c.validate();
  return c;
}

std::vector<data::ManifestEntry> manifest_entries(const std::string& path) {
  if (path.empty()) throw ConfigError("--manifest is required");
  return data::resolve_splits(data::read_manifest(path));
}

int run_train(const TrainFlags& f) {
  const train::TrainConfig c = resolve_config(f);
  const auto entries = manifest_entries(f.manifest);
  train::Trainer trainer(c, data::load_split(entries, data::Split::train),
                         data::load_split(entries, data::Split::validation));
  if (!f.resume.empty()) {
    trainer.restore(Checkpoint::load(f.resume));
    log_info("resumed at iteration " + std::to_string(trainer.iteration()));
  } else if (!f.vision_init.empty()) {
    if (!trainer.model().vision()) throw ConfigError("--vision-init needs a vision-conditioned model");
    const Checkpoint init = Checkpoint::load(f.vision_init);
    std::vector<ParamRef> params;
    std::vector<BufferRef> buffers;
    trainer.model().vision()->collect(params, buffers);
    for (auto& p : params) {
      if (p.name.starts_with("vision.head")) continue;
      const auto& a = init.get("param/" + p.name);
      if (a.values.size() != p.tensor.numel()) throw DataError("vision init shape mismatch for " + p.name);
      std::copy(a.values.begin(), a.values.end(), p.tensor.mutable_values().begin());
    }
  }
  fs::create_directories(f.out_dir);
  std::ofstream(fs::path(f.out_dir) / "config.json") << config::to_json(c) << '\n';
  trainer.run(fs::path(f.out_dir));
  std::cout << "final train loss " << trainer.train_curve().back().loss << "\n";
  std::cout << "best validation loss " << trainer.best_validation() << "\n";
  return 0;
}

std::unique_ptr<train::Model> load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required for learned methods");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  const Checkpoint ckpt = Checkpoint::load(path);
  auto model = std::make_unique<train::Model>(train::load_config(ckpt));
  model->load(ckpt);
  return model;
}

void write_reports(const std::string& prefix, const std::vector<metrics::MetricReport>& rows,
                   const std::vector<metrics::Aggregate>& aggs) {
  metrics::write_tsv(std::cout, rows, aggs);
  if (prefix.empty()) return;
  std::ofstream tsv(prefix + ".tsv"), json(prefix + ".json");
  if (!tsv || !json) throw DataError("cannot write report " + prefix);
  metrics::write_tsv(tsv, rows, aggs);
  metrics::write_json(json, rows, aggs);
}

struct EvalFlags {
  std::string checkpoint, manifest, out, method = "depth";
  std::size_t items = 20, N = 2, F = 1, seed = 1;
};

int run_evaluate(const EvalFlags& f, const std::vector<std::string>& methods) {
  const auto entries = manifest_entries(f.manifest);
  const data::Dataset test = data::load_split(entries, data::Split::test);
  const auto items = eval::test_items(test, {f.items, f.N, f.F, f.seed});
  std::unique_ptr<train::Model> model;
  std::vector<metrics::MetricReport> all;
  std::vector<metrics::Aggregate> aggs;
  for (const auto& name : methods) {
    const eval::Method m = eval::parse_method(name);
    if (eval::required_conditioning(m) && !model) model = load_model(f.checkpoint);
    auto rows = eval::evaluate(m, model.get(), items);
    aggs.push_back(metrics::aggregate(rows));
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_reports(f.out, all, aggs);
  return 0;
}

// Frequency on the vertical axis with high bins at the top, time left to right.
void write_pgm(const fs::path& path, const Grid& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << mask.rows << ' ' << mask.cols << "\n255\n";
  for (std::size_t f = mask.cols; f-- > 0;) {
    for (std::size_t t = 0; t < mask.rows; ++t) {
      const double v = std::clamp(mask(t, f), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

dsp::AudioClip load_snippet(const std::string& path) {
  dsp::AudioClip clip = dsp::resample_mono(dsp::read_wav(path));
  if (clip.size() < dsp::kSnippetLength) {
    log_warning(path + " is shorter than one snippet; zero-padding to " + std::to_string(dsp::kSnippetLength));
    clip.samples.resize(dsp::kSnippetLength, 0.0);
  }
  return dsp::crop_snippet(clip, 0);
}

std::vector<sparse::PointCloudFrame> load_frames(const std::string& dir, const std::string& axes) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".ply") files.push_back(e.path());
  } else {
    files.push_back(dir);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .ply frames in " + dir);
  const auto conv = data::AxisConvention::parse(axes);
  std::vector<sparse::PointCloudFrame> frames;
  for (const auto& f : files) frames.push_back(data::preprocess_frame(sparse::read_ply(f), conv));
  return frames;
}

struct SeparateFlags {
  std::string mixture, frames, label, checkpoint, out = "separated.wav", mask_image, axes = "x,y,z";
  bool ones = false;
  std::vector<std::string> ibm_sources;
  std::size_t target = 0;
};

int run_separate(const SeparateFlags& f) {
  if (f.mixture.empty() && f.ibm_sources.empty()) throw ConfigError("--mixture or --ibm-sources is required");
  Grid mask;
  dsp::AudioClip mixture;
  if (!f.ibm_sources.empty()) {
    // Oracle path: the mixture is the sum of the given sources.
    std::vector<dsp::AudioClip> sources;
    for (const auto& s : f.ibm_sources) sources.push_back(load_snippet(s));
    if (f.target >= sources.size()) throw ConfigError("--target is out of range");
    mixture = dsp::AudioClip{std::vector<double>(dsp::kSnippetLength, 0.0), dsp::kSampleRate};
    std::vector<Grid> mags;
    for (const auto& s : sources) {
      for (std::size_t i = 0; i < s.size(); ++i) mixture.samples[i] += s.samples[i];
      mags.push_back(dsp::warped_magnitude(s));
    }
    mask = fusion::ideal_binary_mask(mags, f.target).values;
  } else {
    mixture = load_snippet(f.mixture);
    if (f.ones) {
      mask = Grid(dsp::kFrames, dsp::kWarpBins, 1.0);
    } else {
      auto model = load_model(f.checkpoint);
      Tensor v;
      if (!f.label.empty()) {
        if (model->config().conditioning != train::Conditioning::label) {
          throw ConfigError("--label needs a label-conditioned checkpoint");
        }
        const auto inst = fusion::parse_instrument(f.label);
        if (!inst) throw ConfigError("unknown instrument '" + f.label + "'");
        const fusion::Instrument one[] = {*inst};
        v = fusion::one_hot_rows(one);
      } else {
        if (f.frames.empty()) throw ConfigError("--frames or --label is required");
        v = model->visual_conditioning(load_frames(f.frames, f.axes), ops::Mode::eval);
      }
      mask = fusion::mask_from_tensor(model->masks_for(dsp::warped_magnitude(mixture), v, ops::Mode::eval), 0).values;
    }
  }
  dsp::write_wav(f.out, dsp::separate(mixture, mask));
  if (!f.mask_image.empty()) write_pgm(f.mask_image, mask);
  std::cout << "wrote " << f.out << "\n";
  return 0;
}

int run_gradcheck(std::size_t seed, bool networks) {
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(seed, networks)) {
    std::printf("%-28s max_rel_err %.3e (tol %.0e, %zu entries) %s\n", c.name.c_str(), c.max_rel_error, c.tolerance,
                c.entries, c.passed() ? "ok" : "FAIL");
    if (!c.passed()) {
      std::printf("  worst: %s\n", c.worst.c_str());
      ok = false;
    }
  }
  return ok ? 0 : kExitNumerical;
}

int run_voxel_stats(const std::string& path, double voxel_size, bool normalize) {
  sparse::PointCloudFrame frame = sparse::read_ply(path);
  if (normalize) frame = data::preprocess_frame(frame);
  const auto vox = sparse::voxelize(frame, voxel_size);
  std::array<std::int32_t, 3> lo{INT32_MAX, INT32_MAX, INT32_MAX}, hi{INT32_MIN, INT32_MIN, INT32_MIN};
  for (const auto& c : vox.coords->coords()) {
    const std::array<std::int32_t, 3> p{c.x, c.y, c.z};
    for (std::size_t i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], p[i]);
      hi[i] = std::max(hi[i], p[i]);
    }
  }
  double volume = 1.0;
  for (std::size_t i = 0; i < 3; ++i) volume *= static_cast<double>(hi[i] - lo[i] + 1);
  std::printf("points\t%zu\nvoxels\t%zu\npoints_per_voxel\t%.4f\nextent\t%dx%dx%d\noccupancy\t%.6f\n", frame.size(),
              vox.size(), static_cast<double>(frame.size()) / static_cast<double>(vox.size()), hi[0] - lo[0] + 1,
              hi[1] - lo[1] + 1, hi[2] - lo[2] + 1, static_cast<double>(vox.size()) / volume);
  return 0;
}

// Shape classification on synthetic clouds; the trained trunk can seed
// `train --vision-init`.
int run_warmup(const std::string& out, std::size_t iterations, std::size_t seed, std::size_t base, double lr) {
  vision::VisionConfig vc;
  vc.base_channels = base;
  vc.K = fusion::kInstrumentCount;
  vc.voxel_size = 0.05;
  Rng init = derive_stream(seed, {0});
  vision::VisionNet net(vc, init);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  net.collect(params, buffers);
  std::map<std::string, std::vector<double>> momentum;
  for (std::size_t it = 0; it < iterations; ++it) {
    Rng rng = derive_stream(seed, {1, it});
    std::vector<sparse::PointCloudFrame> frames;
    std::vector<std::size_t> labels;
    for (const auto inst : fusion::all_instruments()) {
      const auto prof = synth::profile_of(inst);
      auto frame = data::preprocess_frame(synth::shape_cloud(prof.shape, 300, prof.color, rng));
      frames.push_back(data::augment_coords(frame, data::AugmentParams::sample(rng)));
      labels.push_back(static_cast<std::size_t>(inst));
    }
    for (auto& p : params) p.tensor.zero_grad();
    double loss_value;
    {
      GradTape tape;
      GradTape::Scope scope(tape);
      Tensor logits = net.encode_frames(sparse::voxelize_batch(frames, vc.voxel_size, vc.feature_source),
                                        ops::Mode::train);
      Tensor loss = ops::softmax_cross_entropy(logits, labels);
      loss_value = loss.item();
      tape.backward(loss);
      std::vector<Tensor> leaves;
      for (const auto& p : params) leaves.push_back(p.tensor);
      tape.accumulate_into_leaves(leaves);
    }
    train::sgd_step(params, momentum, lr, lr, 0.9);
    if ((it + 1) % 10 == 0) log_info("warmup " + std::to_string(it + 1) + " loss " + std::to_string(loss_value));
  }
  Checkpoint ckpt;
  for (auto& p : params) {
    ckpt.put("param/" + p.name, std::vector<std::uint64_t>(p.tensor.shape().begin(), p.tensor.shape().end()),
             std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()));
  }
  ckpt.save(out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud conditioned music source separation"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train with mix-and-separate on a manifest");
  train_cmd->add_option("--config", tf.config_path, "JSON config file");
  train_cmd->add_option("--manifest", tf.manifest, "Dataset manifest (CSV)")->required();
  train_cmd->add_option("--out", tf.out_dir, "Output directory for checkpoints and loss curves");
  train_cmd->add_option("--resume", tf.resume, "Checkpoint to resume from");
  train_cmd->add_option("--vision-init", tf.vision_init, "Warmup checkpoint for the vision trunk");
  train_cmd->add_option("--iterations", tf.iterations);
  train_cmd->add_option("--batch-size", tf.batch_size);
  train_cmd->add_option("--K", tf.K);
  train_cmd->add_option("--N", tf.N);
  train_cmd->add_option("--F", tf.F);
  train_cmd->add_option("--seed", tf.seed);
  train_cmd->add_option("--lr-vision", tf.lr_vision);
  train_cmd->add_option("--lr-rest", tf.lr_rest);
  train_cmd->add_option("--conditioning", tf.conditioning, "depth | rgb-depth | label");

  EvalFlags ef;
  std::vector<std::string> methods;
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics on test-split mixtures");
  eval_cmd->add_option("--checkpoint", ef.checkpoint);
  eval_cmd->add_option("--manifest", ef.manifest)->required();
  eval_cmd->add_option("--method", methods, "depth | rgb-depth | label | ibm | ones (repeatable)")->required();
  eval_cmd->add_option("--items", ef.items);
  eval_cmd->add_option("--N", ef.N);
  eval_cmd->add_option("--F", ef.F);
  eval_cmd->add_option("--seed", ef.seed);
  eval_cmd->add_option("--out", ef.out, "Report prefix; writes <prefix>.tsv and <prefix>.json");

  EvalFlags of;
  auto* oracle_cmd = app.add_subcommand("oracle-ibm", "Ideal-binary-mask oracle and all-ones baseline");
  oracle_cmd->add_option("--manifest", of.manifest)->required();
  oracle_cmd->add_option("--items", of.items);
  oracle_cmd->add_option("--N", of.N);
  oracle_cmd->add_option("--seed", of.seed);
  oracle_cmd->add_option("--out", of.out);

  SeparateFlags sf;
  auto* sep_cmd = app.add_subcommand("separate", "Separate one source from a mixture WAV");
  sep_cmd->add_option("--mixture", sf.mixture);
  sep_cmd->add_option("--frames", sf.frames, "PLY file or directory of frames");
  sep_cmd->add_option("--axes", sf.axes, "Axis convention of the frames, e.g. x,y,z");
  sep_cmd->add_option("--label", sf.label, "Instrument name for label conditioning");
  sep_cmd->add_option("--checkpoint", sf.checkpoint);
  sep_cmd->add_flag("--ones-mask", sf.ones, "Apply the all-ones mask");
  sep_cmd->add_option("--ibm-sources", sf.ibm_sources, "Clean sources; mixes them and applies the oracle mask");
  sep_cmd->add_option("--target", sf.target, "Source index for --ibm-sources");
  sep_cmd->add_option("--out", sf.out);
  sep_cmd->add_option("--mask-image", sf.mask_image, "Write the mask as a PGM image");

  std::size_t gc_seed = 1;
  bool gc_ops_only = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_flag("--ops-only", gc_ops_only);

  std::string vs_path;
  double vs_size = 0.05;
  bool vs_normalize = false;
  auto* vs_cmd = app.add_subcommand("voxel-stats", "Voxelization statistics of a PLY frame");
  vs_cmd->add_option("ply", vs_path)->required();
  vs_cmd->add_option("--voxel-size", vs_size);
  vs_cmd->add_flag("--normalize", vs_normalize, "Center and scale into [-1,1]^3 first");

  std::string synth_dir = "synthetic";
  synth::SynthConfig sc;
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic two-instrument dataset");
  synth_cmd->add_option("--out", synth_dir);
  synth_cmd->add_option("--seed", sc.seed);
  synth_cmd->add_option("--recordings", sc.recordings_per_instrument);
  synth_cmd->add_option("--videos", sc.videos_per_instrument);

  std::string warm_out = "warmup.ckpt";
  std::size_t warm_iters = 200, warm_seed = 1, warm_base = 16;
  double warm_lr = 1e-2;
  auto* warm_cmd = app.add_subcommand("warmup", "Synthetic shape classification for the vision trunk");
  warm_cmd->add_option("--out", warm_out);
  warm_cmd->add_option("--iterations", warm_iters);
  warm_cmd->add_option("--seed", warm_seed);
  warm_cmd->add_option("--base-channels", warm_base);
  warm_cmd->add_option("--lr", warm_lr);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return run_train(tf);
    if (*eval_cmd) {
      ef.method.clear();
      return run_evaluate(ef, methods);
    }
    if (*oracle_cmd) return run_evaluate(of, {"ibm", "ones"});
    if (*sep_cmd) return run_separate(sf);
    if (*gc_cmd) return run_gradcheck(gc_seed, !gc_ops_only);
    if (*vs_cmd) return run_voxel_stats(vs_path, vs_size, vs_normalize);
    if (*synth_cmd) {
      std::cout << "wrote " << synth::write_dataset(synth_dir, sc).string() << "\n";
      return 0;
    }
    if (*warm_cmd) return run_warmup(warm_out, warm_iters, warm_seed, warm_base, warm_lr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
