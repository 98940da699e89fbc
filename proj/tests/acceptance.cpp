// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. `acceptance <name>` runs a single criterion.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pcsep/dsp.hpp"
#include "pcsep/evaluate.hpp"
#include "pcsep/fusion.hpp"
#include "pcsep/gradcheck_suite.hpp"
#include "pcsep/log.hpp"
#include "pcsep/metrics.hpp"
#include "pcsep/synthetic.hpp"
#include "pcsep/trainer.hpp"

using namespace pcsep;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome sparse_conv_oracle() {
  Rng rng = derive_stream(11, {});
  double worst = 0.0;
  std::size_t outputs = 0;
  for (int t = 0; t < 100; ++t) {
    const int extent = 2 + static_cast<int>(uniform_index(rng, 8));  // up to 9
    const std::size_t cin = 1 + uniform_index(rng, 4);
    const std::size_t cout = 1 + uniform_index(rng, 4);
    const int half = 1 + static_cast<int>(uniform_index(rng, 2));
    const int stride = 1 + static_cast<int>(uniform_index(rng, 2));
    const std::int32_t batches = 1 + static_cast<std::int32_t>(uniform_index(rng, 2));
    const std::size_t cells = static_cast<std::size_t>(extent * extent * extent);
    const std::size_t points = 1 + uniform_index(rng, std::min<std::size_t>(cells, 60));
    std::set<sparse::Coord> seen;
    std::vector<sparse::Coord> coords;
    std::vector<double> feats;
    while (coords.size() < points) {
      // Shifted range covers negative coordinates too.
      sparse::Coord c{static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(batches))),
                      static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(extent))) - extent / 2,
                      static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(extent))) - extent / 2,
                      static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(extent))) - extent / 2};
      if (!seen.insert(c).second) continue;
      coords.push_back(c);
      for (std::size_t ch = 0; ch < cin; ++ch) feats.push_back(normal(rng, 0.0, 1.0));
    }
    sparse::SparseTensor3 x = sparse::make_sparse_tensor(coords, feats, cin, 1.0);
    sparse::SparseKernel k = sparse::SparseKernel::zeros(half, cin, cout);
    for (double& w : k.weights.mutable_values()) w = normal(rng, 0.0, 1.0);
    const sparse::SparseTensor3 y = sparse::sparse_conv3d(x, k, stride);
    const auto expected = oracle::dense_conv3d(x, k, stride, y.coords->coords());
    const auto got = y.feats.values();
    for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::abs(got[i] - expected[i]));
    outputs += y.size();
  }
  return {worst < 1e-12, fmt("100 tensors, %zu outputs, max abs diff %.3e (tol 1e-12)", outputs, worst)};
}

Outcome gradient_suite() {
  const auto cases = run_gradcheck_suite(1, true);
  double op_worst = 0.0, net_worst = 0.0;
  std::string failed;
  for (const auto& c : cases) {
    (c.tolerance < 1e-3 ? op_worst : net_worst) = std::max(c.tolerance < 1e-3 ? op_worst : net_worst, c.max_rel_error);
    if (!c.passed()) failed += " " + c.name;
  }
  const bool pass = failed.empty() && net_worst < 1e-3 && op_worst < 1e-4;
  return {pass, fmt("%zu cases, ops max rel err %.3e (tol 1e-4), networks %.3e (tol 1e-3)%s", cases.size(), op_worst,
                    net_worst, failed.empty() ? "" : (" failing:" + failed).c_str())};
}

double interior_rel_error(std::span<const double> ref, std::span<const double> got) {
  // Interior excludes one window at each end.
  double num = 0.0, den = 0.0;
  for (std::size_t i = dsp::kWindow; i + dsp::kWindow < ref.size(); ++i) {
    num += (ref[i] - got[i]) * (ref[i] - got[i]);
    den += ref[i] * ref[i];
  }
  return std::sqrt(num / den);
}

Outcome dsp_round_trip() {
  Rng rng = derive_stream(12, {});
  double worst_rt = 0.0, worst_ones = 0.0;
  const Grid ones(dsp::kFrames, dsp::kWarpBins, 1.0);
  for (int t = 0; t < 50; ++t) {
    dsp::AudioClip x{std::vector<double>(dsp::kSnippetLength), dsp::kSampleRate};
    for (double& v : x.samples) v = normal(rng, 0.0, 1.0);
    const dsp::AudioClip y = dsp::istft(dsp::stft(x));
    worst_rt = std::max(worst_rt, interior_rel_error(x.samples, y.samples));
    if (t < 10) worst_ones = std::max(worst_ones, interior_rel_error(x.samples, dsp::separate(x, ones).samples));
  }
  return {worst_rt < 1e-6 && worst_ones < 1e-6,
          fmt("50 signals, round trip max rel L2 %.3e, ones mask %.3e (tol 1e-6)", worst_rt, worst_ones)};
}

Outcome ibm_oracle() {
  const std::size_t n = dsp::kSnippetLength;
  double disjoint_min = 1e300;
  std::size_t overlap_wins = 0, overlap_items = 0;
  double min_margin = 1e300;
  for (std::uint64_t item = 0; item < 8; ++item) {
    Rng rng = derive_stream(13, {item});
    // Disjoint bands: the gap keeps window leakage far below the other source.
    std::vector<dsp::AudioClip> disjoint{synth::band_noise(200.0, 900.0, n, rng), synth::band_noise(2200.0, 4500.0, n, rng)};
    // Overlapping: a harmonic tone across a noise band.
    std::vector<dsp::AudioClip> overlap{synth::harmonic_tone(180.0, 3000.0, n, rng),
                                        synth::band_noise(600.0, 2500.0, n, rng)};
    for (int kind = 0; kind < 2; ++kind) {
      const auto& sources = kind == 0 ? disjoint : overlap;
      dsp::AudioClip mix{std::vector<double>(n, 0.0), dsp::kSampleRate};
      std::vector<Grid> mags;
      for (const auto& s : sources) {
        for (std::size_t i = 0; i < n; ++i) mix.samples[i] += s.samples[i];
        mags.push_back(dsp::warped_magnitude(s));
      }
      for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto est = dsp::separate(mix, fusion::ideal_binary_mask(mags, i).values);
        const double ibm = metrics::si_sdr(sources[i].samples, est.samples).ratio.db;
        if (kind == 0) {
          disjoint_min = std::min(disjoint_min, ibm);
        } else {
          const double ones = metrics::si_sdr(sources[i].samples, mix.samples).ratio.db;
          ++overlap_items;
          if (ibm > ones) ++overlap_wins;
          min_margin = std::min(min_margin, ibm - ones);
        }
      }
    }
  }
  return {disjoint_min > 20.0 && overlap_wins == overlap_items,
          fmt("disjoint min SI-SDR %.2f dB (> 20); overlap IBM beats ones on %zu/%zu, min margin %.2f dB",
              disjoint_min, overlap_wins, overlap_items, min_margin)};
}

Outcome metric_correctness() {
  Rng rng = derive_stream(14, {});
  const std::size_t n = 4000;
  // Orthogonal noise at one tenth of the target energy.
  std::vector<double> s(n), noise(n), est(n);
  for (auto& v : s) v = normal(rng, 0.0, 1.0);
  for (auto& v : noise) v = normal(rng, 0.0, 1.0);
  const double proj = oracle::dot(noise, s) / oracle::energy(s);
  for (std::size_t i = 0; i < n; ++i) noise[i] -= proj * s[i];
  const double scale = std::sqrt(oracle::energy(s) / (10.0 * oracle::energy(noise)));
  for (std::size_t i = 0; i < n; ++i) est[i] = s[i] + scale * noise[i];
  const double ten = metrics::si_sdr(s, est).ratio.db;

  double invariance = 0.0;
  for (const auto& [a, b] : {std::pair{3.0, 0.25}, {0.01, 70.0}, {-2.0, 5.0}}) {
    std::vector<double> sa(n), eb(n);
    for (std::size_t i = 0; i < n; ++i) sa[i] = a * s[i], eb[i] = b * est[i];
    invariance = std::max(invariance, std::abs(metrics::si_sdr(sa, eb).ratio.db - ten));
  }

  double decomp = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 2 + static_cast<std::size_t>(t % 3);
    std::vector<std::vector<double>> refs(m, std::vector<double>(1500));
    for (auto& r : refs)
      for (auto& v : r) v = normal(rng, 0.0, 1.0);
    std::vector<double> e(1500);
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = normal(rng, 0.0, 0.3);
      for (std::size_t j = 0; j < m; ++j) e[i] += (0.2 + 0.5 * static_cast<double>(j)) * refs[j][i];
    }
    const std::size_t target = static_cast<std::size_t>(t) % m;
    const auto d = metrics::decompose(e, refs, target);
    const auto o = oracle::normal_equations_decompose(e, refs, target);
    for (std::size_t i = 0; i < e.size(); ++i) {
      decomp = std::max({decomp, std::abs(d.s_target[i] - o.s_target[i]), std::abs(d.e_interf[i] - o.e_interf[i]),
                         std::abs(d.e_artif[i] - o.e_artif[i])});
    }
  }
  const bool pass = std::abs(ten - 10.0) <= 1e-9 && invariance <= 1e-9 && decomp <= 1e-10;
  return {pass, fmt("orthogonal case %.12f dB, rescaling drift %.2e dB, decompose vs normal equations %.2e",
                    ten, invariance, decomp)};
}

// Micro-scale setup shared by the training criteria.
train::TrainConfig micro_config(train::Conditioning c) {
  train::TrainConfig cfg;
  cfg.conditioning = c;
  cfg.K = 16;
  cfg.N = 2;
  cfg.F = 1;
  cfg.batch_size = 4;
  cfg.iterations = 500;
  cfg.vision_base_channels = 8;
  cfg.unet_base_channels = 4;
  cfg.lr_rest = 0.02;
  cfg.lr_vision = 0.006;
  cfg.augment = false;
  cfg.seed = 3;
  cfg.validation_every = 50;
  cfg.validation_batches = 2;
  cfg.validate();
  return cfg;
}

constexpr std::size_t kLossWindow = 10;
constexpr double kLossTarget = 0.15;

struct MicroRun {
  std::size_t reached = 0;  // first iteration where the trailing mean fell below target, 0 if never
  double trailing = 0.0;
  double best_validation = 0.0;
  std::size_t best_iteration = 0;
  std::unique_ptr<train::Trainer> trainer;
};

// Full iteration budget; the weights with the lowest validation loss are
// restored at the end.
MicroRun micro_train(train::Conditioning c, const data::Dataset& train_set, const data::Dataset& val_set) {
  MicroRun run;
  const auto cfg = micro_config(c);
  run.trainer = std::make_unique<train::Trainer>(cfg, train_set, val_set);
  std::vector<double> losses;
  std::optional<Checkpoint> best;
  run.best_validation = std::numeric_limits<double>::infinity();
  while (run.trainer->iteration() < cfg.iterations) {
    losses.push_back(run.trainer->step());
    if (losses.size() >= kLossWindow && run.reached == 0) {
      run.trailing = std::accumulate(losses.end() - kLossWindow, losses.end(), 0.0) / kLossWindow;
      if (run.trailing < kLossTarget) run.reached = run.trainer->iteration();
    }
    if (run.trainer->iteration() % cfg.validation_every == 0) {
      const double v = run.trainer->validate();
      if (v < run.best_validation) {
        run.best_validation = v;
        run.best_iteration = run.trainer->iteration();
        best = run.trainer->state();
      }
    }
  }
  if (best) run.trainer->restore(*best);
  return run;
}

Outcome micro_overfit() {
  synth::SynthConfig sc;
  const auto train_set = synth::make_dataset(sc, data::Split::train);
  const auto val_set = synth::make_dataset(sc, data::Split::validation);
  const auto test_set = synth::make_dataset(sc, data::Split::test);
  MicroRun depth = micro_train(train::Conditioning::depth, train_set, val_set);
  MicroRun label = micro_train(train::Conditioning::label, train_set, val_set);

  const auto items = eval::test_items(test_set, {20, 2, 1, 5});
  auto mean_si = [&](eval::Method m, train::Model* model) {
    const auto rows = eval::evaluate(m, model, items);
    double sum = 0.0;
    for (const auto& r : rows) sum += r.si_sdr.db;
    return sum / static_cast<double>(rows.size());
  };
  const double ibm = mean_si(eval::Method::ibm, nullptr);
  const double ones = mean_si(eval::Method::ones, nullptr);
  const double d = mean_si(eval::Method::depth, &depth.trainer->model());
  const double l = mean_si(eval::Method::label, &label.trainer->model());
  const bool converged = depth.reached > 0 && label.reached > 0;
  const bool ordered = ibm > d && ibm > l && d > ones && l > ones;
  const bool close = std::abs(d - l) <= 3.0;
  return {converged && ordered && close,
          fmt("BCE<0.15 (trailing %zu) at depth it %zu (%.4f), label it %zu (%.4f); best validation at depth it "
              "%zu, label it %zu; mean SI-SDR ibm %.2f, depth %.2f, label %.2f, ones %.2f dB",
              kLossWindow, depth.reached, depth.trailing, label.reached, label.trailing, depth.best_iteration,
              label.best_iteration, ibm, d, l, ones)};
}

std::vector<double> params_flat(train::Model& m) {
  std::vector<double> out;
  for (auto& p : m.params()) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  for (auto& b : m.buffers()) out.insert(out.end(), b.values->begin(), b.values->end());
  return out;
}

std::vector<double> losses_of(const train::Trainer& t) {
  std::vector<double> out;
  for (const auto& p : t.train_curve()) out.push_back(p.loss);
  return out;
}

Outcome determinism() {
  synth::SynthConfig sc;
  const auto train_set = synth::make_dataset(sc, data::Split::train);
  const auto val_set = synth::make_dataset(sc, data::Split::validation);
  auto cfg = micro_config(train::Conditioning::depth);
  cfg.iterations = 6;
  train::Trainer a(cfg, train_set, val_set), b(cfg, train_set, val_set);
  for (int i = 0; i < 6; ++i) a.step(), b.step();
  const bool same_curves = losses_of(a) == losses_of(b) && params_flat(a.model()) == params_flat(b.model());

  // Interrupted run: three steps, serialize, restore into a fresh trainer,
  // three more.
  train::Trainer c(cfg, train_set, val_set);
  for (int i = 0; i < 3; ++i) c.step();
  std::stringstream bytes;
  c.state().write(bytes);
  train::Trainer d(cfg, train_set, val_set);
  d.restore(Checkpoint::read(bytes));
  for (int i = 0; i < 3; ++i) d.step();
  const bool resumed = losses_of(d) == losses_of(a) && params_flat(d.model()) == params_flat(a.model());
  return {same_curves && resumed, fmt("repeat run identical: %s; resume after 3 of 6 bit-exact: %s",
                                      same_curves ? "yes" : "no", resumed ? "yes" : "no")};
}

Outcome one_hot_selection() {
  Rng rng = derive_stream(15, {});
  const std::size_t K = fusion::kInstrumentCount, H = 16, W = 12;
  fusion::FusionParams params = fusion::FusionParams::init(K);
  std::size_t mismatches = 0, checked = 0;
  for (int trial = 0; trial < 4; ++trial) {
    Tensor S = Tensor::zeros({1, K, H, W});
    for (double& v : S.mutable_values()) v = normal(rng, 0.0, 3.0);
    for (const auto inst : fusion::all_instruments()) {
      const fusion::Instrument one[] = {inst};
      const Tensor mask = fusion::fuse(fusion::one_hot_rows(one), S, params);
      const std::size_t k = static_cast<std::size_t>(inst);
      std::vector<double> channel(S.values().begin() + static_cast<long>(k * H * W),
                                  S.values().begin() + static_cast<long>((k + 1) * H * W));
      const Tensor expected = ops::sigmoid(Tensor({H, W}, channel));
      for (std::size_t i = 0; i < H * W; ++i) {
        ++checked;
        if (std::memcmp(&mask.values()[i], &expected.values()[i], sizeof(double)) != 0) ++mismatches;
      }
    }
  }
  return {mismatches == 0, fmt("%zu of %zu mask entries differ from sigmoid(S_k)", mismatches, checked)};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  set_log_sink([](std::string_view, std::string_view) {});
  const Criterion criteria[] = {
      {"sparse-conv-oracle", sparse_conv_oracle}, {"gradient-suite", gradient_suite},
      {"dsp-round-trip", dsp_round_trip},         {"ibm-oracle", ibm_oracle},
      {"metric-correctness", metric_correctness}, {"micro-overfit", micro_overfit},
      {"determinism", determinism},               {"one-hot-selection", one_hot_selection},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (argc > 1 && std::strcmp(argv[1], c.name) != 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %-20s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed;
}
