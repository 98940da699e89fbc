#include "pcsep/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "pcsep/errors.hpp"

namespace pcsep::dsp {

AudioClip to_mono(const MultiChannelAudio& audio) {
  if (audio.channels.empty()) throw EmptyInputError("to_mono: no channels");
  const std::size_t n = audio.channels.front().size();
  AudioClip out{std::vector<double>(n, 0.0), audio.sample_rate};
  for (const auto& ch : audio.channels) {
    if (ch.size() != n) throw DimensionError("to_mono: channels differ in length");
    for (std::size_t i = 0; i < n; ++i) out.samples[i] += ch[i];
  }
  const double inv = 1.0 / static_cast<double>(audio.channels.size());
  for (double& s : out.samples) s *= inv;
  return out;
}

namespace {

constexpr int kZeroCrossings = 32;
constexpr double kKaiserBeta = 8.6;
constexpr long kMaxPhases = 4096;

std::string rate_str(double r) {
  std::ostringstream os;
  os << std::setprecision(12) << r << " Hz";
  return os.str();
}

bool is_integer_rate(double r) { return r > 0 && std::abs(r - std::round(r)) < 1e-9; }

}  // namespace

AudioClip resample(const AudioClip& clip, double target_rate) {
  if (clip.sample_rate == target_rate) return clip;
  const std::string pair = rate_str(clip.sample_rate) + " -> " + rate_str(target_rate);
  if (clip.sample_rate < 8000.0 || !is_integer_rate(clip.sample_rate) || !is_integer_rate(target_rate)) {
    throw ConfigError("unsupported resampling ratio " + pair);
  }
  const long src = std::lround(clip.sample_rate), dst = std::lround(target_rate);
  const long g = std::gcd(src, dst);
  const long L = dst / g, M = src / g;
  if (L > kMaxPhases || M > kMaxPhases) throw ConfigError("unsupported resampling ratio " + pair);

  // Prototype low-pass on the L-times upsampled grid.
  const long up = std::max(L, M);
  const double cutoff = 0.5 / static_cast<double>(up);
  const long half = kZeroCrossings * up;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
  auto h = [&](long n) {
    if (n < -half || n > half) return 0.0;
    const double t = static_cast<double>(n);
    const double x = 2.0 * cutoff * t;
    const double sinc = n == 0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double r = t / static_cast<double>(half);
    const double w = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
    return 2.0 * cutoff * sinc * w;
  };
  std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
  for (long n = -half; n <= half; ++n) taps[static_cast<std::size_t>(n + half)] = h(n);

  const long n_in = static_cast<long>(clip.samples.size());
  const long n_out = (n_in * L + M - 1) / M;
  AudioClip out{std::vector<double>(static_cast<std::size_t>(n_out), 0.0), target_rate};
  for (long m = 0; m < n_out; ++m) {
    const long t = m * M;  // position on the upsampled grid
    const long k_lo = std::max<long>(0, (t - half + L - 1) / L);
    const long k_hi = std::min<long>(n_in - 1, (t + half) / L);
    double acc = 0.0;
    for (long k = k_lo; k <= k_hi; ++k) {
      acc += clip.samples[static_cast<std::size_t>(k)] * taps[static_cast<std::size_t>(t - k * L + half)];
    }
    out.samples[static_cast<std::size_t>(m)] = acc * static_cast<double>(L);
  }
  return out;
}

AudioClip resample_mono(const MultiChannelAudio& audio, double target_rate) {
  return resample(to_mono(audio), target_rate);
}

Grid Spectrogram::magnitude() const {
  Grid g(frames, bins);
  for (std::size_t i = 0; i < values.size(); ++i) g.values[i] = std::abs(values[i]);
  return g;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindow);
    for (std::size_t n = 0; n < kWindow; ++n) {
      v[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(kWindow));
    }
    return v;
  }();
  return w;
}

namespace {

// FFTW planning is not thread-safe; execution on new arrays is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

struct FftBuffers {
  double* real = nullptr;
  fftw_complex* spectrum = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;

  FftBuffers() {
    std::lock_guard lock(plan_mutex());
    real = fftw_alloc_real(kWindow);
    spectrum = fftw_alloc_complex(kBins);
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(kWindow), real, spectrum, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(static_cast<int>(kWindow), spectrum, real, FFTW_ESTIMATE);
  }
  ~FftBuffers() {
    std::lock_guard lock(plan_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
    fftw_free(real);
    fftw_free(spectrum);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;
};

FftBuffers& fft_buffers() {
  thread_local FftBuffers buffers;
  return buffers;
}

constexpr std::size_t kPad = kWindow / 2;

}  // namespace

Spectrogram stft_any(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n <= kPad) {
    throw DimensionError("stft: signal of " + std::to_string(n) + " samples is too short for reflection padding");
  }
  std::vector<double> padded(n + 2 * kPad);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    const long j = static_cast<long>(i) - static_cast<long>(kPad);
    long k = j < 0 ? -j : j;
    if (k >= static_cast<long>(n)) k = 2 * (static_cast<long>(n) - 1) - k;
    padded[i] = samples[static_cast<std::size_t>(k)];
  }
  const std::size_t frames = 1 + n / kHop;
  Spectrogram spec{frames, kBins, std::vector<std::complex<double>>(frames * kBins)};
  const auto& w = hann_window();
  FftBuffers& fft = fft_buffers();
  for (std::size_t t = 0; t < frames; ++t) {
    const double* frame = padded.data() + t * kHop;
    for (std::size_t i = 0; i < kWindow; ++i) fft.real[i] = frame[i] * w[i];
    fftw_execute(fft.forward);
    for (std::size_t f = 0; f < kBins; ++f) spec(t, f) = {fft.spectrum[f][0], fft.spectrum[f][1]};
  }
  return spec;
}

Spectrogram stft(const AudioClip& clip) {
  if (clip.size() != kSnippetLength) {
    throw DimensionError("stft: expected a snippet of " + std::to_string(kSnippetLength) + " samples, got " +
                         std::to_string(clip.size()));
  }
  return stft_any(clip.samples);
}

AudioClip istft(const Spectrogram& spec, double sample_rate) {
  if (spec.bins != kBins) throw DimensionError("istft: expected " + std::to_string(kBins) + " bins");
  if (spec.frames == 0) throw EmptyInputError("istft: no frames");
  const std::size_t padded_len = kWindow + kHop * (spec.frames - 1);
  std::vector<double> acc(padded_len, 0.0), norm(padded_len, 0.0);
  const auto& w = hann_window();
  FftBuffers& fft = fft_buffers();
  const double scale = 1.0 / static_cast<double>(kWindow);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < kBins; ++f) {
      fft.spectrum[f][0] = spec(t, f).real();
      fft.spectrum[f][1] = spec(t, f).imag();
    }
    fftw_execute(fft.inverse);
    const std::size_t start = t * kHop;
    for (std::size_t i = 0; i < kWindow; ++i) {
      acc[start + i] += fft.real[i] * scale * w[i];
      norm[start + i] += w[i] * w[i];
    }
  }
  const std::size_t n = kHop * (spec.frames - 1);
  AudioClip out{std::vector<double>(n), sample_rate};
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = acc[i + kPad] / std::max(norm[i + kPad], 1e-12);
  return out;
}

namespace {

double warp_position(std::size_t j) {
  return std::pow(static_cast<double>(kBins - 1), static_cast<double>(j) / static_cast<double>(kWarpBins - 1));
}

double interpolate(const double* row, std::size_t len, double pos) {
  pos = std::clamp(pos, 0.0, static_cast<double>(len - 1));
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, len - 1);
  const double frac = pos - static_cast<double>(lo);
  return row[lo] + frac * (row[hi] - row[lo]);
}

}  // namespace

Grid logfreq_warp(const Grid& linear) {
  if (linear.cols != kBins) throw DimensionError("logfreq_warp: expected " + std::to_string(kBins) + " bins");
  Grid out(linear.rows, kWarpBins);
  for (std::size_t t = 0; t < linear.rows; ++t) {
    const double* row = linear.values.data() + t * kBins;
    for (std::size_t j = 0; j < kWarpBins; ++j) out(t, j) = interpolate(row, kBins, warp_position(j));
  }
  return out;
}

Grid logfreq_unwarp(const Grid& warped) {
  if (warped.cols != kWarpBins) throw DimensionError("logfreq_unwarp: expected " + std::to_string(kWarpBins) + " bins");
  Grid out(warped.rows, kBins);
  const double log_top = std::log(static_cast<double>(kBins - 1));
  for (std::size_t t = 0; t < warped.rows; ++t) {
    const double* row = warped.values.data() + t * kWarpBins;
    out(t, 0) = std::clamp(row[0], 0.0, 1.0);
    for (std::size_t b = 1; b < kBins; ++b) {
      const double pos = static_cast<double>(kWarpBins - 1) * std::log(static_cast<double>(b)) / log_top;
      out(t, b) = std::clamp(interpolate(row, kWarpBins, pos), 0.0, 1.0);
    }
  }
  return out;
}

Grid warped_magnitude(const AudioClip& clip) { return logfreq_warp(stft(clip).magnitude()); }

AudioClip separate(const AudioClip& mixture, const Grid& mask) {
  if (mask.rows != kFrames || mask.cols != kWarpBins) {
    throw DimensionError("separate: mask must be " + std::to_string(kFrames) + "x" + std::to_string(kWarpBins));
  }
  Spectrogram spec = stft(mixture);
  const Grid gain = logfreq_unwarp(mask);
  for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] *= gain.values[i];
  return istft(spec, mixture.sample_rate);
}

AudioClip crop_snippet(const AudioClip& clip, std::size_t offset) {
  if (offset + kSnippetLength > clip.size()) {
    throw DataError("clip of " + std::to_string(clip.size()) + " samples is too short for a snippet at offset " +
                    std::to_string(offset));
  }
  auto first = clip.samples.begin() + static_cast<std::ptrdiff_t>(offset);
  return AudioClip{std::vector<double>(first, first + static_cast<std::ptrdiff_t>(kSnippetLength)), clip.sample_rate};
}

}  // namespace pcsep::dsp
