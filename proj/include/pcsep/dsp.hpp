#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "pcsep/grid.hpp"

namespace pcsep::dsp {

inline constexpr double kSampleRate = 11025.0;
inline constexpr std::size_t kWindow = 1022;
inline constexpr std::size_t kHop = 256;
inline constexpr std::size_t kBins = kWindow / 2 + 1;  // 512, DC through Nyquist
inline constexpr std::size_t kFrames = 256;
inline constexpr std::size_t kSnippetLength = kHop * (kFrames - 1);  // 65280
inline constexpr std::size_t kWarpBins = 256;

// Mono signal.
struct AudioClip {
  std::vector<double> samples;
  double sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
};

// One or more channels of equal length, as read from a file.
struct MultiChannelAudio {
  std::vector<std::vector<double>> channels;
  double sample_rate = kSampleRate;
};

// Channel average.
AudioClip to_mono(const MultiChannelAudio& audio);

// Rational L/M windowed-sinc resampler (Kaiser window, 32 zero crossings).
// Equal rates return the input unchanged. Throws ConfigError naming both rates
// when a rate is below 8000 Hz, not an integer, or the reduced ratio needs
// more than 4096 phases.
AudioClip resample(const AudioClip& clip, double target_rate = kSampleRate);
AudioClip resample_mono(const MultiChannelAudio& audio, double target_rate = kSampleRate);

// frames x bins complex STFT, row-major by frame.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = kBins;
  std::vector<std::complex<double>> values;

  std::complex<double>& operator()(std::size_t t, std::size_t f) { return values[t * bins + f]; }
  const std::complex<double>& operator()(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
  Grid magnitude() const;
};

// Periodic Hann window of length kWindow.
const std::vector<double>& hann_window();

// Centered STFT: reflect-pad kWindow/2 samples per side, frame every kHop.
// Any length > kWindow / 2 works; the frame count is 1 + size / kHop.
Spectrogram stft_any(std::span<const double> samples);
// Canonical contract: exactly kSnippetLength samples -> kFrames frames.
Spectrogram stft(const AudioClip& clip);

// Weighted overlap-add normalized by the summed squared window (floored at
// 1e-12), cropped to kHop * (frames - 1) samples.
AudioClip istft(const Spectrogram& spec, double sample_rate = kSampleRate);

// frames x 512 linear magnitude -> frames x 256, sampling bin positions
// 511^(j/255) for j = 0..255 with linear interpolation.
Grid logfreq_warp(const Grid& linear);
// frames x 256 mask -> frames x 512 by linear interpolation at each bin's
// warped position, clamped to [0,1]. The DC bin takes column 0.
Grid logfreq_unwarp(const Grid& warped);

// Warped STFT magnitude of a canonical snippet: kFrames x kWarpBins.
Grid warped_magnitude(const AudioClip& clip);

// istft(unwarp(mask) * STFT(mixture)); the mixture phase is reused.
AudioClip separate(const AudioClip& mixture, const Grid& mask);

// First kSnippetLength samples starting at offset.
AudioClip crop_snippet(const AudioClip& clip, std::size_t offset);

}  // namespace pcsep::dsp
