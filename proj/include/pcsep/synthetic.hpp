#pragma once

#include <filesystem>
#include <vector>

#include "pcsep/data.hpp"

// Procedural stand-in for the instrument corpus: each instrument gets a
// spectral signature and a solid shape, so conditioning is learnable at
// desk scale.
namespace pcsep::synth {

enum class AudioKind { harmonic, noise };
enum class Shape { sphere, cube, cylinder, cone, torus };

struct InstrumentProfile {
  AudioKind kind;
  double lo_hz;  // harmonic: lowest f0; noise: band start
  double hi_hz;  // harmonic: highest partial; noise: band end
  Shape shape;
  sparse::Vec3 color;
};

InstrumentProfile profile_of(fusion::Instrument instrument);

// Sum of `partials` equal-power sinusoids at uniform random frequencies in
// [lo, hi] with random phases, scaled to the given RMS.
dsp::AudioClip band_noise(double lo_hz, double hi_hz, std::size_t samples, Rng& rng, double rms = 0.1,
                          std::size_t partials = 96);
// Harmonic tone with f0 in [f0_lo, 2 f0_lo], partials up to top_hz with
// 1/h amplitudes, scaled to the given RMS.
dsp::AudioClip harmonic_tone(double f0_lo, double top_hz, std::size_t samples, Rng& rng, double rms = 0.1);
dsp::AudioClip instrument_audio(fusion::Instrument instrument, std::size_t samples, Rng& rng);

// Surface samples of the shape with a mild per-call stretch, colored with
// the base color plus noise.
sparse::PointCloudFrame shape_cloud(Shape shape, std::size_t points, const sparse::Vec3& color, Rng& rng);

struct SynthConfig {
  std::vector<fusion::Instrument> instruments{fusion::Instrument::cello, fusion::Instrument::guitar};
  std::size_t recordings_per_instrument = 12;
  std::size_t videos_per_instrument = 6;
  std::size_t frames_per_video = 3;
  std::size_t points = 300;
  std::size_t clip_samples = dsp::kSnippetLength + 4 * 11025;
  std::uint64_t seed = 7;
};

// In-memory split; performers never repeat across splits.
data::Dataset make_dataset(const SynthConfig& config, data::Split split);

// Writes audio/*.wav, videos/<id>/*.ply and manifest.csv under dir for all
// three splits. Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const SynthConfig& config);

}  // namespace pcsep::synth
