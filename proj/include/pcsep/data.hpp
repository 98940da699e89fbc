#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pcsep/dsp.hpp"
#include "pcsep/fusion.hpp"
#include "pcsep/random.hpp"
#include "pcsep/sparse.hpp"

namespace pcsep::data {

using fusion::Instrument;
using sparse::PointCloudFrame;
using sparse::Vec3;

// Output axis i takes sign[i] * input[source[i]]. Targets: x = side,
// y = stature, z = facing direction.
struct AxisConvention {
  std::array<int, 3> source{0, 1, 2};
  std::array<double, 3> sign{1.0, 1.0, 1.0};

  // "x,y,z", "-z,y,x", ... Throws ConfigError on anything else.
  static AxisConvention parse(std::string_view text);
  Vec3 apply(const Vec3& p) const;
};

// Centroid to the origin, uniform scale so the largest |coordinate| is 1,
// then the axis convention. Throws NumericalError when all points coincide.
PointCloudFrame preprocess_frame(const PointCloudFrame& raw, const AxisConvention& axes = {});

using Mat3 = std::array<std::array<double, 3>, 3>;

struct AugmentParams {
  double rotation_y = 0.0;
  Vec3 rotation_axis{0.0, 1.0, 0.0};
  double axis_angle = 0.0;
  double scale = 1.0;
  Vec3 translation{0.0, 0.0, 0.0};
  // Off-diagonal shear entries in row order: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1).
  std::array<double, 6> shear{};
  double value_shift = 0.0;
  double saturation_shift = 0.0;
  double color_noise_std = 0.0;
  double audio_gain = 1.0;

  static AugmentParams identity() { return {}; }
  static AugmentParams sample(Rng& rng);

  // translation excluded.
  Mat3 linear_part() const;
};

// p -> T + Shear * scale * R_axis * R_y * p.
PointCloudFrame augment_coords(const PointCloudFrame& frame, const AugmentParams& params);
// HSV value/saturation shift with clamping, then per-channel Gaussian noise
// clamped to [0,1]. Frames without colors pass through.
PointCloudFrame augment_colors(const PointCloudFrame& frame, const AugmentParams& params, Rng& rng);

Vec3 rgb_to_hsv(const Vec3& rgb);
Vec3 hsv_to_rgb(const Vec3& hsv);

struct VideoClip {
  std::vector<PointCloudFrame> frames;
  double fps = 15.0;
  Instrument instrument = Instrument::cello;
  std::string performer;
};

struct AudioRecording {
  dsp::AudioClip clip;
  Instrument instrument = Instrument::cello;
  std::string performer;
};

struct Dataset {
  std::vector<VideoClip> videos;
  std::vector<AudioRecording> audio;

  // Instruments with at least one video and one recording, in label order.
  std::vector<Instrument> instruments() const;
  std::vector<const VideoClip*> videos_of(Instrument instrument) const;
  std::vector<const AudioRecording*> audio_of(Instrument instrument) const;
};

enum class Split { train, validation, test };
std::string_view split_name(Split split);

// One manifest row: instrument,split,path,performer[,fps[,axes]], where axes
// ("-z,y,x") runs to the end of the row. split may be
// "auto" and is then resolved by performer. Relative paths resolve against
// the manifest's directory. A path ending in .wav is audio; anything else
// is a directory of .ply frames read in name order.
struct ManifestEntry {
  Instrument instrument = Instrument::cello;
  std::string split;
  std::filesystem::path path;
  std::string performer;
  double fps = 15.0;
  AxisConvention axes;

  bool is_audio() const;
};

std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base_dir);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Resolves "auto" splits: performers of each media kind are ordered by a
// seeded shuffle and assigned 75/15/10 by count. Explicit splits are kept.
// Throws DataError when any performer ends up in more than one split.
std::vector<ManifestEntry> resolve_splits(std::vector<ManifestEntry> entries, std::uint64_t seed = 0);
void check_split_disjoint(const std::vector<ManifestEntry>& entries);

Dataset load_split(const std::vector<ManifestEntry>& entries, Split split);

struct SampleOptions {
  std::size_t sources = 2;  // N
  std::size_t frames = 1;   // F
  bool augment = true;
};

struct TrainingItem {
  std::vector<Instrument> instruments;
  std::vector<dsp::AudioClip> snippets;  // gain applied
  dsp::AudioClip mixture;
  std::vector<std::vector<PointCloudFrame>> frames;  // per source, F each
  Grid mixture_magnitude;                            // warped, kFrames x kWarpBins
  std::vector<fusion::Mask> ibm;                     // per source
};

// N distinct instruments, a random gain-scaled snippet and F frames one
// second apart from a random video of each. The mixture is the plain sum.
TrainingItem sample_training_item(const Dataset& dataset, Rng& rng, const SampleOptions& options);

}  // namespace pcsep::data
