#include "pcsep/synthetic.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "pcsep/errors.hpp"
#include "pcsep/ply.hpp"
#include "pcsep/wav.hpp"

namespace pcsep::synth {

using fusion::Instrument;
using sparse::PointCloudFrame;
using sparse::Vec3;

InstrumentProfile profile_of(Instrument instrument) {
  switch (instrument) {
    case Instrument::cello: return {AudioKind::harmonic, 110.0, 1800.0, Shape::sphere, {0.8, 0.3, 0.2}};
    case Instrument::doublebass: return {AudioKind::harmonic, 45.0, 700.0, Shape::cylinder, {0.5, 0.3, 0.1}};
    case Instrument::guitar: return {AudioKind::noise, 1200.0, 4500.0, Shape::cube, {0.2, 0.4, 0.8}};
    case Instrument::saxophone: return {AudioKind::noise, 600.0, 2500.0, Shape::cone, {0.9, 0.8, 0.2}};
    case Instrument::violin: return {AudioKind::harmonic, 400.0, 5000.0, Shape::torus, {0.6, 0.2, 0.5}};
  }
  throw ContractError("unknown instrument");
}

namespace {

void scale_to_rms(std::vector<double>& x, double rms) {
  double e = 0.0;
  for (double v : x) e += v * v;
  const double cur = std::sqrt(e / static_cast<double>(x.size()));
  if (cur > 0.0)
    for (double& v : x) v *= rms / cur;
}

// Adds amp * sin(2 pi f t + phase) by phasor recurrence.
void add_partial(std::vector<double>& x, double freq, double phase, double amp) {
  const std::complex<double> step = std::polar(1.0, 2.0 * std::numbers::pi * freq / dsp::kSampleRate);
  std::complex<double> z = std::polar(amp, phase);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] += z.imag();
    z *= step;
    if ((i & 1023) == 1023) z *= amp / std::abs(z);
  }
}

}  // namespace

dsp::AudioClip band_noise(double lo_hz, double hi_hz, std::size_t samples, Rng& rng, double rms,
                          std::size_t partials) {
  std::vector<double> x(samples, 0.0);
  for (std::size_t p = 0; p < partials; ++p) {
    add_partial(x, uniform(rng, lo_hz, hi_hz), uniform(rng, 0.0, 2.0 * std::numbers::pi), 1.0);
  }
  scale_to_rms(x, rms);
  return {std::move(x), dsp::kSampleRate};
}

dsp::AudioClip harmonic_tone(double f0_lo, double top_hz, std::size_t samples, Rng& rng, double rms) {
  const double f0 = uniform(rng, f0_lo, 2.0 * f0_lo);
  std::vector<double> x(samples, 0.0);
  for (std::size_t h = 1; f0 * static_cast<double>(h) <= top_hz; ++h) {
    add_partial(x, f0 * static_cast<double>(h), uniform(rng, 0.0, 2.0 * std::numbers::pi),
                1.0 / static_cast<double>(h));
  }
  scale_to_rms(x, rms);
  return {std::move(x), dsp::kSampleRate};
}

dsp::AudioClip instrument_audio(Instrument instrument, std::size_t samples, Rng& rng) {
  const InstrumentProfile p = profile_of(instrument);
  return p.kind == AudioKind::harmonic ? harmonic_tone(p.lo_hz, p.hi_hz, samples, rng)
                                       : band_noise(p.lo_hz, p.hi_hz, samples, rng);
}

PointCloudFrame shape_cloud(Shape shape, std::size_t points, const Vec3& color, Rng& rng) {
  const Vec3 stretch{uniform(rng, 0.8, 1.2), uniform(rng, 0.8, 1.2), uniform(rng, 0.8, 1.2)};
  PointCloudFrame frame;
  for (std::size_t i = 0; i < points; ++i) {
    Vec3 p{};
    switch (shape) {
      case Shape::sphere: {
        double n = 0.0;
        while (n < 1e-9) {
          for (double& c : p) c = normal(rng, 0.0, 1.0);
          n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        }
        for (double& c : p) c /= n;
        break;
      }
      case Shape::cube: {
        for (double& c : p) c = uniform(rng, -1.0, 1.0);
        p[uniform_index(rng, 3)] = uniform_index(rng, 2) == 0 ? -1.0 : 1.0;
        break;
      }
      case Shape::cylinder: {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        p = {0.5 * std::cos(a), uniform(rng, -1.0, 1.0), 0.5 * std::sin(a)};
        break;
      }
      case Shape::cone: {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double h = uniform(rng, 0.0, 1.0);
        p = {h * std::cos(a), 1.0 - 2.0 * h, h * std::sin(a)};
        break;
      }
      case Shape::torus: {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double b = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double r = 0.7 + 0.3 * std::cos(b);
        p = {r * std::cos(a), 0.3 * std::sin(b), r * std::sin(a)};
        break;
      }
    }
    for (std::size_t k = 0; k < 3; ++k) p[k] *= stretch[k];
    frame.coords.push_back(p);
    Vec3 c;
    for (std::size_t k = 0; k < 3; ++k) c[k] = std::clamp(color[k] + normal(rng, 0.0, 0.05), 0.0, 1.0);
    frame.colors.push_back(c);
  }
  return frame;
}

namespace {

std::string performer_id(Instrument inst, data::Split split, const char* kind, std::size_t i) {
  return std::string(fusion::instrument_name(inst)) + "-" + std::string(data::split_name(split)) + "-" + kind +
         std::to_string(i);
}

}  // namespace

data::Dataset make_dataset(const SynthConfig& config, data::Split split) {
  data::Dataset ds;
  const auto split_key = static_cast<std::uint64_t>(split);
  for (Instrument inst : config.instruments) {
    const auto inst_key = static_cast<std::uint64_t>(inst);
    const InstrumentProfile prof = profile_of(inst);
    for (std::size_t i = 0; i < config.recordings_per_instrument; ++i) {
      Rng rng = derive_stream(config.seed, {split_key, inst_key, 0, i});
      ds.audio.push_back({instrument_audio(inst, config.clip_samples, rng), inst, performer_id(inst, split, "a", i)});
    }
    for (std::size_t i = 0; i < config.videos_per_instrument; ++i) {
      Rng rng = derive_stream(config.seed, {split_key, inst_key, 1, i});
      data::VideoClip clip{{}, 1.0, inst, performer_id(inst, split, "v", i)};
      for (std::size_t f = 0; f < config.frames_per_video; ++f) {
        clip.frames.push_back(data::preprocess_frame(shape_cloud(prof.shape, config.points, prof.color, rng)));
      }
      ds.videos.push_back(std::move(clip));
    }
  }
  return ds;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const SynthConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "audio");
  fs::create_directories(dir / "videos");
  const fs::path manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write " + manifest.string());
  out << "instrument,split,path,performer,fps\n";
  for (data::Split split : {data::Split::train, data::Split::validation, data::Split::test}) {
    const data::Dataset ds = make_dataset(config, split);
    for (const auto& rec : ds.audio) {
      const fs::path rel = fs::path("audio") / (rec.performer + ".wav");
      dsp::write_wav(dir / rel, rec.clip);
      out << fusion::instrument_name(rec.instrument) << ',' << data::split_name(split) << ',' << rel.string() << ','
          << rec.performer << '\n';
    }
    for (const auto& video : ds.videos) {
      const fs::path rel = fs::path("videos") / video.performer;
      fs::create_directories(dir / rel);
      for (std::size_t f = 0; f < video.frames.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04zu.ply", f);
        sparse::write_ply(dir / rel / name, video.frames[f], true);
      }
      out << fusion::instrument_name(video.instrument) << ',' << data::split_name(split) << ',' << rel.string() << ','
          << video.performer << ',' << video.fps << '\n';
    }
  }
  return manifest;
}

}  // namespace pcsep::synth
