#include "pcsep/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "pcsep/errors.hpp"
#include "pcsep/ply.hpp"
#include "pcsep/wav.hpp"

namespace pcsep::data {

AxisConvention AxisConvention::parse(std::string_view text) {
  AxisConvention conv;
  std::array<bool, 3> used{};
  std::size_t axis = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    std::string_view tok = text.substr(pos, comma - pos);
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    double sign = 1.0;
    if (!tok.empty() && (tok.front() == '-' || tok.front() == '+')) {
      sign = tok.front() == '-' ? -1.0 : 1.0;
      tok.remove_prefix(1);
    }
    if (axis >= 3 || tok.size() != 1 || tok[0] < 'x' || tok[0] > 'z') {
      throw ConfigError("bad axis convention '" + std::string(text) + "'");
    }
    const int src = tok[0] - 'x';
    if (used[static_cast<std::size_t>(src)]) throw ConfigError("axis repeated in '" + std::string(text) + "'");
    used[static_cast<std::size_t>(src)] = true;
    conv.source[axis] = src;
    conv.sign[axis] = sign;
    ++axis;
    pos = comma + 1;
  }
  if (axis != 3) throw ConfigError("axis convention needs three axes: '" + std::string(text) + "'");
  return conv;
}

Vec3 AxisConvention::apply(const Vec3& p) const {
  Vec3 out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = sign[i] * p[static_cast<std::size_t>(source[i])];
  return out;
}

PointCloudFrame preprocess_frame(const PointCloudFrame& raw, const AxisConvention& axes) {
  if (raw.size() == 0) throw EmptyInputError("preprocess_frame: empty frame");
  Vec3 centroid{0.0, 0.0, 0.0};
  for (const auto& p : raw.coords)
    for (std::size_t i = 0; i < 3; ++i) centroid[i] += p[i];
  for (double& c : centroid) c /= static_cast<double>(raw.size());
  double extent = 0.0;
  for (const auto& p : raw.coords)
    for (std::size_t i = 0; i < 3; ++i) extent = std::max(extent, std::abs(p[i] - centroid[i]));
  if (!(extent > 0.0) || !std::isfinite(extent)) {
    throw NumericalError("preprocess_frame: degenerate scale, all points coincide");
  }
  PointCloudFrame out;
  out.colors = raw.colors;
  out.coords.reserve(raw.size());
  for (const auto& p : raw.coords) {
    Vec3 q;
    for (std::size_t i = 0; i < 3; ++i) q[i] = (p[i] - centroid[i]) / extent;
    out.coords.push_back(axes.apply(q));
  }
  return out;
}

namespace {

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Rodrigues rotation about a unit axis.
Mat3 axis_rotation(const Vec3& u, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return Mat3{{{t * u[0] * u[0] + c, t * u[0] * u[1] - s * u[2], t * u[0] * u[2] + s * u[1]},
               {t * u[0] * u[1] + s * u[2], t * u[1] * u[1] + c, t * u[1] * u[2] - s * u[0]},
               {t * u[0] * u[2] - s * u[1], t * u[1] * u[2] + s * u[0], t * u[2] * u[2] + c}}};
}

}  // namespace

AugmentParams AugmentParams::sample(Rng& rng) {
  AugmentParams p;
  p.rotation_y = uniform(rng, -std::numbers::pi, std::numbers::pi);
  Vec3 axis{};
  double norm = 0.0;
  while (norm < 1e-12) {
    for (double& a : axis) a = normal(rng, 0.0, 1.0);
    norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  }
  for (double& a : axis) a /= norm;
  p.rotation_axis = axis;
  p.axis_angle = uniform(rng, -std::numbers::pi / 6.0, std::numbers::pi / 6.0);
  p.scale = uniform(rng, 0.5, 1.5);
  for (double& t : p.translation) t = normal(rng, 0.0, 0.4);
  for (double& s : p.shear) s = normal(rng, 0.0, 0.1);
  p.value_shift = uniform(rng, -0.2, 0.2);
  p.saturation_shift = uniform(rng, -0.15, 0.15);
  p.color_noise_std = 0.05;
  p.audio_gain = uniform(rng, 0.5, 1.5);
  return p;
}

Mat3 AugmentParams::linear_part() const {
  const Mat3 ry = axis_rotation({0.0, 1.0, 0.0}, rotation_y);
  const Mat3 ra = axis_rotation(rotation_axis, axis_angle);
  Mat3 shear_m{{{1.0, shear[0], shear[1]}, {shear[2], 1.0, shear[3]}, {shear[4], shear[5], 1.0}}};
  Mat3 m = matmul(ra, ry);
  for (auto& row : m)
    for (double& v : row) v *= scale;
  return matmul(shear_m, m);
}

PointCloudFrame augment_coords(const PointCloudFrame& frame, const AugmentParams& params) {
  const Mat3 m = params.linear_part();
  PointCloudFrame out;
  out.colors = frame.colors;
  out.coords.reserve(frame.size());
  for (const auto& p : frame.coords) {
    Vec3 q;
    for (std::size_t i = 0; i < 3; ++i) q[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + params.translation[i];
    out.coords.push_back(q);
  }
  return out;
}

Vec3 rgb_to_hsv(const Vec3& rgb) {
  const double r = rgb[0], g = rgb[1], b = rgb[2];
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      h = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

Vec3 hsv_to_rgb(const Vec3& hsv) {
  const double h = hsv[0] * 6.0, s = hsv[1], v = hsv[2];
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(std::floor(h)) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

PointCloudFrame augment_colors(const PointCloudFrame& frame, const AugmentParams& params, Rng& rng) {
  PointCloudFrame out = frame;
  for (auto& color : out.colors) {
    Vec3 hsv = rgb_to_hsv(color);
    hsv[1] = std::clamp(hsv[1] + params.saturation_shift, 0.0, 1.0);
    hsv[2] = std::clamp(hsv[2] + params.value_shift, 0.0, 1.0);
    color = hsv_to_rgb(hsv);
    if (params.color_noise_std > 0.0) {
      for (double& c : color) c = std::clamp(c + normal(rng, 0.0, params.color_noise_std), 0.0, 1.0);
    }
  }
  return out;
}

std::vector<Instrument> Dataset::instruments() const {
  std::vector<Instrument> out;
  for (Instrument inst : fusion::all_instruments()) {
    if (!videos_of(inst).empty() && !audio_of(inst).empty()) out.push_back(inst);
  }
  return out;
}

std::vector<const VideoClip*> Dataset::videos_of(Instrument instrument) const {
  std::vector<const VideoClip*> out;
  for (const auto& v : videos)
    if (v.instrument == instrument) out.push_back(&v);
  return out;
}

std::vector<const AudioRecording*> Dataset::audio_of(Instrument instrument) const {
  std::vector<const AudioRecording*> out;
  for (const auto& a : audio)
    if (a.instrument == instrument) out.push_back(&a);
  return out;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "val";
    case Split::test: return "test";
  }
  return "train";
}

bool ManifestEntry::is_audio() const {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".wav";
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? "" : field.substr(first, last - first + 1));
  }
  return fields;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_csv(line);
    if (fields.empty() || fields[0].empty() || fields[0][0] == '#') continue;
    if (line_no == 1 && fields[0] == "instrument") continue;
    const std::string where = "manifest line " + std::to_string(line_no);
    if (fields.size() < 4) throw DataError(where + ": expected at least 4 fields");
    ManifestEntry e;
    const auto inst = fusion::parse_instrument(fields[0]);
    if (!inst) throw DataError(where + ": unknown instrument '" + fields[0] + "'");
    e.instrument = *inst;
    e.split = fields[1];
    if (e.split != "train" && e.split != "val" && e.split != "test" && e.split != "auto") {
      throw DataError(where + ": split must be train, val, test or auto");
    }
    e.path = fields[2];
    if (e.path.is_relative()) e.path = base_dir / e.path;
    e.performer = fields[3];
    if (e.performer.empty()) throw DataError(where + ": empty performer id");
    if (fields.size() >= 5 && !fields[4].empty()) {
      try {
        e.fps = std::stod(fields[4]);
      } catch (const std::exception&) {
        throw DataError(where + ": bad fps '" + fields[4] + "'");
      }
      if (!(e.fps > 0.0)) throw DataError(where + ": fps must be positive");
    }
    if (fields.size() >= 6) {
      // The axes field contains commas itself, so it takes the rest of the row.
      std::string axes = fields[5];
      for (std::size_t i = 6; i < fields.size(); ++i) axes += "," + fields[i];
      try {
        if (!axes.empty()) e.axes = AxisConvention::parse(axes);
      } catch (const ConfigError& err) {
        throw DataError(where + ": " + err.what());
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::vector<ManifestEntry> resolve_splits(std::vector<ManifestEntry> entries, std::uint64_t seed) {
  for (int audio = 0; audio < 2; ++audio) {
    std::set<std::string> performers;
    for (const auto& e : entries)
      if (e.split == "auto" && e.is_audio() == (audio == 1)) performers.insert(e.performer);
    if (performers.empty()) continue;
    std::vector<std::string> order(performers.begin(), performers.end());
    Rng rng = derive_stream(seed, {static_cast<std::uint64_t>(audio)});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = order.size();
    const std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.75 * n)));
    const std::size_t n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.15 * n)));
    std::map<std::string, std::string> assigned;
    for (std::size_t i = 0; i < n; ++i) {
      assigned[order[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    }
    for (auto& e : entries)
      if (e.split == "auto" && e.is_audio() == (audio == 1)) e.split = assigned[e.performer];
  }
  check_split_disjoint(entries);
  return entries;
}

void check_split_disjoint(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, std::string> seen;
  for (const auto& e : entries) {
    if (e.split == "auto") continue;
    auto [it, inserted] = seen.emplace(e.performer, e.split);
    if (!inserted && it->second != e.split) {
      throw DataError("performer '" + e.performer + "' appears in both " + it->second + " and " + e.split +
                      " splits");
    }
  }
}

Dataset load_split(const std::vector<ManifestEntry>& entries, Split split) {
  Dataset ds;
  for (const auto& e : entries) {
    if (e.split == "auto") throw ContractError("load_split: unresolved auto split for " + e.path.string());
    if (e.split != split_name(split)) continue;
    if (e.is_audio()) {
      ds.audio.push_back({dsp::resample_mono(dsp::read_wav(e.path)), e.instrument, e.performer});
      continue;
    }
    if (!std::filesystem::is_directory(e.path)) throw DataError("video directory not found: " + e.path.string());
    std::vector<std::filesystem::path> files;
    for (const auto& f : std::filesystem::directory_iterator(e.path)) {
      if (f.is_regular_file() && f.path().extension() == ".ply") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .ply frames in " + e.path.string());
    VideoClip clip{{}, e.fps, e.instrument, e.performer};
    for (const auto& f : files) clip.frames.push_back(preprocess_frame(sparse::read_ply(f), e.axes));
    ds.videos.push_back(std::move(clip));
  }
  return ds;
}

TrainingItem sample_training_item(const Dataset& dataset, Rng& rng, const SampleOptions& options) {
  if (options.sources == 0 || options.frames == 0) throw ContractError("sample_training_item: N and F must be >= 1");
  std::vector<Instrument> available = dataset.instruments();
  if (available.size() < options.sources) {
    throw DataError("need " + std::to_string(options.sources) + " instruments with both audio and video, found " +
                    std::to_string(available.size()));
  }
  std::shuffle(available.begin(), available.end(), rng);
  available.resize(options.sources);

  TrainingItem item;
  item.instruments = available;
  item.mixture = dsp::AudioClip{std::vector<double>(dsp::kSnippetLength, 0.0), dsp::kSampleRate};
  std::vector<Grid> mags;
  for (Instrument inst : available) {
    const auto recordings = dataset.audio_of(inst);
    const auto& rec = *recordings[uniform_index(rng, recordings.size())];
    if (rec.clip.size() < dsp::kSnippetLength) {
      throw DataError("recording of " + std::string(fusion::instrument_name(inst)) + " by " + rec.performer +
                      " is shorter than one snippet");
    }
    const std::size_t offset = uniform_index(rng, rec.clip.size() - dsp::kSnippetLength + 1);
    dsp::AudioClip snippet = dsp::crop_snippet(rec.clip, offset);
    const AugmentParams aug = options.augment ? AugmentParams::sample(rng) : AugmentParams::identity();
    if (aug.audio_gain != 1.0)
      for (double& s : snippet.samples) s *= aug.audio_gain;

    const auto videos = dataset.videos_of(inst);
    const auto& video = *videos[uniform_index(rng, videos.size())];
    const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(video.fps)));
    const std::size_t span = (options.frames - 1) * stride + 1;
    if (video.frames.size() < span) {
      throw DataError("video of " + std::string(fusion::instrument_name(inst)) + " by " + video.performer + " has " +
                      std::to_string(video.frames.size()) + " frames, need " + std::to_string(span));
    }
    const std::size_t start = uniform_index(rng, video.frames.size() - span + 1);
    std::vector<PointCloudFrame> frames;
    for (std::size_t f = 0; f < options.frames; ++f) {
      PointCloudFrame frame = video.frames[start + f * stride];
      if (options.augment) {
        frame = augment_coords(frame, aug);
        frame = augment_colors(frame, aug, rng);
      }
      frames.push_back(std::move(frame));
    }

    for (std::size_t i = 0; i < snippet.size(); ++i) item.mixture.samples[i] += snippet.samples[i];
    mags.push_back(dsp::warped_magnitude(snippet));
    item.snippets.push_back(std::move(snippet));
    item.frames.push_back(std::move(frames));
  }
  item.mixture_magnitude = dsp::warped_magnitude(item.mixture);
  for (std::size_t i = 0; i < mags.size(); ++i) item.ibm.push_back(fusion::ideal_binary_mask(mags, i));
  return item;
}

}  // namespace pcsep::data
