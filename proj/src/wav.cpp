#include "pcsep/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pcsep/errors.hpp"
#include "pcsep/log.hpp"

namespace pcsep::dsp {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T swap_bytes(T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return v;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw ParseError(std::string("wav: truncated ") + what, bytes_.size());
  }

  std::string_view tag() {
    need(4, "chunk tag");
    auto t = bytes_.substr(pos_, 4);
    pos_ += 4;
    return t;
  }

  template <typename T>
  T le() {
    need(sizeof(T), "integer field");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) v = swap_bytes(v);
    pos_ += sizeof(T);
    return v;
  }

  void skip(std::size_t n) {
    need(n, "chunk body");
    pos_ += n;
  }

  const char* data() const { return bytes_.data() + pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

float decode_float(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = swap_bytes(bits);
  return std::bit_cast<float>(bits);
}

std::int16_t decode_i16(const char* p) {
  std::uint16_t bits;
  std::memcpy(&bits, p, 2);
  if constexpr (std::endian::native == std::endian::big) bits = swap_bytes(bits);
  return static_cast<std::int16_t>(bits);
}

template <typename T>
void append_le(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = swap_bytes(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

MultiChannelAudio parse_wav(std::string_view bytes) {
  Reader r(bytes);
  if (r.tag() != "RIFF") throw ParseError("wav: missing RIFF header", 0);
  r.le<std::uint32_t>();
  if (r.tag() != "WAVE") throw ParseError("wav: missing WAVE tag", 8);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() > 0) {
    const std::size_t chunk_start = r.offset();
    const std::string_view id = r.tag();
    const std::uint32_t size = r.le<std::uint32_t>();
    if (id == "fmt ") {
      if (size < 16) throw ParseError("wav: fmt chunk too small", chunk_start);
      const std::size_t body = r.offset();
      format = r.le<std::uint16_t>();
      channels = r.le<std::uint16_t>();
      rate = r.le<std::uint32_t>();
      r.le<std::uint32_t>();  // byte rate
      r.le<std::uint16_t>();  // block align
      bits = r.le<std::uint16_t>();
      if (format == kFormatExtensible) {
        if (size < 40) throw ParseError("wav: extensible fmt chunk too small", chunk_start);
        r.le<std::uint16_t>();  // cb size
        r.le<std::uint16_t>();  // valid bits
        r.le<std::uint32_t>();  // channel mask
        format = r.le<std::uint16_t>();  // first two bytes of the subformat GUID
      }
      r.skip(size - (r.offset() - body) + (size & 1u));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ParseError("wav: data chunk before fmt chunk", chunk_start);
      if (channels == 0) throw ParseError("wav: zero channels", chunk_start);
      if (rate == 0) throw ParseError("wav: zero sample rate", chunk_start);
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32) {
        throw ParseError("wav: unsupported sample format " + std::to_string(format) + " with " +
                             std::to_string(bits) + " bits",
                         chunk_start);
      }
      const std::size_t width = bits / 8;
      const std::size_t frame_bytes = width * channels;
      r.need(size, "data chunk");
      const std::size_t frames = size / frame_bytes;
      MultiChannelAudio audio;
      audio.sample_rate = rate;
      audio.channels.assign(channels, std::vector<double>(frames));
      const char* p = r.data();
      for (std::size_t i = 0; i < frames; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
          const char* s = p + i * frame_bytes + c * width;
          const double v = pcm16 ? decode_i16(s) / 32768.0 : static_cast<double>(decode_float(s));
          if (!std::isfinite(v)) {
            throw ParseError("wav: non-finite sample", static_cast<std::size_t>(s - bytes.data()));
          }
          audio.channels[c][i] = v;
        }
      }
      return audio;
    } else {
      r.skip(size + (size & 1u));
    }
  }
  throw ParseError("wav: no data chunk", bytes.size());
}

MultiChannelAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_wav(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::string to_wav(const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw ContractError("to_wav: sample rate must be positive");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  append_le<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  append_le<std::uint32_t>(out, 16);
  append_le<std::uint16_t>(out, kFormatPcm);
  append_le<std::uint16_t>(out, 1);
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  append_le<std::uint32_t>(out, rate);
  append_le<std::uint32_t>(out, rate * 2);
  append_le<std::uint16_t>(out, 2);
  append_le<std::uint16_t>(out, 16);
  out += "data";
  append_le<std::uint32_t>(out, data_bytes);
  std::size_t clipped = 0;
  for (double s : clip.samples) {
    double scaled = std::round(s * 32767.0);
    if (scaled > 32767.0 || scaled < -32768.0 || !std::isfinite(scaled)) {
      ++clipped;
      scaled = std::isfinite(scaled) ? std::clamp(scaled, -32768.0, 32767.0) : 0.0;
    }
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  if (clipped > 0) log_warning("wav output saturated " + std::to_string(clipped) + " samples");
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const std::string bytes = to_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write wav file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing wav file " + path.string());
}

}  // namespace pcsep::dsp
