#include "pcsep/ply.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include "pcsep/errors.hpp"
#include "pcsep/log.hpp"

namespace pcsep::sparse {

namespace {

enum class Scalar { int8, uint8, int16, uint16, int32, uint32, float32, float64 };

std::optional<Scalar> parse_scalar(std::string_view name) {
  if (name == "char" || name == "int8") return Scalar::int8;
  if (name == "uchar" || name == "uint8") return Scalar::uint8;
  if (name == "short" || name == "int16") return Scalar::int16;
  if (name == "ushort" || name == "uint16") return Scalar::uint16;
  if (name == "int" || name == "int32") return Scalar::int32;
  if (name == "uint" || name == "uint32") return Scalar::uint32;
  if (name == "float" || name == "float32") return Scalar::float32;
  if (name == "double" || name == "float64") return Scalar::float64;
  return std::nullopt;
}

std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::int8:
    case Scalar::uint8:
      return 1;
    case Scalar::int16:
    case Scalar::uint16:
      return 2;
    case Scalar::int32:
    case Scalar::uint32:
    case Scalar::float32:
      return 4;
    case Scalar::float64:
      return 8;
  }
  return 0;
}

bool is_integer(Scalar s) { return s != Scalar::float32 && s != Scalar::float64; }

struct Property {
  std::string name;
  Scalar type = Scalar::float32;
  bool is_list = false;
  Scalar count_type = Scalar::uint8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  bool binary = false;
  std::vector<Element> elements;
  std::size_t body_offset = 0;
};

std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) words.push_back(line.substr(start, i - start));
  }
  return words;
}

Header parse_header(std::string_view bytes) {
  Header h;
  std::size_t pos = 0;
  bool saw_format = false;
  bool first = true;
  while (true) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) throw ParseError("PLY header is not terminated by end_header", pos);
    const auto words = split_words(bytes.substr(pos, eol - pos));
    const std::size_t line_offset = pos;
    pos = eol + 1;
    if (first) {
      if (words.size() != 1 || words[0] != "ply") throw ParseError("missing 'ply' magic", line_offset);
      first = false;
      continue;
    }
    if (words.empty() || words[0] == "comment" || words[0] == "obj_info") continue;
    if (words[0] == "end_header") break;
    if (words[0] == "format") {
      if (words.size() < 2) throw ParseError("incomplete format line", line_offset);
      if (words[1] == "ascii") {
        h.binary = false;
      } else if (words[1] == "binary_little_endian") {
        h.binary = true;
      } else {
        throw ParseError("unsupported PLY format '" + std::string(words[1]) + "'", line_offset);
      }
      saw_format = true;
    } else if (words[0] == "element") {
      if (words.size() != 3) throw ParseError("malformed element line", line_offset);
      Element e;
      e.name = std::string(words[1]);
      const auto r = std::from_chars(words[2].data(), words[2].data() + words[2].size(), e.count);
      if (r.ec != std::errc{}) throw ParseError("bad element count", line_offset);
      h.elements.push_back(std::move(e));
    } else if (words[0] == "property") {
      if (h.elements.empty()) throw ParseError("property before any element", line_offset);
      Property p;
      if (words.size() == 5 && words[1] == "list") {
        auto ct = parse_scalar(words[2]);
        auto it = parse_scalar(words[3]);
        if (!ct || !it || !is_integer(*ct)) throw ParseError("bad list property types", line_offset);
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = std::string(words[4]);
      } else if (words.size() == 3) {
        auto t = parse_scalar(words[1]);
        if (!t) throw ParseError("unknown property type '" + std::string(words[1]) + "'", line_offset);
        p.type = *t;
        p.name = std::string(words[2]);
      } else {
        throw ParseError("malformed property line", line_offset);
      }
      h.elements.back().properties.push_back(std::move(p));
    } else {
      throw ParseError("unexpected header keyword '" + std::string(words[0]) + "'", line_offset);
    }
  }
  if (!saw_format) throw ParseError("PLY header has no format line", 0);
  h.body_offset = pos;
  return h;
}

class BinaryCursor {
 public:
  BinaryCursor(std::string_view bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  double read(Scalar s) {
    const std::size_t n = scalar_size(s);
    if (pos_ + n > bytes_.size()) throw ParseError("binary PLY body truncated", pos_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    switch (s) {
      case Scalar::int8:
        return static_cast<double>(static_cast<std::int8_t>(*p));
      case Scalar::uint8:
        return static_cast<double>(static_cast<std::uint8_t>(*p));
      case Scalar::int16:
        return static_cast<double>(load<std::int16_t>(p));
      case Scalar::uint16:
        return static_cast<double>(load<std::uint16_t>(p));
      case Scalar::int32:
        return static_cast<double>(load<std::int32_t>(p));
      case Scalar::uint32:
        return static_cast<double>(load<std::uint32_t>(p));
      case Scalar::float32:
        return static_cast<double>(load<float>(p));
      case Scalar::float64:
        return load<double>(p);
    }
    return 0.0;
  }

  std::size_t pos() const { return pos_; }

 private:
  template <typename T>
  static T load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
  }

  std::string_view bytes_;
  std::size_t pos_;
};

class AsciiCursor {
 public:
  AsciiCursor(std::string_view bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  double read() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (pos_ >= bytes_.size()) throw ParseError("ascii PLY body ended early", pos_);
    double v = 0.0;
    const char* begin = bytes_.data() + pos_;
    const auto r = std::from_chars(begin, bytes_.data() + bytes_.size(), v);
    if (r.ec != std::errc{}) throw ParseError("malformed number in ascii PLY body", pos_);
    pos_ += static_cast<std::size_t>(r.ptr - begin);
    return v;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_;
};

template <typename Cursor>
double read_value(Cursor& cur, Scalar s, bool binary) {
  if constexpr (std::is_same_v<Cursor, BinaryCursor>) {
    (void)binary;
    return cur.read(s);
  } else {
    (void)s;
    (void)binary;
    return cur.read();
  }
}

template <typename Cursor>
PointCloudFrame read_body(const Header& h, Cursor cur) {
  PointCloudFrame frame;
  bool found_vertex = false;
  for (const Element& e : h.elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const Property& p : e.properties) {
          std::size_t n = 1;
          if (p.is_list) {
            const double c = read_value(cur, p.count_type, h.binary);
            if (c < 0) throw ParseError("negative list length", cur.pos());
            n = static_cast<std::size_t>(c);
          }
          for (std::size_t k = 0; k < n; ++k) read_value(cur, p.type, h.binary);
        }
      }
      continue;
    }
    found_vertex = true;
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (std::size_t k = 0; k < e.properties.size(); ++k) {
      const Property& p = e.properties[k];
      const int idx = static_cast<int>(k);
      if (p.is_list) {
        log_warning("PLY: ignoring vertex list property '" + p.name + "'");
        continue;
      }
      if (p.name == "x") ix = idx;
      else if (p.name == "y") iy = idx;
      else if (p.name == "z") iz = idx;
      else if (p.name == "red") ir = idx;
      else if (p.name == "green") ig = idx;
      else if (p.name == "blue") ib = idx;
      else log_warning("PLY: ignoring unknown vertex property '" + p.name + "'");
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x, y, z properties", h.body_offset);
    const bool colored = ir >= 0 && ig >= 0 && ib >= 0;
    frame.coords.reserve(e.count);
    if (colored) frame.colors.reserve(e.count);
    std::vector<double> row(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        const Property& p = e.properties[k];
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(read_value(cur, p.count_type, h.binary));
          for (std::size_t m = 0; m < n; ++m) read_value(cur, p.type, h.binary);
          continue;
        }
        row[k] = read_value(cur, p.type, h.binary);
      }
      frame.coords.push_back({row[ix], row[iy], row[iz]});
      if (colored) {
        auto channel = [&](int idx) {
          const Scalar t = e.properties[static_cast<std::size_t>(idx)].type;
          const double v = is_integer(t) ? row[idx] / 255.0 : row[idx];
          return std::clamp(v, 0.0, 1.0);
        };
        frame.colors.push_back({channel(ir), channel(ig), channel(ib)});
      }
    }
  }
  if (!found_vertex) throw ParseError("PLY has no vertex element", h.body_offset);
  return frame;
}

}  // namespace

PointCloudFrame parse_ply(std::string_view bytes) {
  const Header h = parse_header(bytes);
  if (h.binary) return read_body(h, BinaryCursor(bytes, h.body_offset));
  return read_body(h, AsciiCursor(bytes, h.body_offset));
}

PointCloudFrame read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open PLY file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return parse_ply(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::string to_ply(const PointCloudFrame& frame, bool binary) {
  std::ostringstream os;
  os << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  os << "element vertex " << frame.coords.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  const bool colored = frame.has_colors();
  if (colored) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  auto to_byte = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (std::size_t i = 0; i < frame.coords.size(); ++i) {
    const auto& p = frame.coords[i];
    if (binary) {
      for (double c : p) {
        const float f = static_cast<float>(c);
        os.write(reinterpret_cast<const char*>(&f), sizeof(f));
      }
      if (colored) {
        for (double c : frame.colors[i]) {
          const std::uint8_t b = to_byte(c);
          os.write(reinterpret_cast<const char*>(&b), 1);
        }
      }
    } else {
      os << static_cast<float>(p[0]) << ' ' << static_cast<float>(p[1]) << ' ' << static_cast<float>(p[2]);
      if (colored) {
        for (double c : frame.colors[i]) os << ' ' << static_cast<int>(to_byte(c));
      }
      os << '\n';
    }
  }
  return os.str();
}

void write_ply(const std::filesystem::path& path, const PointCloudFrame& frame, bool binary) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write PLY file: " + path.string());
  const std::string bytes = to_ply(frame, binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace pcsep::sparse
