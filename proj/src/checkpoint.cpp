#include "pcsep/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pcsep/errors.hpp"

namespace pcsep {

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

template <typename T>
void write_raw(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  template <typename T>
  T read(const char* what) {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (static_cast<std::size_t>(is_.gcount()) != sizeof(T)) {
      throw ParseError(std::string("checkpoint truncated while reading ") + what, offset_);
    }
    offset_ += sizeof(T);
    return to_little(v);
  }

  std::string read_bytes(std::size_t n, const char* what) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw ParseError(std::string("checkpoint truncated while reading ") + what, offset_);
    }
    offset_ += n;
    return s;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace

void Checkpoint::put(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != values.size()) {
    throw DimensionError("checkpoint array '" + name + "' has " + std::to_string(values.size()) +
                         " values for its shape");
  }
  for (auto& a : arrays_) {
    if (a.name == name) {
      a.shape = std::move(shape);
      a.values = std::move(values);
      return;
    }
  }
  arrays_.push_back(NamedArray{std::move(name), std::move(shape), std::move(values)});
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return true;
  }
  return false;
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return a;
  }
  throw DataError("checkpoint has no array named '" + name + "'");
}

double Checkpoint::get_scalar(const std::string& name) const {
  const auto& a = get(name);
  if (a.values.size() != 1) throw DimensionError("checkpoint array '" + name + "' is not a scalar");
  return a.values[0];
}

void Checkpoint::write(std::ostream& os) const {
  os.write(kMagic, 8);
  write_raw<std::uint64_t>(os, arrays_.size());
  for (const auto& a : arrays_) {
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) write_raw<std::uint64_t>(os, d);
    for (double v : a.values) write_raw<double>(os, v);
  }
}

Checkpoint Checkpoint::read(std::istream& is) {
  Reader r(is);
  if (r.read_bytes(8, "magic") != std::string(kMagic, 8)) throw ParseError("not a PCSEP001 checkpoint", 0);
  Checkpoint ckpt;
  const auto count = r.read<std::uint64_t>("array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.read<std::uint32_t>("name length");
    if (name_len > (1u << 16)) throw ParseError("implausible array name length", r.offset());
    NamedArray a;
    a.name = r.read_bytes(name_len, "array name");
    const auto rank = r.read<std::uint32_t>("rank");
    if (rank > 16) throw ParseError("implausible rank for '" + a.name + "'", r.offset());
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(r.read<std::uint64_t>("dimension"));
      n *= a.shape.back();
    }
    if (n > (1ull << 32)) throw ParseError("implausible size for '" + a.name + "'", r.offset());
    a.values.resize(n);
    for (auto& v : a.values) v = r.read<double>("values");
    ckpt.arrays_.push_back(std::move(a));
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + tmp);
    write(os);
    if (!os) throw DataError("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint: " + path.string());
  return read(is);
}

}  // namespace pcsep
