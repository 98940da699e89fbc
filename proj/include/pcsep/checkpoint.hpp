#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace pcsep {

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

// Versioned binary container:
//   "PCSEP001"
//   u64 array count
//   per array: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64 values[prod(dims)]
// All integers and floats little-endian.
class Checkpoint {
 public:
  static constexpr char kMagic[9] = "PCSEP001";

  void put(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values);
  void put_scalar(std::string name, double value) { put(std::move(name), {1}, {value}); }

  bool contains(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  void write(std::ostream& os) const;
  static Checkpoint read(std::istream& is);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<NamedArray> arrays_;
};

}  // namespace pcsep
