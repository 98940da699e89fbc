#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "pcsep/sparse.hpp"

namespace pcsep::sparse {

// Reads the vertex element of an ascii or binary_little_endian PLY file.
// x,y,z are required; red,green,blue (8-bit) become colors in [0,1]. Other
// vertex properties are skipped with a warning, other elements are skipped.
// Malformed input raises ParseError carrying the byte offset.
PointCloudFrame parse_ply(std::string_view bytes);
PointCloudFrame read_ply(const std::filesystem::path& path);

// float32 x,y,z plus uchar red,green,blue when the frame has colors.
std::string to_ply(const PointCloudFrame& frame, bool binary);
void write_ply(const std::filesystem::path& path, const PointCloudFrame& frame, bool binary = true);

}  // namespace pcsep::sparse
