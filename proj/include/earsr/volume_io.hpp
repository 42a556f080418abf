#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "earsr/image.hpp"

namespace earsr::io {

// Slice container ("ER16"), all integers little-endian:
//   0  char[4]  magic "ER16"
//   4  u16      version (1)
//   6  u16      reserved (0)
//   8  u32      height
//   12 u32      width
//   16 f64      pixel size y (mm)
//   24 f64      pixel size x (mm)
//   32 u16[h*w] row-major samples, intensity = sample / 65535
inline constexpr std::size_t kSliceHeaderBytes = 32;
inline constexpr const char* kSliceExtension = ".r16";
inline constexpr const char* kManifestName = "manifest.json";

std::uint16_t quantize(double v);
double dequantize(std::uint16_t q);

void save_slice(const Slice& s, const std::filesystem::path& path);
Slice load_slice(const std::filesystem::path& path);

// Writes `slice_%05d.r16` files plus manifest.json with voxel_size_mm and dims
// (both ordered z, y, x) and optional scanner/subject keys.
void save_volume(const Volume& v, const std::filesystem::path& dir);
Volume load_volume(const std::filesystem::path& dir);

std::string slice_file_name(int z);

// Writes `bytes` to path via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace earsr::io
