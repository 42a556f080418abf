#include "earsr/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "earsr/error.hpp"

namespace earsr::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::uint16_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * 65535.0));
}

double dequantize(std::uint16_t q) { return static_cast<double>(q) / 65535.0; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_slice(const Slice& s, const fs::path& path) {
  if (path.has_parent_path() && !fs::is_directory(path.parent_path())) {
    throw Error(ErrorCode::Io, "parent directory missing for " + path.string());
  }
  std::string bytes;
  bytes.reserve(kSliceHeaderBytes + 2 * s.data.size());
  bytes.append("ER16", 4);
  put_u16(bytes, 1);
  put_u16(bytes, 0);
  put_u32(bytes, static_cast<std::uint32_t>(s.data.height()));
  put_u32(bytes, static_cast<std::uint32_t>(s.data.width()));
  put_f64(bytes, s.pixel_size_mm.y);
  put_f64(bytes, s.pixel_size_mm.x);
  for (double v : s.data.pixels()) put_u16(bytes, quantize(v));
  write_file_atomic(path, bytes);
}

Slice load_slice(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kSliceHeaderBytes) {
    throw FormatError("truncated slice header in " + path.string(), bytes.size());
  }
  if (bytes.compare(0, 4, "ER16") != 0) throw FormatError("bad magic in " + path.string(), 0);
  if (get_le(bytes, 4, 2) != 1) throw FormatError("unsupported slice version", 4);
  const auto h = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  const auto w = static_cast<std::uint32_t>(get_le(bytes, 12, 4));
  if (h == 0 || w == 0) throw FormatError("zero slice dimension", 8);
  Slice s;
  std::uint64_t bits = get_le(bytes, 16, 8);
  std::memcpy(&s.pixel_size_mm.y, &bits, 8);
  bits = get_le(bytes, 24, 8);
  std::memcpy(&s.pixel_size_mm.x, &bits, 8);
  if (!(s.pixel_size_mm.y > 0.0) || !(s.pixel_size_mm.x > 0.0)) {
    throw FormatError("non-positive pixel size", 16);
  }
  const std::uint64_t expected = kSliceHeaderBytes + 2ull * h * w;
  if (bytes.size() != expected) {
    throw FormatError("slice payload size mismatch in " + path.string(),
                      std::min<std::uint64_t>(bytes.size(), expected));
  }
  s.data = Image(static_cast<int>(h), static_cast<int>(w));
  auto px = s.data.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = dequantize(static_cast<std::uint16_t>(get_le(bytes, kSliceHeaderBytes + 2 * i, 2)));
  }
  return s;
}

std::string slice_file_name(int z) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "slice_%05d%s", z, kSliceExtension);
  return buf;
}

void save_volume(const Volume& v, const fs::path& dir) {
  v.validate();
  fs::create_directories(dir);
  for (int z = 0; z < v.depth(); ++z) {
    save_slice(Slice{v.slices[z], PixelSize{v.voxel_size_mm.y, v.voxel_size_mm.x}, {}},
               dir / slice_file_name(z));
  }
  json m;
  m["voxel_size_mm"] = {v.voxel_size_mm.z, v.voxel_size_mm.y, v.voxel_size_mm.x};
  m["dims"] = {v.depth(), v.height(), v.width()};
  for (const auto& [k, val] : v.meta) m[k] = val;
  write_file_atomic(dir / kManifestName, m.dump(2) + "\n");
}

Volume load_volume(const fs::path& dir) {
  const fs::path mpath = dir / kManifestName;
  if (!fs::exists(mpath)) throw Error(ErrorCode::MissingManifest, "no manifest in " + dir.string());
  json m;
  try {
    m = json::parse(read_file(mpath));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), e.byte);
  }
  if (!m.is_object()) throw FormatError("manifest must be a JSON object", 0);
  for (const char* key : {"voxel_size_mm", "dims"}) {
    if (!m.contains(key)) {
      throw Error(ErrorCode::MissingManifest, std::string("manifest lacks \"") + key + "\"");
    }
  }
  const auto& vs = m["voxel_size_mm"];
  const auto& dims = m["dims"];
  if (!vs.is_array() || vs.size() != 3 || !dims.is_array() || dims.size() != 3) {
    throw Error(ErrorCode::BadArgument, "voxel_size_mm and dims must be arrays of 3");
  }
  Volume v;
  v.voxel_size_mm = VoxelSize{vs[0].get<double>(), vs[1].get<double>(), vs[2].get<double>()};
  const int depth = dims[0].get<int>();
  const int height = dims[1].get<int>();
  const int width = dims[2].get<int>();
  for (auto it = m.begin(); it != m.end(); ++it) {
    if (it.key() == "voxel_size_mm" || it.key() == "dims") continue;
    v.meta[it.key()] = it->is_string() ? it->get<std::string>() : it->dump();
  }
  v.slices.reserve(depth);
  for (int z = 0; z < depth; ++z) {
    Slice s = load_slice(dir / slice_file_name(z));
    if (s.data.height() != height || s.data.width() != width) {
      throw FormatError("slice " + std::to_string(z) + " dims disagree with manifest", 8);
    }
    v.slices.push_back(std::move(s.data));
  }
  v.validate();
  return v;
}

}  // namespace earsr::io
