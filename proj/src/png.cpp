#include "earsr/png.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>
#include <zlib.h>

#include "earsr/error.hpp"

namespace earsr::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

void chunk(std::string& out, const char* type, const std::string& body) {
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  std::string typed(type, 4);
  typed += body;
  out += typed;
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(typed.data()), static_cast<uInt>(typed.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::string encode_png_gray8(const Image& img) {
  if (img.empty()) throw Error(ErrorCode::BadArgument, "cannot encode an empty image");
  const int h = img.height(), w = img.width();
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (w + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < w; ++x) {
      raw.push_back(static_cast<unsigned char>(std::lround(std::clamp(img(y, x), 0.0, 1.0) * 255.0)));
    }
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_len, raw.data(),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error(ErrorCode::Io, "zlib compression failed");
  }
  packed.resize(packed_len);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit, grayscale, deflate, no filter, no interlace
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", packed);
  chunk(out, "IEND", "");
  return out;
}

}  // namespace earsr::io
