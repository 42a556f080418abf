#pragma once

#include <string>

#include "earsr/image.hpp"

namespace earsr::io {

// 8-bit grayscale PNG of an image whose intensities lie in [0, 1] (values
// outside are clamped).
std::string encode_png_gray8(const Image& img);

}  // namespace earsr::io
