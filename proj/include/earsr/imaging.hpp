#pragma once

#include <filesystem>
#include <utility>

#include "earsr/image.hpp"

namespace earsr::imaging {

struct NormalizeResult {
  Slice slice;
  // Set when the input had zero variance; the slice is then all zeros.
  bool constant = false;
};

// Z-score standardization followed by min-max rescaling to [0, 1].
NormalizeResult zscore_then_unit_normalize(const Slice& s);
Image zscore_then_unit_normalize(const Image& img, bool* constant = nullptr);

inline constexpr int kDefaultMaxDim = 16384;
inline constexpr double kCubicA = -0.5;

// Output length for resampling `dim` pixels of `in_size` onto a `target_size`
// grid: round-half-up of dim * in_size / target_size.
int resampled_dim(int dim, double in_size, double target_size);

// Cubic convolution kernel with parameter a.
double cubic_kernel(double t, double a = kCubicA);

// Resamples to an explicit output size (separable cubic convolution,
// edge-replicated borders). Sample centres are aligned pixel-centre to
// pixel-centre.
Image bicubic_resize(const Image& img, int out_height, int out_width);

Slice bicubic_resample(const Slice& s, PixelSize target_pixel_size_mm,
                       int max_dim = kDefaultMaxDim);

struct RoiBox {
  int y0 = 0;
  int x0 = 0;
  int y1 = 0;
  int x1 = 0;
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
  friend bool operator==(const RoiBox&, const RoiBox&) = default;
};

inline constexpr double kDefaultRoiThreshold = 0.2;
inline constexpr int kDefaultRoiMargin = 8;

// Tight bounding box of pixels >= threshold, grown by margin and clamped.
// Throws EmptyForeground when no pixel qualifies.
std::pair<Slice, RoiBox> crop_roi(const Slice& s, double threshold,
                                  int margin = kDefaultRoiMargin);

Image crop(const Image& img, const RoiBox& box);

}  // namespace earsr::imaging
