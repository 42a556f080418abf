#include "earsr/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "earsr/error.hpp"

namespace earsr::imaging {

Image zscore_then_unit_normalize(const Image& img, bool* constant) {
  if (constant) *constant = false;
  const auto px = img.pixels();
  const double n = static_cast<double>(px.size());
  if (px.empty()) throw Error(ErrorCode::BadArgument, "cannot normalize an empty image");

  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : px) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);

  Image out(img.height(), img.width(), 0.0);
  if (!(sd > 0.0)) {
    if (constant) *constant = true;
    return out;
  }
  auto o = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) o[i] = (px[i] - mean) / sd;
  const auto [lo_it, hi_it] = std::minmax_element(o.begin(), o.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0)) {
    if (constant) *constant = true;
    std::fill(o.begin(), o.end(), 0.0);
    return out;
  }
  for (double& v : o) v = (v - lo) / range;
  return out;
}

NormalizeResult zscore_then_unit_normalize(const Slice& s) {
  NormalizeResult r;
  r.slice.pixel_size_mm = s.pixel_size_mm;
  r.slice.source = s.source;
  r.slice.data = zscore_then_unit_normalize(s.data, &r.constant);
  return r;
}

int resampled_dim(int dim, double in_size, double target_size) {
  if (!(in_size > 0.0) || !(target_size > 0.0)) {
    throw Error(ErrorCode::BadArgument, "pixel sizes must be positive");
  }
  const double exact = static_cast<double>(dim) * in_size / target_size;
  // Near-ties round up so decimal sizes behave like exact rationals.
  return static_cast<int>(std::floor(exact + 0.5 + 1e-9));
}

double cubic_kernel(double t, double a) {
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> make_taps(int in_len, int out_len) {
  std::vector<Taps> taps(out_len);
  const double scale = static_cast<double>(in_len) / out_len;
  for (int o = 0; o < out_len; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      const int i = static_cast<int>(base) - 1 + k;
      taps[o].index[k] = std::clamp(i, 0, in_len - 1);
      taps[o].weight[k] = cubic_kernel(frac - (k - 1));
      sum += taps[o].weight[k];
    }
    for (double& w : taps[o].weight) w /= sum;
  }
  return taps;
}

}  // namespace

Image bicubic_resize(const Image& img, int out_height, int out_width) {
  if (img.empty()) throw Error(ErrorCode::BadArgument, "cannot resample an empty image");
  if (out_height < 1 || out_width < 1) {
    throw Error(ErrorCode::BadArgument, "resampled image would be empty");
  }
  const int h = img.height();
  const int w = img.width();
  const auto tx = make_taps(w, out_width);
  const auto ty = make_taps(h, out_height);

  Image rows(h, out_width);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Taps& t = tx[x];
      rows(y, x) = t.weight[0] * img(y, t.index[0]) + t.weight[1] * img(y, t.index[1]) +
                   t.weight[2] * img(y, t.index[2]) + t.weight[3] * img(y, t.index[3]);
    }
  }
  Image out(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    const Taps& t = ty[y];
    for (int x = 0; x < out_width; ++x) {
      out(y, x) = t.weight[0] * rows(t.index[0], x) + t.weight[1] * rows(t.index[1], x) +
                  t.weight[2] * rows(t.index[2], x) + t.weight[3] * rows(t.index[3], x);
    }
  }
  return out;
}

Slice bicubic_resample(const Slice& s, PixelSize target, int max_dim) {
  if (!(target.y > 0.0) || !(target.x > 0.0)) {
    throw Error(ErrorCode::BadArgument, "target pixel size must be positive");
  }
  const int oh = resampled_dim(s.data.height(), s.pixel_size_mm.y, target.y);
  const int ow = resampled_dim(s.data.width(), s.pixel_size_mm.x, target.x);
  if (oh > max_dim || ow > max_dim) {
    throw Error(ErrorCode::OutputTooLarge, "resampled slice would be " + std::to_string(oh) +
                                               "x" + std::to_string(ow) + ", cap is " +
                                               std::to_string(max_dim));
  }
  Slice out;
  out.pixel_size_mm = target;
  out.source = s.source;
  if (oh == s.data.height() && ow == s.data.width()) {
    out.data = s.data;
  } else {
    out.data = bicubic_resize(s.data, oh, ow);
  }
  return out;
}

Image crop(const Image& img, const RoiBox& box) {
  if (box.y0 < 0 || box.x0 < 0 || box.y1 > img.height() || box.x1 > img.width() ||
      box.y0 >= box.y1 || box.x0 >= box.x1) {
    throw Error(ErrorCode::BadArgument, "ROI box outside image");
  }
  Image out(box.height(), box.width());
  for (int y = 0; y < box.height(); ++y) {
    for (int x = 0; x < box.width(); ++x) out(y, x) = img(box.y0 + y, box.x0 + x);
  }
  return out;
}

std::pair<Slice, RoiBox> crop_roi(const Slice& s, double threshold, int margin) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::BadArgument, "ROI threshold must lie in [0, 1]");
  }
  if (margin < 0) throw Error(ErrorCode::BadArgument, "ROI margin must be non-negative");
  const Image& img = s.data;
  int y0 = img.height(), x0 = img.width(), y1 = -1, x1 = -1;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (img(y, x) >= threshold) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y);
        x1 = std::max(x1, x);
      }
    }
  }
  if (y1 < 0) throw Error(ErrorCode::EmptyForeground, "no pixel reaches the ROI threshold");
  RoiBox box{std::max(0, y0 - margin), std::max(0, x0 - margin),
             std::min(img.height(), y1 + 1 + margin), std::min(img.width(), x1 + 1 + margin)};
  Slice out{crop(img, box), s.pixel_size_mm, s.source};
  return {std::move(out), box};
}

}  // namespace earsr::imaging
