#pragma once

// Reference implementations used only by tests. They are deliberately naive
// and share no code with the library.

#include <algorithm>
#include <cmath>
#include <vector>

#include "earsr/image.hpp"

namespace oracle {

// Mann-Whitney U for group a: pairs (i, j) with a_i > b_j count 1, ties 1/2.
inline double pair_count_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

// Two-sided permutation p-value: walk every distinct relabelling of the pooled
// sample into groups of the original sizes and count those whose U is at
// least as far from n*m/2 as the observed one.
inline double permutation_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<int> label(pooled.size(), 1);
  std::fill(label.begin(), label.begin() + static_cast<long>(a.size()), 0);
  const double centre = a.size() * b.size() / 2.0;
  const double observed = std::abs(pair_count_u(a, b) - centre);
  long hits = 0, total = 0;
  do {
    std::vector<double> ga, gb;
    for (std::size_t i = 0; i < pooled.size(); ++i) (label[i] == 0 ? ga : gb).push_back(pooled[i]);
    ++total;
    if (std::abs(pair_count_u(ga, gb) - centre) >= observed) ++hits;
  } while (std::next_permutation(label.begin(), label.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Bilinear rotation about the image centre, zero fill outside.
inline earsr::Image rotate(const earsr::Image& img, double degrees) {
  const double t = degrees * M_PI / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double cy = (img.height() - 1) / 2.0, cx = (img.width() - 1) / 2.0;
  earsr::Image out(img.height(), img.width(), 0.0);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double sx = c * (x - cx) + s * (y - cy) + cx;
      const double sy = -s * (x - cx) + c * (y - cy) + cy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      if (x0 < 0 || y0 < 0 || x0 + 1 >= img.width() || y0 + 1 >= img.height()) continue;
      const double fx = sx - x0, fy = sy - y0;
      out(y, x) = (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x0 + 1)) +
                  fy * ((1 - fx) * img(y0 + 1, x0) + fx * img(y0 + 1, x0 + 1));
    }
  }
  return out;
}

inline earsr::Image rotate90(const earsr::Image& img) {
  earsr::Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(img.width() - 1 - x, y) = img(y, x);
  return out;
}

inline earsr::Image shift(const earsr::Image& img, int dy, int dx) {
  earsr::Image out(img.height(), img.width(), 0.0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int ty = y + dy, tx = x + dx;
      if (ty >= 0 && tx >= 0 && ty < img.height() && tx < img.width()) out(ty, tx) = img(y, x);
    }
  return out;
}

}  // namespace oracle
