#include "earsr/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "earsr/error.hpp"

namespace earsr::metrics {

HuVector hu_moments(const Image& img, const MomentOptions& opts) {
  auto value = [&](double v) { return opts.binarize ? (v >= opts.threshold ? 1.0 : 0.0) : v; };
  double m00 = 0.0, m10 = 0.0, m01 = 0.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double v = value(img(y, x));
      m00 += v;
      m10 += x * v;
      m01 += y * v;
    }
  }
  if (!(m00 > 0.0)) throw Error(ErrorCode::ZeroMass, "image has no intensity mass");
  const double cx = m10 / m00;
  const double cy = m01 / m00;

  double mu20 = 0, mu02 = 0, mu11 = 0, mu30 = 0, mu03 = 0, mu21 = 0, mu12 = 0;
  for (int y = 0; y < img.height(); ++y) {
    const double dy = y - cy;
    for (int x = 0; x < img.width(); ++x) {
      const double v = value(img(y, x));
      if (v == 0.0) continue;
      const double dx = x - cx;
      const double dx2 = dx * dx, dy2 = dy * dy;
      mu20 += dx2 * v;
      mu02 += dy2 * v;
      mu11 += dx * dy * v;
      mu30 += dx2 * dx * v;
      mu03 += dy2 * dy * v;
      mu21 += dx2 * dy * v;
      mu12 += dx * dy2 * v;
    }
  }
  const double s2 = m00 * m00;                // mu00^(1 + 2/2)
  const double s3 = std::pow(m00, 2.5);       // mu00^(1 + 3/2)
  const double n20 = mu20 / s2, n02 = mu02 / s2, n11 = mu11 / s2;
  const double n30 = mu30 / s3, n03 = mu03 / s3, n21 = mu21 / s3, n12 = mu12 / s3;

  const double a = n30 + n12;
  const double b = n21 + n03;
  const double c = n30 - 3.0 * n12;
  const double d = 3.0 * n21 - n03;
  HuVector h;
  h[0] = n20 + n02;
  h[1] = (n20 - n02) * (n20 - n02) + 4.0 * n11 * n11;
  h[2] = c * c + d * d;
  h[3] = a * a + b * b;
  h[4] = c * a * (a * a - 3.0 * b * b) + d * b * (3.0 * a * a - b * b);
  h[5] = (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b;
  h[6] = d * a * (a * a - 3.0 * b * b) - c * b * (3.0 * a * a - b * b);
  return h;
}

HumDistance hum_distance(const HuVector& a, const HuVector& b, HumForm form) {
  HumDistance r;
  for (int i = 0; i < 7; ++i) {
    const double aa = std::abs(a[i]);
    const double ab = std::abs(b[i]);
    if (aa < kHuSkipBelow || ab < kHuSkipBelow) {
      r.skipped[i] = true;
      continue;
    }
    const double ma = (a[i] < 0.0 ? -1.0 : 1.0) * std::log10(aa);
    const double mb = (b[i] < 0.0 ? -1.0 : 1.0) * std::log10(ab);
    if (form == HumForm::Log) {
      r.distance += std::abs(ma - mb);
    } else {
      // |h| == 1 has no finite reciprocal log
      if (ma == 0.0 || mb == 0.0) {
        r.skipped[i] = true;
        continue;
      }
      r.distance += std::abs(1.0 / ma - 1.0 / mb);
    }
  }
  return r;
}

HumDistance hum_distance(const Image& a, const Image& b, HumForm form, const MomentOptions& opts) {
  return hum_distance(hu_moments(a, opts), hu_moments(b, opts), form);
}

MHumReport m_hum(std::span<const HuVector> xs, std::span<const HuVector> ys, HumForm form) {
  if (xs.empty() || ys.empty()) throw Error(ErrorCode::EmptySet, "m-HuM needs non-empty sets");
  MHumReport r;
  r.global_min = std::numeric_limits<double>::infinity();
  r.matrix.assign(xs.size(), std::vector<double>(ys.size()));
  r.per_x_min.assign(xs.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < ys.size(); ++j) {
      const double d = hum_distance(xs[i], ys[j], form).distance;
      r.matrix[i][j] = d;
      r.per_x_min[i] = std::min(r.per_x_min[i], d);
      if (d < r.global_min) {
        r.global_min = d;
        r.best_x = i;
        r.best_y = j;
      }
    }
  }
  r.mean_of_minima =
      std::accumulate(r.per_x_min.begin(), r.per_x_min.end(), 0.0) / static_cast<double>(xs.size());
  return r;
}

MHumReport m_hum(std::span<const Image> xs, std::span<const Image> ys, HumForm form,
                 const MomentOptions& opts) {
  if (xs.empty() || ys.empty()) throw Error(ErrorCode::EmptySet, "m-HuM needs non-empty sets");
  std::vector<HuVector> hx, hy;
  for (const auto& x : xs) hx.push_back(hu_moments(x, opts));
  for (const auto& y : ys) hy.push_back(hu_moments(y, opts));
  return m_hum(hx, hy, form);
}

std::vector<double> midranks(std::span<const double> pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(pooled.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b,
                                int exact_limit) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::BadArgument, "rank-sum groups must be non-empty");
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const std::size_t total = n + m;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);

  RankSumResult r;
  r.rank_sum_a = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  const double nd = static_cast<double>(n), md = static_cast<double>(m), N = static_cast<double>(total);
  r.u_a = r.rank_sum_a - nd * (nd + 1.0) / 2.0;
  r.statistic = std::min(r.u_a, nd * md - r.u_a);

  if (std::all_of(pooled.begin(), pooled.end(), [&](double v) { return v == pooled.front(); })) {
    r.degenerate = true;
    r.p_two_sided = 1.0;
    r.exact = static_cast<int>(total) <= exact_limit;
    return r;
  }

  const double centre = nd * (N + 1.0) / 2.0;
  const double observed = std::abs(r.rank_sum_a - centre);
  if (static_cast<int>(total) <= exact_limit) {
    // Every way of drawing group a's ranks from the pooled midranks.
    std::uint64_t hits = 0, count = 0;
    for (std::uint32_t mask = 0; mask < (1u << total); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != n) continue;
      double w = 0.0;
      for (std::size_t k = 0; k < total; ++k) {
        if (mask & (1u << k)) w += ranks[k];
      }
      ++count;
      if (std::abs(w - centre) >= observed - 1e-9) ++hits;
    }
    r.exact = true;
    r.p_two_sided = static_cast<double>(hits) / static_cast<double>(count);
    return r;
  }

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_sum = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_sum += t * t * t - t;
    i = j;
  }
  const double var = nd * md / 12.0 * ((N + 1.0) - tie_sum / (N * (N - 1.0)));
  const double z = std::max(0.0, std::abs(r.u_a - nd * md / 2.0) - 0.5) / std::sqrt(var);
  r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

RankSumResult wilcoxon_rank_sum(const RatingSample& sample, int exact_limit) {
  if (sample.scores_a.empty() || sample.scores_b.empty()) {
    throw Error(ErrorCode::BadArgument, "rating groups must be non-empty");
  }
  std::vector<double> a, b;
  for (int s : sample.scores_a) {
    if (s < 1 || s > 6) throw Error(ErrorCode::OutOfRange, "rating outside 1..6");
    a.push_back(s);
  }
  for (int s : sample.scores_b) {
    if (s < 1 || s > 6) throw Error(ErrorCode::OutOfRange, "rating outside 1..6");
    b.push_back(s);
  }
  return wilcoxon_rank_sum(a, b, exact_limit);
}

}  // namespace earsr::metrics
