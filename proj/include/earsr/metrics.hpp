#pragma once

#include <array>
#include <span>
#include <vector>

#include "earsr/image.hpp"

namespace earsr::metrics {

using HuVector = std::array<double, 7>;

struct MomentOptions {
  bool binarize = false;  // threshold intensities first
  double threshold = 0.5;
};

// Seven Hu invariants of the scale-normalized central moments of an intensity
// image (x = column, y = row). Throws ZeroMass for an all-zero image.
HuVector hu_moments(const Image& img, const MomentOptions& opts = {});

enum class HumForm {
  InverseLog,  // sum |1/m_a - 1/m_b|, m = sign(h) log10|h|
  Log,         // sum |m_a - m_b|
};

inline constexpr double kHuSkipBelow = 1e-30;

struct HumDistance {
  double distance = 0.0;
  std::array<bool, 7> skipped{};  // invariant too small in either input
};

HumDistance hum_distance(const HuVector& a, const HuVector& b, HumForm form = HumForm::InverseLog);
HumDistance hum_distance(const Image& a, const Image& b, HumForm form = HumForm::InverseLog,
                         const MomentOptions& opts = {});

struct MHumReport {
  double global_min = 0.0;        // min over all pairs
  std::size_t best_x = 0, best_y = 0;
  std::vector<double> per_x_min;  // min over Y for each x
  double mean_of_minima = 0.0;    // average of per_x_min
  std::vector<std::vector<double>> matrix;  // [x][y]
};

MHumReport m_hum(std::span<const HuVector> xs, std::span<const HuVector> ys,
                 HumForm form = HumForm::InverseLog);
MHumReport m_hum(std::span<const Image> xs, std::span<const Image> ys,
                 HumForm form = HumForm::InverseLog, const MomentOptions& opts = {});

// Two-sample rank-sum test.
struct RankSumResult {
  double statistic = 0.0;   // min(U_a, U_b); symmetric in the groups
  double rank_sum_a = 0.0;  // sum of midranks of group a
  double u_a = 0.0;
  double p_two_sided = 1.0;
  bool exact = false;
  bool degenerate = false;  // every value identical
};

inline constexpr int kExactLimit = 12;

std::vector<double> midranks(std::span<const double> pooled);

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b,
                                int exact_limit = kExactLimit);

struct RatingSample {
  std::vector<int> scores_a;
  std::vector<int> scores_b;
};

// Validates the 1..6 scale before testing.
RankSumResult wilcoxon_rank_sum(const RatingSample& sample, int exact_limit = kExactLimit);

}  // namespace earsr::metrics
