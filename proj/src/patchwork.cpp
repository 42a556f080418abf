#include "earsr/patchwork.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <json.hpp>

#include "earsr/error.hpp"
#include "earsr/volume_io.hpp"

namespace earsr::patchwork {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> axis_origins(int dim, int patch_size, int stride) {
  if (stride < 1) throw Error(ErrorCode::BadArgument, "stride must be >= 1");
  if (patch_size < 1) throw Error(ErrorCode::BadArgument, "patch size must be >= 1");
  if (patch_size > dim) {
    throw Error(ErrorCode::PatchTooLarge, "patch size " + std::to_string(patch_size) +
                                              " exceeds slice dimension " + std::to_string(dim));
  }
  std::vector<int> out;
  for (int o = 0; o + patch_size <= dim; o += stride) out.push_back(o);
  if (out.back() + patch_size < dim) out.push_back(dim - patch_size);
  return out;
}

PatchGrid make_grid(int height, int width, int patch_size, int stride) {
  PatchGrid g{patch_size, stride, height, width, {}};
  const auto ys = axis_origins(height, patch_size, stride);
  const auto xs = axis_origins(width, patch_size, stride);
  g.origins.reserve(ys.size() * xs.size());
  for (int y : ys) {
    for (int x : xs) g.origins.push_back({y, x});
  }
  return g;
}

std::vector<Patch> extract_patches(const Image& img, const PatchGrid& grid,
                                   const std::string& parent) {
  if (img.height() != grid.height || img.width() != grid.width) {
    throw Error(ErrorCode::GridMismatch, "grid was built for a different slice size");
  }
  std::vector<Patch> out;
  out.reserve(grid.origins.size());
  const int ps = grid.patch_size;
  for (const Origin& o : grid.origins) {
    Patch p{Image(ps, ps), o, parent};
    for (int y = 0; y < ps; ++y) {
      const double* row = img.row(o.y + y) + o.x;
      std::copy(row, row + ps, p.data.row(y));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Patch> extract_patches(const Image& img, int patch_size, int stride,
                                   const std::string& parent) {
  return extract_patches(img, make_grid(img.height(), img.width(), patch_size, stride), parent);
}

namespace {

// Empirical CDF level of every pixel: (midrank - 0.5) / n, so ties share a
// level and the levels of a set of distinct values are evenly spaced.
std::vector<double> cdf_levels(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> level(v.size());
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 0.5;
    for (std::size_t k = i; k <= j; ++k) level[order[k]] = mid / n;
    i = j + 1;
  }
  return level;
}

// Reference quantile function sampled at bins + 1 evenly spaced levels and
// linearly interpolated between them.
class QuantileTable {
 public:
  QuantileTable(std::span<const double> ref, int bins) : table_(bins + 1) {
    std::vector<double> sorted(ref.begin(), ref.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    for (int k = 0; k <= bins; ++k) {
      const double pos = std::clamp(static_cast<double>(k) / bins * n - 0.5, 0.0, n - 1.0);
      const auto lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      table_[k] = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }
  }

  double operator()(double q) const {
    const int bins = static_cast<int>(table_.size()) - 1;
    const double pos = std::clamp(q, 0.0, 1.0) * bins;
    const int k = std::min(static_cast<int>(pos), bins - 1);
    return table_[k] + (pos - k) * (table_[k + 1] - table_[k]);
  }

 private:
  std::vector<double> table_;
};

}  // namespace

Image histogram_match(const Image& src, const Image& ref, int bins) {
  if (bins < 2) throw Error(ErrorCode::BadArgument, "histogram matching needs >= 2 bins");
  if (src.empty() || ref.empty()) throw Error(ErrorCode::BadArgument, "empty image");
  Image out(src.height(), src.width());
  const double rmin = ref.min();
  const double rmax = ref.max();
  if (!(rmax > rmin)) {
    std::fill(out.pixels().begin(), out.pixels().end(), rmin);
    return out;
  }
  const QuantileTable quantile(ref.pixels(), bins);
  const auto level = cdf_levels(src.pixels());
  auto o = out.pixels();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = quantile(level[i]);
  return out;
}

double cdf_gap(const Image& a, const Image& b) {
  std::vector<double> sa(a.pixels().begin(), a.pixels().end());
  std::vector<double> sb(b.pixels().begin(), b.pixels().end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double gap = 0.0;
  while (i < sa.size() || j < sb.size()) {
    double t;
    if (j >= sb.size() || (i < sa.size() && sa[i] <= sb[j])) {
      t = sa[i];
    } else {
      t = sb[j];
    }
    while (i < sa.size() && sa[i] <= t) ++i;
    while (j < sb.size() && sb[j] <= t) ++j;
    gap = std::max(gap, std::abs(i / na - j / nb));
  }
  return gap;
}

Image median_filter(const Image& img, int kernel) {
  if (kernel < 3 || kernel % 2 == 0) {
    throw Error(ErrorCode::BadKernel, "median kernel must be odd and >= 3");
  }
  const int r = kernel / 2;
  const int h = img.height();
  const int w = img.width();
  Image out(h, w);
  std::vector<double> window(static_cast<std::size_t>(kernel) * kernel);
  const auto mid = window.begin() + window.size() / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -r; dx <= r; ++dx) window[n++] = img(yy, std::clamp(x + dx, 0, w - 1));
      }
      std::nth_element(window.begin(), mid, window.end());
      out(y, x) = *mid;
    }
  }
  return out;
}

Image reconstruct_slice(const std::vector<Patch>& patches, const std::vector<Patch>& lr_patches,
                        const PatchGrid& grid, const ReconstructOptions& opts) {
  if (patches.size() != grid.origins.size()) {
    throw Error(ErrorCode::GridMismatch, "patch count " + std::to_string(patches.size()) +
                                             " != grid size " +
                                             std::to_string(grid.origins.size()));
  }
  if (opts.post && lr_patches.size() != patches.size()) {
    throw Error(ErrorCode::GridMismatch, "LR patch count differs from generated patch count");
  }
  const int ps = grid.patch_size;
  Image mean(grid.height, grid.width, 0.0);
  std::vector<int> count(mean.size(), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Origin o = grid.origins[i];
    if (patches[i].data.height() != ps || patches[i].data.width() != ps) {
      throw Error(ErrorCode::GridMismatch, "patch " + std::to_string(i) + " has wrong size");
    }
    if (o.y < 0 || o.x < 0 || o.y + ps > grid.height || o.x + ps > grid.width) {
      throw Error(ErrorCode::GridMismatch, "grid origin out of bounds");
    }
    Image matched;
    const Image* tile = &patches[i].data;
    if (opts.post) {
      const Image& ref = lr_patches[i].data;
      if (ref.height() != ps || ref.width() != ps) {
        throw Error(ErrorCode::GridMismatch, "LR patch " + std::to_string(i) + " has wrong size");
      }
      matched = histogram_match(*tile, ref, opts.bins);
      tile = &matched;
    }
    for (int y = 0; y < ps; ++y) {
      for (int x = 0; x < ps; ++x) {
        const std::size_t at = static_cast<std::size_t>(o.y + y) * grid.width + (o.x + x);
        // Running mean: exact when all contributions agree.
        double& m = mean.pixels()[at];
        const int k = ++count[at];
        m += ((*tile)(y, x) - m) / k;
      }
    }
  }
  if (std::find(count.begin(), count.end(), 0) != count.end()) {
    throw Error(ErrorCode::GridMismatch, "grid does not cover the whole slice");
  }
  return opts.post ? median_filter(mean, opts.median_kernel) : mean;
}

void save_patch_set(const PatchSet& set, const fs::path& dir) {
  std::size_t expected = 0;
  for (const auto& g : set.grids) expected += g.origins.size();
  if (expected != set.patches.size()) {
    throw Error(ErrorCode::GridMismatch, "patch set grids and patches disagree");
  }
  if (set.patches.empty()) throw Error(ErrorCode::BadArgument, "empty patch set");
  Volume v;
  v.voxel_size_mm = VoxelSize{1.0, set.pixel_size_mm.y, set.pixel_size_mm.x};
  v.meta["kind"] = "patches";
  for (const auto& p : set.patches) v.slices.push_back(p.data);
  io::save_volume(v, dir);

  json j;
  j["v"] = 1;
  j["patch_size"] = set.grids.front().patch_size;
  j["stride"] = set.grids.front().stride;
  j["grids"] = json::array();
  for (const auto& g : set.grids) {
    json origins = json::array();
    for (const auto& o : g.origins) origins.push_back({o.y, o.x});
    j["grids"].push_back({{"slice_dims", {g.height, g.width}}, {"origins", origins}});
  }
  io::write_file_atomic(dir / "grid.json", j.dump(1) + "\n");
}

PatchSet load_patch_set(const fs::path& dir) {
  const Volume v = io::load_volume(dir);
  if (!fs::exists(dir / "grid.json")) {
    throw Error(ErrorCode::MissingManifest, "no grid.json in " + dir.string());
  }
  const json j = json::parse(io::read_file(dir / "grid.json"));
  PatchSet set;
  set.pixel_size_mm = PixelSize{v.voxel_size_mm.y, v.voxel_size_mm.x};
  const int ps = j.at("patch_size").get<int>();
  const int stride = j.at("stride").get<int>();
  std::size_t next = 0;
  for (const auto& g : j.at("grids")) {
    PatchGrid grid{ps, stride, g.at("slice_dims")[0].get<int>(), g.at("slice_dims")[1].get<int>(),
                   {}};
    for (const auto& o : g.at("origins")) {
      grid.origins.push_back({o[0].get<int>(), o[1].get<int>()});
      if (next >= v.slices.size()) throw Error(ErrorCode::GridMismatch, "grid.json lists extra patches");
      set.patches.push_back(Patch{v.slices[next++], grid.origins.back(), {}});
    }
    set.grids.push_back(std::move(grid));
  }
  if (next != v.slices.size()) throw Error(ErrorCode::GridMismatch, "grid.json lists too few patches");
  return set;
}

}  // namespace earsr::patchwork
