#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "earsr/image.hpp"

namespace earsr::patchwork {

inline constexpr int kDefaultPatchSize = 256;
inline constexpr int kDefaultStride = 128;
inline constexpr int kDefaultBins = 256;
inline constexpr int kDefaultMedianKernel = 3;

struct Origin {
  int y = 0;
  int x = 0;
  friend bool operator==(const Origin&, const Origin&) = default;
};

struct Patch {
  Image data;
  Origin origin;
  std::string parent;
};

struct PatchGrid {
  int patch_size = kDefaultPatchSize;
  int stride = kDefaultStride;
  int height = 0;
  int width = 0;
  std::vector<Origin> origins;  // row-major

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

// Origins along one axis: k * stride while in bounds, plus a final origin
// clamped to dim - size when the regular ones leave a remainder.
std::vector<int> axis_origins(int dim, int patch_size, int stride);
PatchGrid make_grid(int height, int width, int patch_size, int stride);

std::vector<Patch> extract_patches(const Image& img, const PatchGrid& grid,
                                   const std::string& parent = {});
std::vector<Patch> extract_patches(const Image& img, int patch_size, int stride,
                                   const std::string& parent = {});

// Empirical quantile mapping of `src` onto the intensity distribution of
// `ref`: each pixel's rank level in `src` is looked up in the reference
// quantile function, tabulated at `bins` + 1 levels. Pixel rank order is
// preserved and matching an already matched image changes nothing.
Image histogram_match(const Image& src, const Image& ref, int bins = kDefaultBins);

// Sup-norm distance between the empirical CDFs of two pixel sets.
double cdf_gap(const Image& a, const Image& b);

// kernel x kernel median with edge replication.
Image median_filter(const Image& img, int kernel = kDefaultMedianKernel);

struct ReconstructOptions {
  bool post = true;
  int bins = kDefaultBins;
  int median_kernel = kDefaultMedianKernel;
};

// Stitches patches (aligned with grid.origins) into one slice; overlapping
// contributions are averaged. With post enabled each patch is first matched to
// the histogram of its LR counterpart and the mosaic is median filtered.
Image reconstruct_slice(const std::vector<Patch>& patches, const std::vector<Patch>& lr_patches,
                        const PatchGrid& grid, const ReconstructOptions& opts = {});

// Patch set on disk: the volume layout (one file per patch) plus grid.json.
struct PatchSet {
  std::vector<PatchGrid> grids;
  std::vector<Patch> patches;  // grids[0] patches first, then grids[1], ...
  PixelSize pixel_size_mm;
};

void save_patch_set(const PatchSet& set, const std::filesystem::path& dir);
PatchSet load_patch_set(const std::filesystem::path& dir);

}  // namespace earsr::patchwork
