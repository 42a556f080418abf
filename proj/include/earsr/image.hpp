#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace earsr {

// Dense row-major 2D grid of doubles.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  double* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_; }
  const double* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_; }

  std::span<double> pixels() noexcept { return data_; }
  std::span<const double> pixels() const noexcept { return data_; }

  double min() const;
  double max() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

struct PixelSize {
  double y = 1.0;
  double x = 1.0;
  friend bool operator==(const PixelSize&, const PixelSize&) = default;
};

struct SliceSource {
  std::string volume_id;
  int z = 0;
};

struct Slice {
  Image data;
  PixelSize pixel_size_mm;
  std::optional<SliceSource> source;
};

struct VoxelSize {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;
};

// Scalar volume stored as z-ordered slices of identical dimensions.
struct Volume {
  std::vector<Image> slices;
  VoxelSize voxel_size_mm;
  std::map<std::string, std::string> meta;

  int depth() const noexcept { return static_cast<int>(slices.size()); }
  int height() const noexcept { return slices.empty() ? 0 : slices.front().height(); }
  int width() const noexcept { return slices.empty() ? 0 : slices.front().width(); }

  Slice slice(int z) const;
  // Throws BadArgument when an invariant is violated.
  void validate() const;
};

}  // namespace earsr
