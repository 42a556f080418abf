#include "earsr/image.hpp"

#include <algorithm>
#include <cmath>

#include "earsr/error.hpp"

namespace earsr {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadArgument: return "BadArgument";
    case ErrorCode::OutputTooLarge: return "OutputTooLarge";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::MissingManifest: return "MissingManifest";
    case ErrorCode::PatchTooLarge: return "PatchTooLarge";
    case ErrorCode::BadKernel: return "BadKernel";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BadT: return "BadT";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::SetMismatch: return "SetMismatch";
    case ErrorCode::UnknownRater: return "UnknownRater";
    case ErrorCode::UnknownTrial: return "UnknownTrial";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NoData: return "NoData";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) {
    throw Error(ErrorCode::BadArgument, "image dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

double Image::min() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Image::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

Slice Volume::slice(int z) const {
  if (z < 0 || z >= depth()) throw Error(ErrorCode::BadArgument, "slice index out of range");
  return Slice{slices[z], PixelSize{voxel_size_mm.y, voxel_size_mm.x},
               SliceSource{meta.count("subject") ? meta.at("subject") : std::string{}, z}};
}

void Volume::validate() const {
  if (slices.empty() || height() < 1 || width() < 1) {
    throw Error(ErrorCode::BadArgument, "volume must have at least one voxel per axis");
  }
  if (!(voxel_size_mm.z > 0 && voxel_size_mm.y > 0 && voxel_size_mm.x > 0)) {
    throw Error(ErrorCode::BadArgument, "voxel sizes must be positive");
  }
  for (const auto& s : slices) {
    if (s.height() != height() || s.width() != width()) {
      throw Error(ErrorCode::BadArgument, "volume slices differ in size");
    }
    for (double v : s.pixels()) {
      if (!std::isfinite(v)) throw Error(ErrorCode::BadArgument, "volume holds non-finite intensity");
    }
  }
}

}  // namespace earsr
