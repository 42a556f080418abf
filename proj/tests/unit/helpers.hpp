#pragma once

#include <filesystem>
#include <string>

#include "earsr/image.hpp"
#include "earsr/random.hpp"

namespace testutil {

inline earsr::Image random_image(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  earsr::Rng rng(seed);
  earsr::Image img(h, w);
  for (double& v : img.pixels()) v = rng.uniform(lo, hi);
  return img;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("earsr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
