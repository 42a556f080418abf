#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "earsr/image.hpp"
#include "earsr/random.hpp"

namespace earsr::phantom {

enum class ShapeKind { Disk, Annulus, SpiralChannel };

// radii: disk {r}; annulus {r_inner, r_outer}; spiral-channel
// {r_start, r_end, channel_width}. Coordinates are HR pixels.
struct Shape {
  ShapeKind kind = ShapeKind::Disk;
  double cy = 0.0;
  double cx = 0.0;
  std::vector<double> radii;
  double intensity = 1.0;
  double turns = 2.5;  // spiral only
};

struct PhantomSpec {
  int canvas = 512;
  double pixel_size_mm = 0.018;
  std::vector<Shape> shapes;  // empty: a random layout drawn from seed
  double lr_factor = 8.33;
  double lr_noise_sigma = 0.03;
  double lr_blur_sigma = 2.0;  // HR pixels
  std::uint64_t seed = 0;

  void validate() const;
};

PhantomSpec spec_from_json(const std::string& text);
std::string spec_to_json(const PhantomSpec& spec);

// Cochlea-like layout: a bony mass carrying a spiral channel plus a few small
// disks or rings.
std::vector<Shape> random_layout(int canvas, Rng& rng);

// Anti-aliased rendering (4x4 supersampling), shapes painted in order over a
// zero background.
Image render(const std::vector<Shape>& shapes, int canvas);

Image gaussian_blur(const Image& img, double sigma);

struct PhantomPair {
  Slice hr;
  Slice lr;  // degraded and brought back onto the HR grid
};

// LR = upsample(clamp(downsample(blur(hr)) + noise)); spatially aligned with
// HR by construction.
PhantomPair generate_pair(const PhantomSpec& spec);
Slice degrade(const Slice& hr, const PhantomSpec& spec, Rng& noise);

struct CorpusSummary {
  int lr_slices = 0;
  int hr_slices = 0;
  int val_slices = 0;
  std::size_t lr_patches = 0;
  std::size_t hr_patches = 0;
  std::vector<std::uint64_t> lr_hashes;
  std::vector<std::uint64_t> hr_hashes;
};

// Writes <out>/lr and <out>/hr patch sets built from normalized slices with
// disjoint layout seeds, and n_val aligned pairs under <out>/val/{lr,hr}.
CorpusSummary generate_unpaired_corpus(const PhantomSpec& spec, int n_lr, int n_hr,
                                       int patch_size, int stride,
                                       const std::filesystem::path& out, int n_val = 0);

// Slices used by the corpus, exposed for in-memory pipelines.
enum class Domain : std::uint64_t { LowRes = 1, HighRes = 2, Validation = 3 };
PhantomPair corpus_pair(const PhantomSpec& spec, Domain domain, int index);

std::uint64_t content_hash(const Image& img);

}  // namespace earsr::phantom
