#include "earsr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "earsr/error.hpp"
#include "earsr/imaging.hpp"
#include "earsr/patchwork.hpp"
#include "earsr/volume_io.hpp"

namespace earsr::phantom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Annulus: return "annulus";
    case ShapeKind::SpiralChannel: return "spiral-channel";
  }
  return "disk";
}

ShapeKind kind_from(const std::string& s) {
  if (s == "disk") return ShapeKind::Disk;
  if (s == "annulus") return ShapeKind::Annulus;
  if (s == "spiral-channel") return ShapeKind::SpiralChannel;
  throw Error(ErrorCode::BadSpec, "unknown shape kind \"" + s + "\"");
}

std::size_t expected_radii(ShapeKind k) {
  return k == ShapeKind::Disk ? 1 : (k == ShapeKind::Annulus ? 2 : 3);
}

bool inside(const Shape& s, double py, double px) {
  const double dy = py - s.cy;
  const double dx = px - s.cx;
  const double rho = std::hypot(dy, dx);
  switch (s.kind) {
    case ShapeKind::Disk:
      return rho <= s.radii[0];
    case ShapeKind::Annulus:
      return rho >= s.radii[0] && rho <= s.radii[1];
    case ShapeKind::SpiralChannel: {
      const double r0 = s.radii[0], r1 = s.radii[1], half = s.radii[2] / 2.0;
      const double span = 2.0 * M_PI * s.turns;
      double phi = std::atan2(dy, dx);
      if (phi < 0.0) phi += 2.0 * M_PI;
      for (double theta = phi; theta <= span; theta += 2.0 * M_PI) {
        const double r = r0 + (r1 - r0) * theta / span;
        if (std::abs(rho - r) <= half) return true;
      }
      return false;
    }
  }
  return false;
}

double outer_radius(const Shape& s) {
  return s.kind == ShapeKind::SpiralChannel ? s.radii[1] + s.radii[2] / 2.0 : s.radii.back();
}

}  // namespace

void PhantomSpec::validate() const {
  if (canvas < 8) throw Error(ErrorCode::BadSpec, "canvas must be >= 8 px");
  if (!(pixel_size_mm > 0.0)) throw Error(ErrorCode::BadSpec, "pixel_size_mm must be positive");
  if (!(lr_factor >= 1.0)) throw Error(ErrorCode::BadSpec, "lr_factor must be >= 1");
  if (!(lr_noise_sigma >= 0.0) || !(lr_blur_sigma >= 0.0)) {
    throw Error(ErrorCode::BadSpec, "noise and blur sigmas must be non-negative");
  }
  for (const auto& s : shapes) {
    if (s.radii.size() != expected_radii(s.kind)) {
      throw Error(ErrorCode::BadSpec, std::string(kind_name(s.kind)) + " needs " +
                                          std::to_string(expected_radii(s.kind)) + " radii");
    }
    for (double r : s.radii) {
      if (!(r > 0.0)) throw Error(ErrorCode::BadSpec, "radii must be positive");
    }
    if (!(s.intensity >= 0.0 && s.intensity <= 1.0)) {
      throw Error(ErrorCode::BadSpec, "shape intensity must lie in [0, 1]");
    }
    const double r = outer_radius(s);
    if (s.cy - r < 0 || s.cx - r < 0 || s.cy + r > canvas || s.cx + r > canvas) {
      throw Error(ErrorCode::BadSpec, "shape extends beyond the canvas");
    }
  }
}

PhantomSpec spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  static const std::vector<std::string> known = {"canvas",         "pixel_size_mm", "shapes",
                                                 "lr_factor",      "lr_noise_sigma",
                                                 "lr_blur_sigma",  "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw Error(ErrorCode::BadSpec, "unknown phantom spec key \"" + it.key() + "\"");
    }
  }
  PhantomSpec s;
  s.canvas = j.value("canvas", s.canvas);
  s.pixel_size_mm = j.value("pixel_size_mm", s.pixel_size_mm);
  s.lr_factor = j.value("lr_factor", s.lr_factor);
  s.lr_noise_sigma = j.value("lr_noise_sigma", s.lr_noise_sigma);
  s.lr_blur_sigma = j.value("lr_blur_sigma", s.lr_blur_sigma);
  s.seed = j.value("seed", s.seed);
  for (const auto& js : j.value("shapes", json::array())) {
    Shape sh;
    sh.kind = kind_from(js.at("kind").get<std::string>());
    sh.cy = js.at("center")[0].get<double>();
    sh.cx = js.at("center")[1].get<double>();
    sh.radii = js.at("radii").get<std::vector<double>>();
    sh.intensity = js.value("intensity", 1.0);
    sh.turns = js.value("turns", 2.5);
    s.shapes.push_back(sh);
  }
  s.validate();
  return s;
}

std::string spec_to_json(const PhantomSpec& s) {
  json shapes = json::array();
  for (const auto& sh : s.shapes) {
    json js{{"kind", kind_name(sh.kind)},
            {"center", {sh.cy, sh.cx}},
            {"radii", sh.radii},
            {"intensity", sh.intensity}};
    if (sh.kind == ShapeKind::SpiralChannel) js["turns"] = sh.turns;
    shapes.push_back(js);
  }
  json j{{"canvas", s.canvas},
         {"pixel_size_mm", s.pixel_size_mm},
         {"lr_factor", s.lr_factor},
         {"lr_noise_sigma", s.lr_noise_sigma},
         {"lr_blur_sigma", s.lr_blur_sigma},
         {"seed", s.seed},
         {"shapes", shapes}};
  return j.dump(2);
}

std::vector<Shape> random_layout(int canvas, Rng& rng) {
  const double c = canvas;
  std::vector<Shape> shapes;
  Shape mass;
  mass.kind = ShapeKind::Disk;
  mass.radii = {c * rng.uniform(0.26, 0.34)};
  mass.cy = c / 2.0 + c * rng.uniform(-0.1, 0.1);
  mass.cx = c / 2.0 + c * rng.uniform(-0.1, 0.1);
  mass.intensity = rng.uniform(0.7, 0.9);
  shapes.push_back(mass);

  Shape spiral;
  spiral.kind = ShapeKind::SpiralChannel;
  spiral.cy = mass.cy + c * rng.uniform(-0.03, 0.03);
  spiral.cx = mass.cx + c * rng.uniform(-0.03, 0.03);
  spiral.radii = {c * rng.uniform(0.03, 0.05), c * rng.uniform(0.17, 0.21), c * rng.uniform(0.035, 0.05)};
  spiral.turns = rng.uniform(1.75, 2.5);
  spiral.intensity = rng.uniform(0.05, 0.2);
  shapes.push_back(spiral);

  const int extras = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < extras; ++i) {
    Shape s;
    const double r = c * rng.uniform(0.03, 0.07);
    s.cy = rng.uniform(r + 1.0, c - r - 1.0);
    s.cx = rng.uniform(r + 1.0, c - r - 1.0);
    if (rng.uniform() < 0.5) {
      s.kind = ShapeKind::Disk;
      s.radii = {r};
    } else {
      s.kind = ShapeKind::Annulus;
      s.radii = {r * rng.uniform(0.4, 0.7), r};
    }
    s.intensity = rng.uniform(0.5, 1.0);
    shapes.push_back(s);
  }
  return shapes;
}

Image render(const std::vector<Shape>& shapes, int canvas) {
  constexpr int kSub = 4;
  Image img(canvas, canvas, 0.0);
  for (const auto& s : shapes) {
    const double r = outer_radius(s) + 1.0;
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - r)));
    const int y1 = std::min(canvas - 1, static_cast<int>(std::ceil(s.cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - r)));
    const int x1 = std::min(canvas - 1, static_cast<int>(std::ceil(s.cx + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSub; ++sy) {
          for (int sx = 0; sx < kSub; ++sx) {
            // pixel (y, x) covers [y, y+1) x [x, x+1)
            if (inside(s, y + (sy + 0.5) / kSub, x + (sx + 0.5) / kSub)) ++hits;
          }
        }
        if (hits == 0) continue;
        const double cov = static_cast<double>(hits) / (kSub * kSub);
        img(y, x) = img(y, x) * (1.0 - cov) + s.intensity * cov;
      }
    }
  }
  return img;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int h = img.height(), w = img.width();
  Image tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  }
  return out;
}

Slice degrade(const Slice& hr, const PhantomSpec& spec, Rng& noise) {
  const int h = hr.data.height(), w = hr.data.width();
  const int lh = std::max(1, static_cast<int>(std::lround(h / spec.lr_factor)));
  const int lw = std::max(1, static_cast<int>(std::lround(w / spec.lr_factor)));
  Image low = gaussian_blur(hr.data, spec.lr_blur_sigma);
  if (lh != h || lw != w) low = imaging::bicubic_resize(low, lh, lw);
  if (spec.lr_noise_sigma > 0.0) {
    for (double& v : low.pixels()) v += spec.lr_noise_sigma * noise.normal();
  }
  for (double& v : low.pixels()) v = std::clamp(v, 0.0, 1.0);
  Slice lr{low, hr.pixel_size_mm, hr.source};
  if (lh != h || lw != w) {
    lr.data = imaging::bicubic_resize(low, h, w);
    for (double& v : lr.data.pixels()) v = std::clamp(v, 0.0, 1.0);
  }
  return lr;
}

PhantomPair generate_pair(const PhantomSpec& spec) {
  spec.validate();
  Rng layout({spec.seed, 0x50});
  const auto shapes = spec.shapes.empty() ? random_layout(spec.canvas, layout) : spec.shapes;
  PhantomPair p;
  p.hr.data = render(shapes, spec.canvas);
  p.hr.pixel_size_mm = PixelSize{spec.pixel_size_mm, spec.pixel_size_mm};
  Rng noise({spec.seed, 0x51});
  p.lr = degrade(p.hr, spec, noise);
  return p;
}

PhantomPair corpus_pair(const PhantomSpec& spec, Domain domain, int index) {
  PhantomSpec s = spec;
  s.shapes.clear();
  s.seed = Rng::mix({spec.seed, static_cast<std::uint64_t>(domain), static_cast<std::uint64_t>(index)});
  return generate_pair(s);
}

std::uint64_t content_hash(const Image& img) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) h = (h ^ ((v >> (8 * i)) & 0xFF)) * 0x100000001b3ull;
  };
  feed(static_cast<std::uint64_t>(img.height()), 4);
  feed(static_cast<std::uint64_t>(img.width()), 4);
  for (double v : img.pixels()) feed(io::quantize(v), 2);
  return h;
}

CorpusSummary generate_unpaired_corpus(const PhantomSpec& spec, int n_lr, int n_hr, int patch_size,
                                       int stride, const fs::path& out, int n_val) {
  spec.validate();
  if (n_lr < 1 || n_hr < 1) throw Error(ErrorCode::BadArgument, "corpus sizes must be >= 1");
  CorpusSummary sum;
  auto build = [&](Domain domain, int count, bool take_lr, const fs::path& dir,
                   std::vector<std::uint64_t>& hashes) {
    patchwork::PatchSet set;
    set.pixel_size_mm = PixelSize{spec.pixel_size_mm, spec.pixel_size_mm};
    for (int i = 0; i < count; ++i) {
      const PhantomPair pair = corpus_pair(spec, domain, i);
      const Image norm = imaging::zscore_then_unit_normalize((take_lr ? pair.lr : pair.hr).data);
      hashes.push_back(content_hash(norm));
      const auto grid = patchwork::make_grid(norm.height(), norm.width(), patch_size, stride);
      for (auto& p : patchwork::extract_patches(norm, grid)) set.patches.push_back(std::move(p));
      set.grids.push_back(grid);
    }
    patchwork::save_patch_set(set, dir);
    return set.patches.size();
  };
  sum.lr_slices = n_lr;
  sum.hr_slices = n_hr;
  sum.lr_patches = build(Domain::LowRes, n_lr, true, out / "lr", sum.lr_hashes);
  sum.hr_patches = build(Domain::HighRes, n_hr, false, out / "hr", sum.hr_hashes);

  if (n_val > 0) {
    Volume vlr, vhr;
    vlr.voxel_size_mm = vhr.voxel_size_mm = VoxelSize{spec.pixel_size_mm, spec.pixel_size_mm, spec.pixel_size_mm};
    for (int i = 0; i < n_val; ++i) {
      const PhantomPair pair = corpus_pair(spec, Domain::Validation, i);
      vlr.slices.push_back(imaging::zscore_then_unit_normalize(pair.lr.data));
      vhr.slices.push_back(imaging::zscore_then_unit_normalize(pair.hr.data));
    }
    vlr.meta["scanner"] = "phantom-lr";
    vhr.meta["scanner"] = "phantom-hr";
    io::save_volume(vlr, out / "val" / "lr");
    io::save_volume(vhr, out / "val" / "hr");
    sum.val_slices = n_val;
  }
  return sum;
}

}  // namespace earsr::phantom
