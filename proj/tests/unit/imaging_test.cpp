#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "earsr/error.hpp"
#include "earsr/imaging.hpp"
#include "earsr/phantom.hpp"
#include "helpers.hpp"

using namespace earsr;
using namespace earsr::imaging;

TEST_CASE("normalize maps a two-value slice onto {0, 1}") {
  Image img(2, 2, 0.0);
  img(0, 1) = 10.0;
  img(1, 1) = 10.0;
  const Image out = zscore_then_unit_normalize(img);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 1.0);
  CHECK(out(1, 1) == 1.0);
}

TEST_CASE("normalize on {2, 4, 6}") {
  Image img(1, 3);
  img(0, 0) = 2;
  img(0, 1) = 4;
  img(0, 2) = 6;
  // (v - 4) / sqrt(8/3), then rescaled: the midpoint stays at the middle
  const Image out = zscore_then_unit_normalize(img);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out(0, 2) == 1.0);
}

TEST_CASE("normalize output range is exactly [0, 1] and idempotent") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Image img = testutil::random_image(7 + seed % 5, 9, seed, -30.0, 400.0);
    const Image out = zscore_then_unit_normalize(img);
    CHECK(out.min() == 0.0);
    CHECK(out.max() == 1.0);
    const Image twice = zscore_then_unit_normalize(out);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(twice.pixels()[i] == doctest::Approx(out.pixels()[i]).epsilon(1e-12));
  }
}

TEST_CASE("constant slice is flagged and zeroed") {
  Slice s{Image(4, 4, 0.3), {0.1, 0.1}, std::nullopt};
  const auto r = zscore_then_unit_normalize(s);
  CHECK(r.constant);
  CHECK(r.slice.data.max() == 0.0);
  CHECK(r.slice.data.min() == 0.0);
}

TEST_CASE("resampled dimension arithmetic") {
  CHECK(resampled_dim(668, 0.15, 0.018) == 5567);
  CHECK(resampled_dim(3, 2.0, 1.0) == 6);
  // independent integer oracle: dims with scales that are exact ratios p/q
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const long dim = 1 + static_cast<long>(rng.below(3000));
    const long p = 1 + static_cast<long>(rng.below(40));
    const long q = 1 + static_cast<long>(rng.below(40));
    // round-half-up of dim * p / q
    const long expect = (2 * dim * p + q) / (2 * q);
    CHECK(resampled_dim(static_cast<int>(dim), static_cast<double>(p), static_cast<double>(q)) == expect);
  }
}

TEST_CASE("cubic kernel interpolates") {
  CHECK(cubic_kernel(0.0) == 1.0);
  CHECK(cubic_kernel(1.0) == 0.0);
  CHECK(cubic_kernel(2.0) == 0.0);
  CHECK(cubic_kernel(-1.0) == 0.0);
  // partition of unity at any phase
  for (double t = 0.0; t < 1.0; t += 0.125) {
    CHECK(cubic_kernel(t + 1) + cubic_kernel(t) + cubic_kernel(t - 1) + cubic_kernel(t - 2) ==
          doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("bicubic keeps constants and is the identity at scale 1") {
  const Slice flat{Image(5, 7, 0.7), {0.15, 0.15}, std::nullopt};
  for (double target : {0.05, 0.1, 0.15, 0.3, 0.018}) {
    const Slice out = bicubic_resample(flat, {target, target});
    CHECK(out.pixel_size_mm.y == target);
    for (double v : out.data.pixels()) CHECK(std::abs(v - 0.7) < 1e-9);
  }
  const Image img = testutil::random_image(13, 11, 1);
  const Image same = bicubic_resize(img, 13, 11);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(same.pixels()[i] - img.pixels()[i]) < 1e-9);
}

TEST_CASE("bicubic shape contract and output cap") {
  const Slice s{testutil::random_image(3, 3, 2), {2.0, 2.0}, std::nullopt};
  const Slice out = bicubic_resample(s, {1.0, 1.0});
  CHECK(out.data.height() == 6);
  CHECK(out.data.width() == 6);

  const Slice big{Image(668, 4, 0.5), {0.15, 0.15}, std::nullopt};
  try {
    bicubic_resample(big, {0.018, 0.018}, 4096);
    FAIL("expected OutputTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutputTooLarge);
  }
  CHECK(bicubic_resample(big, {0.018, 0.018}).data.height() == 5567);
}

TEST_CASE("bicubic upsampling of a linear ramp stays linear in the interior") {
  Image ramp(4, 16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 16; ++x) ramp(y, x) = x;
  const Image up = bicubic_resize(ramp, 4, 32);
  // Catmull-Rom reproduces linear functions away from the replicated border
  for (int x = 4; x < 28; ++x) CHECK(up(1, x) == doctest::Approx((x + 0.5) / 2.0 - 0.5).epsilon(1e-12));
}

TEST_CASE("crop_roi contract cases") {
  SUBCASE("all foreground") {
    const Slice s{Image(10, 12, 1.0), {1, 1}, std::nullopt};
    const auto [crop, box] = crop_roi(s, 0.5);
    CHECK(box == RoiBox{0, 0, 10, 12});
    CHECK(crop.data == s.data);
  }
  SUBCASE("single pixel") {
    Slice s{Image(32, 32, 0.0), {1, 1}, std::nullopt};
    s.data(10, 20) = 1.0;
    CHECK(crop_roi(s, 0.5, 0).second == RoiBox{10, 20, 11, 21});
  }
  SUBCASE("empty") {
    const Slice s{Image(8, 8, 0.1), {1, 1}, std::nullopt};
    CHECK_THROWS_AS(crop_roi(s, 0.5), Error);
  }
}

TEST_CASE("crop_roi on an analytic disk") {
  phantom::Shape disk;
  disk.kind = phantom::ShapeKind::Disk;
  disk.cy = 64;
  disk.cx = 64;
  disk.radii = {30.0};
  const Slice s{phantom::render({disk}, 128), {1, 1}, std::nullopt};
  const RoiBox box = crop_roi(s, 0.5, 0).second;
  // brute-force scan oracle
  int y0 = 128, x0 = 128, y1 = 0, x1 = 0;
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x)
      if (s.data(y, x) >= 0.5) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y + 1);
        x1 = std::max(x1, x + 1);
      }
  CHECK(box == RoiBox{y0, x0, y1, x1});
  CHECK(std::abs(box.y0 - 34) <= 1);
  CHECK(std::abs(box.y1 - 94) <= 1);
  CHECK(std::abs(box.x0 - 34) <= 1);
  CHECK(std::abs(box.x1 - 94) <= 1);
}

TEST_CASE("crop then re-embed reproduces the foreground") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Slice s{testutil::random_image(40, 30, seed), {1, 1}, std::nullopt};
    const auto [crop, box] = crop_roi(s, 0.9, 3);
    Image back(40, 30, 0.0);
    for (int y = 0; y < crop.data.height(); ++y)
      for (int x = 0; x < crop.data.width(); ++x) back(box.y0 + y, box.x0 + x) = crop.data(y, x);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 30; ++x)
        if (s.data(y, x) >= 0.9) CHECK(back(y, x) == s.data(y, x));
  }
}
