#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "earsr/bayes.hpp"
#include "earsr/error.hpp"
#include "helpers.hpp"

using namespace earsr;
using namespace earsr::bayes;

namespace {

networks::Generator tiny(double rate, std::uint64_t seed = 3) {
  networks::Generator g({1, 4, 1, rate});
  Rng rng(seed);
  g.init_weights(rng);
  return g;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
  return m;
}

}  // namespace

TEST_CASE("no dropout means no uncertainty") {
  const auto g = tiny(0.0);
  const Image x = testutil::random_image(8, 8, 1);
  const auto r = mc_infer(g, x, 10, 7);
  CHECK(r.variance.max() == 0.0);
  nn::NoGradGuard ng;
  const auto det = g.forward(nn::constant(networks::to_tensor(std::span<const Image>(&x, 1))),
                             networks::Mode::Deterministic);
  CHECK(max_abs_diff(r.mean, networks::image_at(det->value, 0)) < 1e-12);
}

TEST_CASE("single pass") {
  const auto g = tiny(0.5);
  const Image x = testutil::random_image(8, 8, 2);
  const auto r = mc_infer(g, x, 1, 11);
  CHECK(r.variance.max() == 0.0);
  CHECK(r.mean == stochastic_pass(g, x, 11, 0));
  CHECK(r.passes == 1);
}

TEST_CASE("two-pass summary") {
  const std::vector<Image> passes{Image(2, 3, 0.2), Image(2, 3, 0.4)};
  const auto r = summarize_passes(passes);
  for (double v : r.mean.pixels()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  for (double v : r.variance.pixels()) CHECK(v == doctest::Approx(0.01).epsilon(1e-13));
}

TEST_CASE("population variance matches second-moment identity and ignores order") {
  std::vector<Image> passes;
  for (int i = 0; i < 17; ++i) passes.push_back(testutil::random_image(5, 6, 40 + i));
  const auto r = summarize_passes(passes);
  for (std::size_t p = 0; p < r.mean.size(); ++p) {
    double s = 0, s2 = 0;
    for (const auto& im : passes) {
      s += im.pixels()[p];
      s2 += im.pixels()[p] * im.pixels()[p];
    }
    const double m = s / 17, var = s2 / 17 - m * m;
    CHECK(std::abs(r.variance.pixels()[p] - var) < 1e-10);
    CHECK(r.variance.pixels()[p] >= 0.0);
  }
  std::vector<Image> shuffled = passes;
  Rng rng(4);
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
  const auto s = summarize_passes(shuffled);
  CHECK(max_abs_diff(s.mean, r.mean) < 1e-15);
  CHECK(max_abs_diff(s.variance, r.variance) < 1e-15);
}

TEST_CASE("passes are seeded per index so job count does not matter") {
  const auto g = tiny(0.5);
  const Image x = testutil::random_image(8, 8, 5);
  const auto a = mc_infer(g, x, 12, 21, 1);
  const auto b = mc_infer(g, x, 12, 21, 3);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
  CHECK(a.variance.max() > 0.0);
  const auto c = mc_infer(g, x, 12, 22, 1);
  CHECK(c.mean != a.mean);
}

TEST_CASE("predictive mean settles as passes grow") {
  const auto g = tiny(0.5);
  const Image x = testutil::random_image(8, 8, 6);
  const auto m10 = mc_infer(g, x, 10, 1).mean;
  const auto m100 = mc_infer(g, x, 100, 1).mean;
  const auto m1000 = mc_infer(g, x, 1000, 1).mean;
  CHECK(max_abs_diff(m100, m1000) < max_abs_diff(m10, m100));
}

TEST_CASE("pass count must be positive") {
  const auto g = tiny(0.5);
  const Image x = testutil::random_image(8, 8, 6);
  for (int t : {0, -3}) {
    try {
      mc_infer(g, x, t, 1);
      FAIL("expected BadT");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadT);
    }
  }
}

TEST_CASE("uncertainty map scaling and mask") {
  UncertaintyResult r;
  r.variance = Image(1, 3);
  r.variance(0, 1) = 0.02;
  r.variance(0, 2) = 0.04;
  const Image lr(1, 3, 0.5);
  const auto h = uncertainty_map(r, lr, 0.5);
  CHECK(h.map(0, 0) == 0.0);
  CHECK(h.map(0, 1) == doctest::Approx(0.5));
  CHECK(h.map(0, 2) == 1.0);
  REQUIRE(h.mask);
  CHECK((*h.mask)(0, 0) == 0.0);
  CHECK((*h.mask)(0, 1) == 0.0);
  CHECK((*h.mask)(0, 2) == 1.0);

  r.variance = Image(1, 3);
  const auto z = uncertainty_map(r, lr);
  CHECK(z.map.max() == 0.0);
  CHECK(!z.mask);
  CHECK_THROWS_AS(uncertainty_map(r, Image(2, 3)), Error);
}
