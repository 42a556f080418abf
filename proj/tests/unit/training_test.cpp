#include <doctest.h>

#include <cmath>

#include "earsr/error.hpp"
#include "earsr/nn/ops.hpp"
#include "earsr/phantom.hpp"
#include "earsr/training.hpp"
#include "helpers.hpp"

using namespace earsr;
using namespace earsr::training;
using namespace earsr::nn;

namespace {

networks::BundleConfig tiny_bundle() {
  networks::BundleConfig bc;
  bc.to_hr = bc.to_lr = {1, 4, 1, 0.5};
  bc.disc_lr = bc.disc_hr = {1, 4, 1};
  return bc;
}

std::vector<Image> random_set(int n, int side, std::uint64_t seed) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(testutil::random_image(side, side, seed + i));
  return out;
}

Var filled(int n, int side, double v) { return constant(Tensor(n, 1, side, side, v)); }

}  // namespace

TEST_CASE("cycle loss contract cases") {
  const Var x = constant(networks::to_tensor(random_set(2, 8, 1)));
  const Var y = constant(networks::to_tensor(random_set(2, 8, 9)));
  const Mapping id = [](const Var& v) { return v; };
  CHECK(scalar(cycle_loss(x, y, id, id)) == 0.0);

  const Var half = filled(3, 8, 0.5), six = filled(3, 8, 0.6);
  const Mapping to_six = [&](const Var&) { return six; };
  CHECK(scalar(cycle_loss(half, six, id, to_six)) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("cycle loss equals a pixel-by-pixel recomputation") {
  networks::ModelBundle b(tiny_bundle());
  b.init_weights(4);
  const auto xs = random_set(3, 8, 20), ys = random_set(3, 8, 30);
  const double got = cycle_loss(xs, ys, b);

  NoGradGuard ng;
  const Tensor rx = b.to_lr.forward(b.to_hr.forward(constant(networks::to_tensor(xs)), networks::Mode::Deterministic),
                                    networks::Mode::Deterministic)->value;
  const Tensor ry = b.to_hr.forward(b.to_lr.forward(constant(networks::to_tensor(ys)), networks::Mode::Deterministic),
                                    networks::Mode::Deterministic)->value;
  double sx = 0, sy = 0;
  for (int n = 0; n < 3; ++n)
    for (int yy = 0; yy < 8; ++yy)
      for (int xx = 0; xx < 8; ++xx) {
        sx += std::abs(xs[n](yy, xx) - rx.at(n, 0, yy, xx));
        sy += std::abs(ys[n](yy, xx) - ry.at(n, 0, yy, xx));
      }
  CHECK(got == doctest::Approx(sx / 192 + sy / 192).epsilon(1e-13));
}

TEST_CASE("adversarial terms") {
  const double floor = 1e-7;
  SUBCASE("undecided discriminators") {
    const Var h = filled(2, 4, 0.5);
    const double d = scalar(discriminator_loss(h, h, h, h, floor));
    // two real terms contribute log 0.5 + log 0.5 = log 0.25 to the objective
    CHECK(d == doctest::Approx(-2.0 * std::log(0.25)).epsilon(1e-14));
    CHECK(-(scalar(mean_log(h, floor)) + scalar(mean_log(h, floor))) == doctest::Approx(1.3862943611).epsilon(1e-9));
  }
  SUBCASE("perfect discriminators") {
    const Var real = filled(2, 4, 1.0), fake = filled(2, 4, 0.0);
    CHECK(scalar(discriminator_loss(real, real, fake, fake, floor)) == 0.0);
    const Var nearly = filled(2, 4, 1.0 - 1e-6), tiny = filled(2, 4, 1e-6);
    const double d = scalar(discriminator_loss(nearly, nearly, tiny, tiny, floor));
    CHECK(d > 0.0);
    CHECK(d < 1e-5);
    // non-saturating generator objective saturates at the clamp
    CHECK(scalar(generator_adversarial(fake, fake, true, floor)) == doctest::Approx(-2.0 * std::log(floor)).epsilon(1e-14));
    CHECK(scalar(generator_adversarial(fake, fake, false, floor)) == 0.0);
  }
  SUBCASE("element-wise recomputation of the clamped logs") {
    Rng rng(12);
    Tensor a(2, 1, 3, 3), b(2, 1, 3, 3), c(2, 1, 3, 3), d(2, 1, 3, 3);
    for (auto* t : {&a, &b, &c, &d})
      for (double& v : t->data) v = rng.uniform() < 0.1 ? (rng.uniform() < 0.5 ? 0.0 : 1.0) : rng.uniform();
    auto lg = [&](double p) { return std::log(std::max(p, floor)); };
    double ra = 0, rb = 0, rc = 0, rd = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ra += lg(a.data[i]);
      rb += lg(b.data[i]);
      rc += lg(1.0 - c.data[i]);
      rd += lg(1.0 - d.data[i]);
    }
    const double n = static_cast<double>(a.size());
    const double expect = -(ra / n + rb / n + rc / n + rd / n);
    CHECK(scalar(discriminator_loss(constant(a), constant(b), constant(c), constant(d), floor)) ==
          doctest::Approx(expect).epsilon(1e-13));
    CHECK(scalar(generator_adversarial(constant(c), constant(d), false, floor)) ==
          doctest::Approx(rc / n + rd / n).epsilon(1e-13));
  }
}

TEST_CASE("defaults") {
  const TrainConfig c;
  CHECK(c.lambda_rec == 10.0);
  CHECK(c.lambda_adv == 1.0);
  CHECK(c.batch_size == 5);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.epochs == 50);
  CHECK(c.beta1 == 0.5);
  CHECK(c.beta2 == 0.999);
}

TEST_CASE("training is deterministic and reports decompose") {
  const auto lr = random_set(7, 8, 100), hr = random_set(6, 8, 200);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.max_steps = 50;
  cfg.batch_size = 2;
  cfg.seed = 5;
  auto run = [&] {
    networks::ModelBundle b(tiny_bundle());
    b.init_weights(cfg.seed);
    return train(lr, hr, cfg, b).reports;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].l_rec == b[i].l_rec);
    CHECK(a[i].l_adv_g == b[i].l_adv_g);
    CHECK(a[i].l_adv_d == b[i].l_adv_d);
    CHECK(a[i].step == static_cast<std::int64_t>(i + 1));
    CHECK(a[i].l_rec >= 0.0);
    CHECK(a[i].l_total == doctest::Approx(cfg.lambda_rec * a[i].l_rec + cfg.lambda_adv * a[i].l_adv_g).epsilon(1e-12));
  }
}

TEST_CASE("half-steps only touch their own networks") {
  networks::ModelBundle b(tiny_bundle());
  b.init_weights(1);
  TrainConfig cfg;
  Trainer t(b, cfg);
  t.track_fingerprints(true);
  const auto xs = random_set(2, 8, 1), ys = random_set(2, 8, 2);
  for (int s = 0; s < 3; ++s) {
    t.step(xs, ys, s);
    const auto& f = t.last_fingerprints();
    CHECK(f.gen[0] != f.gen[1]);
    CHECK(f.disc[0] == f.disc[1]);
    CHECK(f.gen[1] == f.gen[2]);
    CHECK(f.disc[1] != f.disc[2]);
  }
}

TEST_CASE("non-finite losses abort before any update") {
  networks::ModelBundle b(tiny_bundle());
  b.init_weights(1);
  networks::ParamList all;
  all.extend("g", b.to_hr.params());
  all.extend("d", b.disc_hr.params());
  const auto before = all.fingerprint();
  auto xs = random_set(2, 8, 1);
  xs[0](3, 3) = std::nan("");
  Trainer t(b, TrainConfig{});
  try {
    t.step(xs, random_set(2, 8, 2), 0);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
  }
  CHECK(all.fingerprint() == before);
}

TEST_CASE("zero epochs and checkpoint cadence") {
  const auto lr = random_set(4, 8, 1), hr = random_set(4, 8, 2);
  networks::ModelBundle b(tiny_bundle());
  b.init_weights(2);
  networks::ParamList all;
  all.extend("g", b.to_hr.params());
  const auto before = all.fingerprint();
  std::vector<std::int64_t> seen;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](std::int64_t step, const networks::ModelBundle&, const networks::CheckpointExtras& ex) {
    seen.push_back(step);
    CHECK(ex.train_json.find("\"lambda_rec\":10.0") != std::string::npos);
  };
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r0 = train(lr, hr, cfg, b, cb);
  CHECK(r0.reports.empty());
  CHECK(all.fingerprint() == before);
  CHECK(seen == std::vector<std::int64_t>{0});

  seen.clear();
  cfg.epochs = 7;
  cfg.batch_size = 4;  // one step per epoch
  cfg.checkpoint_every = 3;
  CHECK(train(lr, hr, cfg, b, cb).reports.size() == 7);
  CHECK(seen == std::vector<std::int64_t>{3, 6, 7});
}

TEST_CASE("resume continues the step counter") {
  const auto lr = random_set(4, 8, 1), hr = random_set(4, 8, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  networks::ModelBundle b(tiny_bundle());
  b.init_weights(2);
  networks::CheckpointExtras saved;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](std::int64_t step, const networks::ModelBundle&, const networks::CheckpointExtras& ex) {
    if (step == 3) saved = ex;
  };
  cfg.checkpoint_every = 3;
  cfg.max_steps = 3;
  train(lr, hr, cfg, b, cb);
  CHECK(saved.step == 3);
  cfg.max_steps = 0;
  const auto rest = train(lr, hr, cfg, b, {}, saved.step, &saved);
  REQUIRE(rest.reports.size() == 3);
  CHECK(rest.reports.front().step == 4);
  CHECK(rest.steps == 6);
}

TEST_CASE("without the adversarial term paired data trains as an autoencoder") {
  phantom::PhantomSpec spec;
  spec.canvas = 16;
  spec.lr_factor = 2.0;
  spec.lr_noise_sigma = 0.02;
  spec.lr_blur_sigma = 0.8;
  std::vector<Image> lr, hr;
  for (int i = 0; i < 10; ++i) {
    const auto p = phantom::corpus_pair(spec, phantom::Domain::Validation, i);
    lr.push_back(p.lr.data);
    hr.push_back(p.hr.data);
  }
  networks::ModelBundle b(tiny_bundle());
  b.init_weights(3);
  TrainConfig cfg;
  cfg.lambda_adv = 0.0;
  cfg.batch_size = 5;
  cfg.epochs = 150;  // 2 steps per epoch
  cfg.learning_rate = 1e-3;
  const auto reports = train(lr, hr, cfg, b).reports;
  REQUIRE(reports.size() == 300);
  double window[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 300; ++i) window[i / 100] += reports[i].l_rec / 100.0;
  CHECK(window[1] < window[0]);
  CHECK(window[2] < window[1]);
}
