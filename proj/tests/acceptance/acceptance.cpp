// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here and never adjusted to results.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "earsr/bayes.hpp"
#include "earsr/imaging.hpp"
#include "earsr/metrics.hpp"
#include "earsr/networks.hpp"
#include "earsr/patchwork.hpp"
#include "earsr/phantom.hpp"
#include "earsr/random.hpp"
#include "earsr/training.hpp"
#include "earsr/volume_io.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace earsr;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("earsr_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "earsr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "earsr %s failed: %s\n", args[1].c_str(), err.str().c_str());
  return code;
}

// Cochlea-like test object: bony mass, spiral channel and an off-centre disk.
std::vector<phantom::Shape> test_object(double s) {
  using phantom::ShapeKind;
  return {{ShapeKind::Disk, 120 * s, 130 * s, {80 * s}, 0.6},
          {ShapeKind::SpiralChannel, 118 * s, 128 * s, {8 * s, 60 * s, 7 * s}, 0.1, 2.25},
          {ShapeKind::Disk, 175 * s, 95 * s, {12 * s}, 1.0}};
}

// ---- criteria ---------------------------------------------------------------

Verdict hu_invariance() {
  const auto t0 = Clock::now();
  const Image base = phantom::render(test_object(1.0), 256);
  const Image canvas = [&] {
    Image c(320, 320, 0.0);
    for (int y = 0; y < 256; ++y)
      for (int x = 0; x < 256; ++x) c(y + 10, x + 10) = base(y, x);
    return c;
  }();
  double worst_shift = 0.0;
  for (auto [dy, dx] : std::vector<std::pair<int, int>>{{7, 0}, {0, 13}, {31, -5}, {-9, 40}}) {
    worst_shift = std::max(worst_shift, metrics::hum_distance(canvas, oracle::shift(canvas, dy, dx)).distance);
  }
  double worst_rot = 0.0;
  Image r = base;
  for (int k = 1; k <= 3; ++k) {
    r = oracle::rotate90(r);
    worst_rot = std::max(worst_rot, metrics::hum_distance(base, r).distance);
  }
  // The object at side n against a bicubic copy at half the side, so the two
  // differ by a factor of 2. Bicubic enlargement alone keeps the moments to
  // roundoff (~1e-12), which carries no resolution trend.
  std::vector<double> scale;
  for (int n : {128, 256, 512}) {
    const Image img = phantom::render(test_object(n / 256.0), n);
    scale.push_back(metrics::hum_distance(img, imaging::bicubic_resize(img, n / 2, n / 2)).distance);
  }
  const double secs = seconds_since(t0);
  const bool decreasing = scale[0] > scale[1] && scale[1] > scale[2];
  Verdict v;
  v.pass = worst_shift <= 1e-9 && worst_rot <= 1e-6 && scale[1] < 0.05 && scale[2] < 0.05 && decreasing &&
           secs < 30.0;
  v.detail = fmt("shift %.2e (<=1e-9), rot90 %.2e (<=1e-6), x2 at 128/256/512 px: ", worst_shift, worst_rot) +
             fmt("%.2e/%.2e/%.2e (<0.05 from 256, decreasing), %.1f s", scale[0], scale[1], scale[2], secs);
  return v;
}

// Inverse-log Hu distance written out independently of the library.
double oracle_hum(const metrics::HuVector& a, const metrics::HuVector& b) {
  double d = 0.0;
  for (int i = 0; i < 7; ++i) {
    if (std::abs(a[i]) < 1e-30 || std::abs(b[i]) < 1e-30) continue;
    const double ma = (a[i] < 0 ? -1.0 : 1.0) * std::log10(std::abs(a[i]));
    const double mb = (b[i] < 0 ? -1.0 : 1.0) * std::log10(std::abs(b[i]));
    if (ma == 0.0 || mb == 0.0) continue;
    d += std::abs(1.0 / ma - 1.0 / mb);
  }
  return d;
}

Verdict m_hum_oracle() {
  Rng rng(2024);
  auto random_set = [&](int n) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) {
      const int side = 12 + static_cast<int>(rng.below(9));
      Image img(side, side, 0.0);
      const int y0 = static_cast<int>(rng.below(4)), x0 = static_cast<int>(rng.below(4));
      for (int y = y0; y < side; ++y)
        for (int x = x0; x < side - static_cast<int>(rng.below(3)); ++x) img(y, x) = rng.uniform();
      out.push_back(img);
    }
    return out;
  };
  int mismatches = 0;
  for (int t = 0; t < 50; ++t) {
    const auto xs = random_set(1 + static_cast<int>(rng.below(4)));
    const auto ys = random_set(1 + static_cast<int>(rng.below(4)));
    const auto r = metrics::m_hum(xs, ys);
    double best = INFINITY;
    for (const auto& x : xs)
      for (const auto& y : ys) best = std::min(best, oracle_hum(metrics::hu_moments(x), metrics::hu_moments(y)));
    if (r.global_min != best) ++mismatches;
  }
  // Minimum property: m-HuM never exceeds any sampled cross pair.
  int violations = 0;
  const auto xs = random_set(6), ys = random_set(6);
  const double m = metrics::m_hum(xs, ys).global_min;
  for (int k = 0; k < 1000; ++k) {
    const auto& x = xs[rng.below(xs.size())];
    const auto& y = ys[rng.below(ys.size())];
    if (m > metrics::hum_distance(x, y).distance) ++violations;
  }
  return {mismatches == 0 && violations == 0,
          fmt("%.0f/50 exact mismatches, %.0f/1000 min-property violations", mismatches, violations)};
}

Verdict wilcoxon_exactness() {
  Rng rng(99);
  double worst = 0.0;
  int cases = 0;
  for (int n = 1; n <= 9; ++n)
    for (int m = 1; n + m <= 10; ++m)
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<double> a(n), b(m);
        // Coarse values so ties occur.
        for (double& v : a) v = static_cast<double>(rng.below(6));
        for (double& v : b) v = static_cast<double>(rng.below(6)) + (rep == 2 ? 1.5 : 0.0);
        const auto r = metrics::wilcoxon_rank_sum(a, b);
        worst = std::max(worst, std::abs(r.p_two_sided - oracle::permutation_p(a, b)));
        ++cases;
      }
  const double p = metrics::wilcoxon_rank_sum(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6}).p_two_sided;
  return {worst <= 1e-12 && std::abs(p - 0.1) <= 1e-12,
          fmt("%.0f group-size cases, max |p - enumeration| %.2e (<=1e-12), {1,2,3} vs {4,5,6} p = %.12f", cases, worst,
              p)};
}

Verdict mc_dropout_contract() {
  auto gen = [](double rate) {
    networks::Generator g({1, 8, 2, rate});
    Rng rng(5);
    g.init_weights(rng);
    return g;
  };
  Rng rng(6);
  Image x(32, 32);
  for (double& v : x.pixels()) v = rng.uniform();
  const auto quiet = bayes::mc_infer(gen(0.0), x, 10, 1);
  const bool zero = quiet.variance.max() == 0.0;

  const auto g = gen(0.5);
  std::vector<Image> passes;
  for (int i = 0; i < 20; ++i) passes.push_back(bayes::stochastic_pass(g, x, 3, i));
  const auto r = bayes::summarize_passes(passes);
  std::vector<Image> reversed(passes.rbegin(), passes.rend());
  std::swap(reversed[2], reversed[11]);
  const auto s = bayes::summarize_passes(reversed);
  double perm = 0.0, ident = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) {
    perm = std::max(perm, std::abs(r.variance.pixels()[p] - s.variance.pixels()[p]));
    double e1 = 0, e2 = 0;
    for (const auto& im : passes) {
      e1 += im.pixels()[p] / 20.0;
      e2 += im.pixels()[p] * im.pixels()[p] / 20.0;
    }
    ident = std::max(ident, std::abs(r.variance.pixels()[p] - (e2 - e1 * e1)));
  }
  const bool t100 = bayes::kDefaultPasses == 100 && RunConfig{}.inference.mc_passes == 100;
  return {zero && perm <= 1e-15 && ident <= 1e-10 && t100 && r.variance.max() > 0.0,
          fmt("dropout 0 max variance %.1e, reorder diff %.1e, |var - (E[x^2]-E[x]^2)| %.1e (<=1e-10), T default %.0f",
              quiet.variance.max(), perm, ident, bayes::kDefaultPasses)};
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const auto rep = gradcheck::run();
  const double secs = seconds_since(t0);
  return {rep.worst.rel_error < 1e-3 && rep.checked > 0 && secs < 120.0,
          fmt("%.0f parameters, worst relative error %.2e (<1e-3), %.1f s", static_cast<double>(rep.checked),
              rep.worst.rel_error, secs) +
              " at " + rep.worst.name};
}

// The desk-scale pipeline, driven through the command line.
struct ToyRun {
  bool ok = false;
  double secs = 0.0;
  std::vector<double> l_rec;
  std::string losses;  // raw ndjson for replay comparison
  std::string model;   // checkpoint bytes
  double hum_generated = 0.0;
  double hum_bicubic = 0.0;
};

const std::vector<std::string> kToyNet{"--base-width", "8", "--res-blocks", "3", "--disc-width", "8", "--disc-layers", "3",
                                       "--batch-size", "5", "--learning-rate", "1e-4", "--max-steps", "200"};

ToyRun toy_run(std::uint64_t seed, const fs::path& dir, bool evaluate) {
  ToyRun t;
  const auto s = std::to_string(seed);
  const std::string spec = (dir / "spec.json").string();
  std::ofstream(spec) << R"({"canvas": 128})";
  if (!fs::exists(dir / "corpus")) {
    if (cli_run({"phantom", "--spec", spec, "--out", (dir / "corpus").string(), "--n-lr", "4", "--n-hr", "4",
                 "--n-val", "1", "--patch-size", "64", "--stride", "32", "--seed", s}) != 0) {
      return t;
    }
  }
  const auto t0 = Clock::now();
  const fs::path run = dir / ("train-" + std::to_string(fs::exists(dir / "train-0") ? 1 : 0));
  std::vector<std::string> args{"train", "--out", run.string(), "--lr-patches", (dir / "corpus" / "lr").string(),
                                "--hr-patches", (dir / "corpus" / "hr").string(), "--seed", s, "--epochs", "1000"};
  args.insert(args.end(), kToyNet.begin(), kToyNet.end());
  if (cli_run(args) != 0) return t;
  t.secs = seconds_since(t0);
  std::ifstream in(run / "losses.ndjson");
  for (std::string line; std::getline(in, line);) {
    t.losses += line + "\n";
    t.l_rec.push_back(json::parse(line)["L_rec"].get<double>());
  }
  t.model = io::read_file(run / "model.ckpt");
  if (evaluate) {
    const auto val = (dir / "corpus" / "val");
    if (cli_run({"infer", "--model", (run / "model.ckpt").string(), "--in", (val / "lr").string(), "--out",
                 (dir / "infer").string(), "--patch-size", "64", "--stride", "32", "--seed", s}) != 0 ||
        cli_run({"reconstruct", "--from", (dir / "infer").string(), "--out", (dir / "recon").string()}) != 0 ||
        cli_run({"evaluate", "--generated", (dir / "recon" / "volume").string(), "--reference", (val / "hr").string(),
                 "--baseline", (val / "lr").string(), "--out", (dir / "eval").string()}) != 0) {
      return t;
    }
    const auto rep = json::parse(io::read_file(dir / "eval" / "report.json"));
    t.hum_generated = rep["generated"]["aligned"][0].get<double>();
    t.hum_bicubic = rep["baseline"]["aligned"][0].get<double>();
  }
  t.ok = true;
  return t;
}

Verdict toy_training(const ToyRun& first, const ToyRun& replay) {
  if (!first.ok || !replay.ok || first.l_rec.size() != 200) return {false, "toy run did not complete 200 steps"};
  const double ratio = first.l_rec.back() / first.l_rec.front();
  const bool identical = first.losses == replay.losses && first.model == replay.model;
  return {ratio < 0.5 && identical && first.secs < 900.0,
          fmt("L_rec %.4f -> %.4f (ratio %.3f < 0.5), %.1f s (<900)", first.l_rec.front(), first.l_rec.back(), ratio,
              first.secs) +
              (identical ? ", replay bit-identical" : ", replay DIFFERS")};
}

Verdict end_to_end(const std::vector<ToyRun>& runs) {
  bool pass = runs.size() == 3;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    pass = pass && r.ok && r.hum_generated < r.hum_bicubic;
    detail += fmt("seed %.0f: generated %.4f vs bicubic %.4f", static_cast<double>(i), r.hum_generated, r.hum_bicubic) +
              (r.ok ? "" : " (run failed)") + (i + 1 < runs.size() ? "; " : "");
  }
  return {pass, detail};
}

Verdict reconstruction() {
  Rng rng(11);
  // Round trip on non-multiple sizes too.
  bool exact = true;
  for (auto [h, w, p] : std::vector<std::tuple<int, int, int>>{{64, 64, 16}, {96, 80, 32}, {50, 70, 10}}) {
    Image img(h, w);
    for (double& v : img.pixels()) v = rng.uniform();
    const auto grid = patchwork::make_grid(h, w, p, p);
    const auto patches = patchwork::extract_patches(img, grid);
    patchwork::ReconstructOptions o;
    o.post = false;
    exact = exact && patchwork::reconstruct_slice(patches, {}, grid, o) == img;
  }
  // Ramp source matched onto a skewed reference.
  Image ramp(64, 64), ref(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      ramp(y, x) = (y * 64 + x) / 4095.0;
      const double u = rng.uniform();
      ref(y, x) = u * u;
    }
  const double gap = patchwork::cdf_gap(patchwork::histogram_match(ramp, ref), ref);
  // Median filter against a brute-force neighbourhood sort.
  int median_bad = 0;
  for (int t = 0; t < 5; ++t) {
    Image img(16, 16);
    for (double& v : img.pixels()) v = rng.uniform();
    const Image got = patchwork::median_filter(img, 3);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        std::vector<double> win;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            win.push_back(img(std::clamp(y + dy, 0, 15), std::clamp(x + dx, 0, 15)));
        std::sort(win.begin(), win.end());
        if (got(y, x) != win[4]) ++median_bad;
      }
  }
  return {exact && gap <= 2.0 / 256 && median_bad == 0,
          std::string(exact ? "round trip bit-exact" : "round trip NOT exact") +
              fmt(", ramp CDF gap %.5f (<=%.5f), %.0f median mismatches", gap, 2.0 / 256, median_bad)};
}

Verdict config_fidelity() {
  cli::Cli c;
  c.parse({"train", "--lr-patches", "a", "--hr-patches", "b"});
  const RunConfig cfg = c.effective_config();
  const bool values = cfg.training.lambda_rec == 10.0 && cfg.training.lambda_adv == 1.0 && cfg.patch.size == 256 &&
                      cfg.patch.stride == 128 && cfg.training.epochs == 50 && cfg.inference.mc_passes == 100 &&
                      cfg.training.batch_size == 5 && cfg.training.learning_rate == 1e-4;
  const std::string help = c.help("train") + c.help("infer") + c.help("preprocess");
  bool listed = true;
  for (const char* s : {"--lambda-rec FLOAT [10]", "--lambda-adv FLOAT [1]", "--patch-size INT [256]",
                        "--stride INT [128]", "--epochs INT [50]", "--mc-passes INT [100]", "--batch-size INT [5]",
                        "--learning-rate FLOAT [0.0001]"}) {
    listed = listed && help.find(s) != std::string::npos;
  }
  return {values && listed, fmt("lambda_rec %.0f, lambda_adv %.0f, patch %.0f, stride %.0f", cfg.training.lambda_rec,
                                cfg.training.lambda_adv, cfg.patch.size, cfg.patch.stride) +
                                fmt(", epochs %.0f, T %.0f", cfg.training.epochs, cfg.inference.mc_passes) +
                                (listed ? ", all listed in --help" : ", missing from --help")};
}

}  // namespace

int main(int argc, char** argv) {
  int failures = 0;
  // Optional arguments select criteria by name.
  auto wanted = [&](const char* name) {
    if (argc < 2) return true;
    for (int i = 1; i < argc; ++i)
      if (std::string(argv[i]) == name) return true;
    return false;
  };
  auto report = [&](const char* name, const Verdict& v) {
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failures;
  };
  if (wanted("hu-invariance")) report("hu-invariance", hu_invariance());
  if (wanted("m-hum-oracle")) report("m-hum-oracle", m_hum_oracle());
  if (wanted("wilcoxon-exactness")) report("wilcoxon-exactness", wilcoxon_exactness());
  if (wanted("mc-dropout-contract")) report("mc-dropout-contract", mc_dropout_contract());
  if (wanted("gradient-check")) report("gradient-check", gradient_check());
  if (wanted("reconstruction")) report("reconstruction", reconstruction());
  if (wanted("config-fidelity")) report("config-fidelity", config_fidelity());

  if (wanted("toy-training") || wanted("end-to-end-ordering")) {
    std::vector<ToyRun> runs;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      runs.push_back(toy_run(seed, scratch("seed" + std::to_string(seed)), true));
    }
    const ToyRun replay = toy_run(0, fs::temp_directory_path() / "earsr_accept_seed0", false);
    if (wanted("toy-training")) report("toy-training", toy_training(runs[0], replay));
    if (wanted("end-to-end-ordering")) report("end-to-end-ordering", end_to_end(runs));
  }
  return failures == 0 ? 0 : 1;
}
