#include "earsr/bayes.hpp"

#include <algorithm>
#include <thread>

#include "earsr/error.hpp"
#include "earsr/nn/ops.hpp"

namespace earsr::bayes {

UncertaintyResult summarize_passes(std::span<const Image> passes) {
  if (passes.empty()) throw Error(ErrorCode::BadT, "need at least one pass");
  const int h = passes.front().height();
  const int w = passes.front().width();
  const double t = static_cast<double>(passes.size());
  UncertaintyResult r;
  r.passes = static_cast<int>(passes.size());
  r.mean = Image(h, w, 0.0);
  r.variance = Image(h, w, 0.0);
  // Deviations are taken from the first pass so identical passes give an
  // exactly zero variance and an exact mean.
  const auto first = passes.front().pixels();
  auto mean = r.mean.pixels();
  for (const Image& p : passes) {
    if (p.height() != h || p.width() != w) throw Error(ErrorCode::ShapeError, "pass sizes differ");
    const auto px = p.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) mean[i] += px[i] - first[i];
  }
  for (double& m : mean) m /= t;
  auto var = r.variance.pixels();
  for (const Image& p : passes) {
    const auto px = p.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
      const double d = px[i] - first[i] - mean[i];
      var[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += first[i];
  for (double& v : var) v /= t;
  return r;
}

Image stochastic_pass(const networks::Generator& generator, const Image& x, std::uint64_t seed,
                      int index) {
  nn::NoGradGuard guard;
  Rng rng({seed, 0x40, static_cast<std::uint64_t>(index)});
  const nn::Var in = nn::constant(networks::to_tensor(std::span<const Image>(&x, 1)));
  const nn::Var out = generator.forward(in, networks::Mode::Stochastic, &rng);
  return networks::image_at(out->value, 0);
}

UncertaintyResult mc_infer(const networks::Generator& generator, const Image& x, int passes,
                           std::uint64_t seed, int jobs) {
  if (passes < 1) throw Error(ErrorCode::BadT, "number of passes T must be >= 1");
  std::vector<Image> outputs(passes);
  jobs = std::clamp(jobs, 1, passes);
  if (jobs == 1) {
    for (int i = 0; i < passes; ++i) outputs[i] = stochastic_pass(generator, x, seed, i);
  } else {
    std::vector<std::jthread> workers;
    for (int j = 0; j < jobs; ++j) {
      workers.emplace_back([&, j] {
        for (int i = j; i < passes; i += jobs) outputs[i] = stochastic_pass(generator, x, seed, i);
      });
    }
  }
  UncertaintyResult r = summarize_passes(outputs);
  r.seed = seed;
  return r;
}

HeatMap uncertainty_map(const UncertaintyResult& result, const Image& lr_patch,
                        std::optional<double> binarize_quantile) {
  if (result.variance.height() != lr_patch.height() || result.variance.width() != lr_patch.width()) {
    throw Error(ErrorCode::ShapeError, "uncertainty grid and LR patch differ in size");
  }
  HeatMap out;
  out.map = Image(result.variance.height(), result.variance.width(), 0.0);
  const double mx = result.variance.max();
  if (mx > 0.0) {
    auto src = result.variance.pixels();
    auto dst = out.map.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / mx;
  }
  if (binarize_quantile) {
    const double q = std::clamp(*binarize_quantile, 0.0, 1.0);
    std::vector<double> sorted(out.map.pixels().begin(), out.map.pixels().end());
    std::sort(sorted.begin(), sorted.end());
    const auto k = static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1));
    const double threshold = sorted[k];
    Image mask(out.map.height(), out.map.width(), 0.0);
    auto m = mask.pixels();
    auto v = out.map.pixels();
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = (mx > 0.0 && v[i] > threshold) ? 1.0 : 0.0;
    out.mask = std::move(mask);
  }
  return out;
}

}  // namespace earsr::bayes
