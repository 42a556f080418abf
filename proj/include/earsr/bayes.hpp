#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "earsr/image.hpp"
#include "earsr/networks.hpp"

namespace earsr::bayes {

inline constexpr int kDefaultPasses = 100;

struct UncertaintyResult {
  Image mean;      // predictive posterior mean
  Image variance;  // per-pixel population variance over the passes
  int passes = 0;
  std::uint64_t seed = 0;
};

// Mean and population variance (1/T) of a stack of equally sized images,
// accumulated in pass order.
UncertaintyResult summarize_passes(std::span<const Image> passes);

// The stochastic output for pass `index`; its dropout stream is derived from
// (seed, index) so passes are independent and order-free.
Image stochastic_pass(const networks::Generator& generator, const Image& x, std::uint64_t seed,
                      int index);

// T stochastic forward passes with fresh dropout masks. `jobs` > 1 runs passes
// on worker threads; the result is identical for any job count.
UncertaintyResult mc_infer(const networks::Generator& generator, const Image& x, int passes,
                           std::uint64_t seed, int jobs = 1);

struct HeatMap {
  Image map;                   // variance / max(variance), zeros if max is 0
  std::optional<Image> mask;   // binarized map when a quantile is requested
};

// Rescales the variance grid to [0, 1]; optionally thresholds it at the given
// quantile of the map values into a rough structure mask.
HeatMap uncertainty_map(const UncertaintyResult& result, const Image& lr_patch,
                        std::optional<double> binarize_quantile = std::nullopt);

}  // namespace earsr::bayes
