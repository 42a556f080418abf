#pragma once

#include <cstdint>
#include <string>

#include "earsr/bayes.hpp"
#include "earsr/imaging.hpp"
#include "earsr/metrics.hpp"
#include "earsr/networks.hpp"
#include "earsr/patchwork.hpp"
#include "earsr/training.hpp"

namespace earsr {

struct ImagingConfig {
  double target_pixel_mm = 0.018;
  bool crop = true;
  double roi_threshold = imaging::kDefaultRoiThreshold;
  int roi_margin = imaging::kDefaultRoiMargin;
  int max_dim = imaging::kDefaultMaxDim;
};

struct PatchConfig {
  int size = patchwork::kDefaultPatchSize;
  int stride = patchwork::kDefaultStride;
  int bins = patchwork::kDefaultBins;
  int median_kernel = patchwork::kDefaultMedianKernel;
  bool post = true;
};

struct NetworkConfig {
  int base_width = 64;
  int res_blocks = 0;  // 0: chosen from the patch size
  double dropout_rate = 0.5;
  int disc_width = 64;
  int disc_layers = 3;

  networks::BundleConfig bundle(int patch_size) const;
};

struct InferenceConfig {
  int mc_passes = bayes::kDefaultPasses;
  bool deterministic = false;  // single dropout-free pass instead of MC
  double mask_quantile = 0.9;
};

struct MetricConfig {
  bool binarize = false;
  double threshold = 0.5;
  bool log_form = false;  // sum |m_a - m_b| instead of sum |1/m_a - 1/m_b|
};

// Every module's settings in one document. Defaults are the published
// settings wherever one exists.
struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  ImagingConfig imaging;
  PatchConfig patch;
  NetworkConfig network;
  training::TrainConfig training;
  InferenceConfig inference;
  MetricConfig metric;

  void validate() const;
  std::string to_json() const;  // pretty, stable key order
};

// Merges a (possibly partial) JSON document onto `base`. Unknown keys or
// wrongly typed values throw BadConfig.
RunConfig merge_config(const RunConfig& base, const std::string& json_text);
inline RunConfig config_from_json(const std::string& json_text) { return merge_config(RunConfig{}, json_text); }

}  // namespace earsr
