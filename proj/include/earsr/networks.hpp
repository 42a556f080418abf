#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "earsr/image.hpp"
#include "earsr/nn/autograd.hpp"
#include "earsr/random.hpp"

namespace earsr::networks {

using nn::Tensor;
using nn::Var;

struct GeneratorConfig {
  int in_channels = 1;
  int base_width = 64;
  int n_res_blocks = 9;
  double dropout_rate = 0.5;

  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

// 9 residual blocks for 256-px training patches, 6 for smaller inputs.
int default_res_blocks(int patch_size);

struct DiscriminatorConfig {
  int in_channels = 1;
  int base_width = 64;
  int n_layers = 3;

  void validate() const;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

struct NamedParam {
  std::string name;
  Var var;
};

// Ordered parameter list; the order is the checkpoint order.
class ParamList {
 public:
  Var add(std::string name, Tensor t);
  // Shares the parameters of `other` under "prefix." names.
  void extend(const std::string& prefix, const ParamList& other);
  const std::vector<NamedParam>& items() const { return items_; }
  std::size_t count() const;  // number of scalars
  void zero_grad();
  void set_trainable(bool on);
  // FNV-1a over the raw parameter bytes; used to check which half-step
  // touched which network.
  std::uint64_t fingerprint() const;

 private:
  std::vector<NamedParam> items_;
};

enum class Mode { Deterministic, Stochastic };

class Generator {
 public:
  Generator() = default;
  explicit Generator(const GeneratorConfig& cfg);

  const GeneratorConfig& config() const { return cfg_; }
  ParamList& params() { return params_; }
  const ParamList& params() const { return params_; }

  void init_weights(Rng& rng);

  // Input [n, 1, h, w] with h and w divisible by 4; output has the same shape
  // with values in [0, 1]. Stochastic mode resamples dropout masks from rng.
  Var forward(const Var& x, Mode mode, Rng* rng = nullptr) const;

 private:
  struct Conv {
    Var weight;
    Var bias;
  };
  Conv conv(const std::string& name, int cout, int cin, int k);
  Conv conv_t(const std::string& name, int cin, int cout, int k);

  GeneratorConfig cfg_;
  ParamList params_;
  Conv ingress_, down1_, down2_, up1_, up2_, egress_;
  std::vector<std::pair<Conv, Conv>> blocks_;
};

class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(const DiscriminatorConfig& cfg);

  const DiscriminatorConfig& config() const { return cfg_; }
  ParamList& params() { return params_; }
  const ParamList& params() const { return params_; }

  void init_weights(Rng& rng);

  // Per-patch real/fake probability map in (0, 1).
  Var forward(const Var& x) const;

  // Output spatial size for an input side length.
  int output_side(int input_side) const;

 private:
  struct Layer {
    Var weight;
    Var bias;
    int stride;
    bool norm;
    bool activation;
  };
  DiscriminatorConfig cfg_;
  ParamList params_;
  std::vector<Layer> layers_;
};

struct BundleConfig {
  GeneratorConfig to_hr;  // G_L: LR -> HR
  GeneratorConfig to_lr;  // G_H: HR -> LR
  DiscriminatorConfig disc_lr;
  DiscriminatorConfig disc_hr;
};

struct ModelBundle {
  BundleConfig config;
  Generator to_hr;
  Generator to_lr;
  Discriminator disc_lr;
  Discriminator disc_hr;

  explicit ModelBundle(const BundleConfig& cfg);
  void init_weights(std::uint64_t seed);
};

// Closed-form counts.
std::size_t generator_param_count(const GeneratorConfig& cfg);
std::size_t discriminator_param_count(const DiscriminatorConfig& cfg);

// [n, 1, h, w] batch from equally sized images, and back.
Tensor to_tensor(std::span<const Image> images);
Image image_at(const Tensor& t, int index);

// Checkpoint archive, little-endian:
//   0   char[8]  magic "ERSRCKPT"
//   8   u64      manifest byte length L
//   16  char[L]  manifest JSON: {"format":"earsr-checkpoint","version":1,
//                "step", "configs", "train", "tensors":[{"name","shape","offset"}]}
//   16+L         f32 arrays concatenated in manifest order; offsets in floats
// Tensor order: to_hr.*, to_lr.*, disc_lr.*, disc_hr.*, then optional
// optimizer state ("adam.<net>.m|v.<param>").
struct CheckpointExtras {
  std::int64_t step = 0;
  std::string train_json = "{}";  // training configuration, free-form JSON
  std::map<std::string, Tensor> extra_tensors;
};

void save_checkpoint(const ModelBundle& bundle, const CheckpointExtras& extras,
                     const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path, CheckpointExtras* extras = nullptr);

}  // namespace earsr::networks
