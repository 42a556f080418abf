#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "earsr/image.hpp"
#include "earsr/networks.hpp"

namespace earsr::training {

struct TrainConfig {
  double lambda_rec = 10.0;
  double lambda_adv = 1.0;
  int batch_size = 5;
  double learning_rate = 1e-4;
  int epochs = 50;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  // Optional cap on optimizer steps (0 = run all epochs).
  std::int64_t max_steps = 0;
  // Generator adversarial term: -log D(fake) instead of log(1 - D(fake)).
  bool non_saturating = false;
  double log_floor = 1e-7;

  void validate() const;
  std::string to_json() const;
};

struct LossReport {
  std::int64_t step = 0;
  double l_rec = 0.0;
  double l_adv_g = 0.0;
  double l_adv_d = 0.0;
  double l_total = 0.0;

  std::string to_json() const;
};

using Mapping = std::function<nn::Var(const nn::Var&)>;

// Mean over the batch of per-pixel mean |x - G_H(G_L(x))| plus the same term
// for y through G_L then G_H.
nn::Var cycle_loss(const nn::Var& x, const nn::Var& y, const Mapping& to_hr, const Mapping& to_lr);
double cycle_loss(std::span<const Image> x, std::span<const Image> y,
                  const networks::ModelBundle& bundle);

// Generator objective: E[log(1 - D_H(G_L(x)))] + E[log(1 - D_L(G_H(y)))], or
// with non_saturating, -E[log D_H(G_L(x))] - E[log D_L(G_H(y))].
nn::Var generator_adversarial(const nn::Var& d_hr_on_fake, const nn::Var& d_lr_on_fake,
                              bool non_saturating, double floor);

// Negated discriminator objective (minimized):
// -(E[log D_L(x)] + E[log D_H(y)] + E[log(1 - D_H(G_L(x)))] + E[log(1 - D_L(G_H(y)))]).
nn::Var discriminator_loss(const nn::Var& d_lr_on_real, const nn::Var& d_hr_on_real,
                           const nn::Var& d_hr_on_fake, const nn::Var& d_lr_on_fake, double floor);

struct AdversarialLosses {
  double gen = 0.0;
  double disc = 0.0;
};

AdversarialLosses adversarial_losses(std::span<const Image> x, std::span<const Image> y,
                                     const networks::ModelBundle& bundle,
                                     bool non_saturating = false, double floor = 1e-7);

class Adam {
 public:
  Adam(networks::ParamList& params, double lr, double beta1, double beta2, double eps);
  void step();
  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }
  std::vector<nn::Tensor>& first_moments() { return m_; }
  std::vector<nn::Tensor>& second_moments() { return v_; }
  const std::vector<nn::Tensor>& first_moments() const { return m_; }
  const std::vector<nn::Tensor>& second_moments() const { return v_; }

 private:
  networks::ParamList* params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

// Owns optimizer state for one bundle and performs single training steps.
class Trainer {
 public:
  Trainer(networks::ModelBundle& bundle, const TrainConfig& cfg);

  // One generator half-step followed by one discriminator half-step.
  LossReport step(std::span<const Image> x, std::span<const Image> y, std::int64_t step_index);

  networks::CheckpointExtras checkpoint_extras(std::int64_t step) const;
  void restore(const networks::CheckpointExtras& extras);

  // Fingerprints captured around the last step's half-steps:
  // [0] before G step, [1] after G step, [2] after D step.
  struct Fingerprints {
    std::uint64_t gen[3];
    std::uint64_t disc[3];
  };
  const Fingerprints& last_fingerprints() const { return prints_; }
  void track_fingerprints(bool on) { track_ = on; }

 private:
  networks::ModelBundle& bundle_;
  TrainConfig cfg_;
  networks::ParamList gen_params_;
  networks::ParamList disc_params_;
  Adam gen_opt_;
  Adam disc_opt_;
  bool track_ = false;
  Fingerprints prints_{};
};

struct TrainCallbacks {
  std::function<void(const LossReport&)> on_report;
  std::function<void(std::int64_t step, const networks::ModelBundle&,
                     const networks::CheckpointExtras&)>
      on_checkpoint;
};

struct TrainResult {
  std::vector<LossReport> reports;
  std::int64_t steps = 0;
};

std::int64_t steps_per_epoch(std::size_t n_lr, std::size_t n_hr, int batch_size);

// Runs the full schedule from `start_step` (0 for a fresh bundle). Fully
// deterministic given cfg.seed. On NonFiniteLoss the error propagates and no
// further checkpoint is emitted.
TrainResult train(const std::vector<Image>& data_lr, const std::vector<Image>& data_hr,
                  const TrainConfig& cfg, networks::ModelBundle& bundle,
                  const TrainCallbacks& callbacks = {}, std::int64_t start_step = 0,
                  const networks::CheckpointExtras* resume = nullptr);

}  // namespace earsr::training
