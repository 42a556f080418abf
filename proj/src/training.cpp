#include "earsr/training.hpp"

#include <cmath>
#include <json.hpp>
#include <map>
#include <numeric>

#include "earsr/error.hpp"
#include "earsr/nn/ops.hpp"

namespace earsr::training {

using nlohmann::json;
using namespace earsr::nn;
using networks::Mode;

void TrainConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!std::isfinite(lambda_rec) || !std::isfinite(lambda_adv) || lambda_rec < 0.0 ||
      lambda_adv < 0.0) {
    throw Error(ErrorCode::BadConfig, "loss weights must be finite and non-negative");
  }
  if (batch_size < 1) throw Error(ErrorCode::BadConfig, "batch_size must be >= 1");
  if (!positive(learning_rate)) throw Error(ErrorCode::BadConfig, "learning_rate must be positive");
  if (epochs < 0) throw Error(ErrorCode::BadConfig, "epochs must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::BadConfig, "Adam betas must lie in [0, 1)");
  }
  if (checkpoint_every < 1) throw Error(ErrorCode::BadConfig, "checkpoint_every must be >= 1");
  if (max_steps < 0) throw Error(ErrorCode::BadConfig, "max_steps must be >= 0");
  if (!(log_floor > 0.0 && log_floor < 1.0)) throw Error(ErrorCode::BadConfig, "log_floor must lie in (0, 1)");
}

std::string TrainConfig::to_json() const {
  json j{{"lambda_rec", lambda_rec},     {"lambda_adv", lambda_adv},
         {"batch_size", batch_size},     {"learning_rate", learning_rate},
         {"epochs", epochs},             {"beta1", beta1},
         {"beta2", beta2},               {"adam_eps", adam_eps},
         {"seed", seed},                 {"checkpoint_every", checkpoint_every},
         {"max_steps", max_steps},       {"non_saturating", non_saturating},
         {"log_floor", log_floor}};
  return j.dump();
}

std::string LossReport::to_json() const {
  json j{{"step", step}, {"L_rec", l_rec}, {"L_adv_g", l_adv_g}, {"L_adv_d", l_adv_d}, {"L_total", l_total}};
  return j.dump();
}

Var cycle_loss(const Var& x, const Var& y, const Mapping& to_hr, const Mapping& to_lr) {
  if (x->value.size() == 0 || y->value.size() == 0) {
    throw Error(ErrorCode::ShapeError, "cycle loss needs non-empty batches");
  }
  return weighted_sum({{mean_abs_diff(x, to_lr(to_hr(x))), 1.0},
                       {mean_abs_diff(y, to_hr(to_lr(y))), 1.0}});
}

double cycle_loss(std::span<const Image> x, std::span<const Image> y,
                  const networks::ModelBundle& bundle) {
  NoGradGuard guard;
  const Mapping to_hr = [&](const Var& v) { return bundle.to_hr.forward(v, Mode::Deterministic); };
  const Mapping to_lr = [&](const Var& v) { return bundle.to_lr.forward(v, Mode::Deterministic); };
  return scalar(cycle_loss(constant(networks::to_tensor(x)), constant(networks::to_tensor(y)),
                           to_hr, to_lr));
}

Var generator_adversarial(const Var& d_hr_on_fake, const Var& d_lr_on_fake, bool non_saturating,
                          double floor) {
  if (non_saturating) {
    return weighted_sum({{mean_log(d_hr_on_fake, floor), -1.0}, {mean_log(d_lr_on_fake, floor), -1.0}});
  }
  return weighted_sum({{mean_log1m(d_hr_on_fake, floor), 1.0}, {mean_log1m(d_lr_on_fake, floor), 1.0}});
}

Var discriminator_loss(const Var& d_lr_on_real, const Var& d_hr_on_real, const Var& d_hr_on_fake,
                       const Var& d_lr_on_fake, double floor) {
  return weighted_sum({{mean_log(d_lr_on_real, floor), -1.0},
                       {mean_log(d_hr_on_real, floor), -1.0},
                       {mean_log1m(d_hr_on_fake, floor), -1.0},
                       {mean_log1m(d_lr_on_fake, floor), -1.0}});
}

namespace {

void require_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::NonFiniteLoss, std::string(what) + " is not finite at step " + std::to_string(step));
  }
}

}  // namespace

AdversarialLosses adversarial_losses(std::span<const Image> x, std::span<const Image> y,
                                     const networks::ModelBundle& bundle, bool non_saturating,
                                     double floor) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::ShapeError, "adversarial losses need non-empty batches");
  NoGradGuard guard;
  const Var xv = constant(networks::to_tensor(x));
  const Var yv = constant(networks::to_tensor(y));
  const Var fake_hr = bundle.to_hr.forward(xv, Mode::Deterministic);
  const Var fake_lr = bundle.to_lr.forward(yv, Mode::Deterministic);
  const Var d_hr_fake = bundle.disc_hr.forward(fake_hr);
  const Var d_lr_fake = bundle.disc_lr.forward(fake_lr);
  AdversarialLosses out;
  out.gen = scalar(generator_adversarial(d_hr_fake, d_lr_fake, non_saturating, floor));
  out.disc = scalar(discriminator_loss(bundle.disc_lr.forward(xv), bundle.disc_hr.forward(yv),
                                       d_hr_fake, d_lr_fake, floor));
  require_finite(out.gen, "generator adversarial loss", 0);
  require_finite(out.disc, "discriminator loss", 0);
  return out;
}

Adam::Adam(networks::ParamList& params, double lr, double beta1, double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.items()) {
    const Tensor& v = p.var->value;
    m_.emplace_back(v.n, v.c, v.h, v.w, 0.0);
    v_.emplace_back(v.n, v.c, v.h, v.w, 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    Node& node = *items[i].var;
    if (node.grad.size() != node.value.size()) continue;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double g = node.grad.data[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      node.value.data[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

Trainer::Trainer(networks::ModelBundle& bundle, const TrainConfig& cfg)
    : bundle_(bundle),
      cfg_(cfg),
      gen_params_([&] {
        networks::ParamList p;
        p.extend("to_hr", bundle.to_hr.params());
        p.extend("to_lr", bundle.to_lr.params());
        return p;
      }()),
      disc_params_([&] {
        networks::ParamList p;
        p.extend("disc_lr", bundle.disc_lr.params());
        p.extend("disc_hr", bundle.disc_hr.params());
        return p;
      }()),
      gen_opt_(gen_params_, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps),
      disc_opt_(disc_params_, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps) {
  cfg_.validate();
}

LossReport Trainer::step(std::span<const Image> x_batch, std::span<const Image> y_batch,
                         std::int64_t step_index) {
  const Var x = constant(networks::to_tensor(x_batch));
  const Var y = constant(networks::to_tensor(y_batch));
  Rng masks({cfg_.seed, 0x30, static_cast<std::uint64_t>(step_index)});
  LossReport report;
  report.step = step_index + 1;

  if (track_) {
    prints_.gen[0] = gen_params_.fingerprint();
    prints_.disc[0] = disc_params_.fingerprint();
  }

  // Generator half-step; discriminators act as fixed critics.
  Var fake_hr, fake_lr;
  {
    disc_params_.set_trainable(false);
    fake_hr = bundle_.to_hr.forward(x, Mode::Stochastic, &masks);
    const Var rec_x = bundle_.to_lr.forward(fake_hr, Mode::Stochastic, &masks);
    fake_lr = bundle_.to_lr.forward(y, Mode::Stochastic, &masks);
    const Var rec_y = bundle_.to_hr.forward(fake_lr, Mode::Stochastic, &masks);
    const Var l_rec = weighted_sum({{mean_abs_diff(x, rec_x), 1.0}, {mean_abs_diff(y, rec_y), 1.0}});
    const Var l_adv = generator_adversarial(bundle_.disc_hr.forward(fake_hr),
                                            bundle_.disc_lr.forward(fake_lr), cfg_.non_saturating,
                                            cfg_.log_floor);
    const Var total = weighted_sum({{l_rec, cfg_.lambda_rec}, {l_adv, cfg_.lambda_adv}});
    report.l_rec = scalar(l_rec);
    report.l_adv_g = scalar(l_adv);
    report.l_total = scalar(total);
    disc_params_.set_trainable(true);
    require_finite(report.l_total, "generator loss", report.step);
    gen_params_.zero_grad();
    backward(total);
    gen_opt_.step();
  }
  if (track_) {
    prints_.gen[1] = gen_params_.fingerprint();
    prints_.disc[1] = disc_params_.fingerprint();
  }

  // Discriminator half-step on the fakes produced above.
  {
    const Var d_loss = discriminator_loss(
        bundle_.disc_lr.forward(x), bundle_.disc_hr.forward(y), bundle_.disc_hr.forward(detach(fake_hr)),
        bundle_.disc_lr.forward(detach(fake_lr)), cfg_.log_floor);
    report.l_adv_d = scalar(d_loss);
    require_finite(report.l_adv_d, "discriminator loss", report.step);
    disc_params_.zero_grad();
    backward(d_loss);
    disc_opt_.step();
  }
  if (track_) {
    prints_.gen[2] = gen_params_.fingerprint();
    prints_.disc[2] = disc_params_.fingerprint();
  }
  return report;
}

networks::CheckpointExtras Trainer::checkpoint_extras(std::int64_t step) const {
  networks::CheckpointExtras ex;
  ex.step = step;
  ex.train_json = cfg_.to_json();
  auto dump = [&](const std::string& tag, const networks::ParamList& params, const Adam& opt) {
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      ex.extra_tensors["adam." + tag + ".m." + params.items()[i].name] = opt.first_moments()[i];
      ex.extra_tensors["adam." + tag + ".v." + params.items()[i].name] = opt.second_moments()[i];
    }
  };
  dump("gen", gen_params_, gen_opt_);
  dump("disc", disc_params_, disc_opt_);
  return ex;
}

void Trainer::restore(const networks::CheckpointExtras& extras) {
  auto load = [&](const std::string& tag, const networks::ParamList& params, Adam& opt) {
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      auto m = extras.extra_tensors.find("adam." + tag + ".m." + params.items()[i].name);
      auto v = extras.extra_tensors.find("adam." + tag + ".v." + params.items()[i].name);
      if (m == extras.extra_tensors.end() || v == extras.extra_tensors.end()) continue;
      opt.first_moments()[i] = m->second;
      opt.second_moments()[i] = v->second;
    }
    opt.set_steps_taken(extras.step);
  };
  load("gen", gen_params_, gen_opt_);
  load("disc", disc_params_, disc_opt_);
}

std::int64_t steps_per_epoch(std::size_t n_lr, std::size_t n_hr, int batch_size) {
  const std::size_t n = std::max(n_lr, n_hr);
  return static_cast<std::int64_t>((n + batch_size - 1) / batch_size);
}

namespace {

// Independent shuffled stream per domain; position k of the stream lives in
// epoch k / n at offset k % n.
class SampleStream {
 public:
  SampleStream(std::size_t n, std::uint64_t seed, std::uint64_t domain)
      : n_(n), seed_(seed), domain_(domain) {}

  std::size_t at(std::int64_t k) {
    const auto epoch = static_cast<std::uint64_t>(k) / n_;
    auto it = perms_.find(epoch);
    if (it == perms_.end()) {
      std::vector<std::size_t> perm(n_);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng({seed_, 0x20, domain_, epoch});
      for (std::size_t i = n_; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      if (perms_.size() > 4) perms_.clear();
      it = perms_.emplace(epoch, std::move(perm)).first;
    }
    return it->second[static_cast<std::uint64_t>(k) % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_, domain_;
  std::map<std::uint64_t, std::vector<std::size_t>> perms_;
};

}  // namespace

TrainResult train(const std::vector<Image>& data_lr, const std::vector<Image>& data_hr,
                  const TrainConfig& cfg, networks::ModelBundle& bundle,
                  const TrainCallbacks& callbacks, std::int64_t start_step,
                  const networks::CheckpointExtras* resume) {
  cfg.validate();
  if (data_lr.empty() || data_hr.empty()) {
    throw Error(ErrorCode::BadArgument, "both training streams must be non-empty");
  }
  std::int64_t total = static_cast<std::int64_t>(cfg.epochs) *
                       steps_per_epoch(data_lr.size(), data_hr.size(), cfg.batch_size);
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  Trainer trainer(bundle, cfg);
  if (resume) trainer.restore(*resume);
  SampleStream lr_stream(data_lr.size(), cfg.seed, 1);
  SampleStream hr_stream(data_hr.size(), cfg.seed, 2);

  TrainResult result;
  std::int64_t last_checkpoint = -1;
  std::vector<Image> xb(cfg.batch_size), yb(cfg.batch_size);
  for (std::int64_t t = start_step; t < total; ++t) {
    for (int j = 0; j < cfg.batch_size; ++j) {
      const std::int64_t k = t * cfg.batch_size + j;
      xb[j] = data_lr[lr_stream.at(k)];
      yb[j] = data_hr[hr_stream.at(k)];
    }
    LossReport r = trainer.step(xb, yb, t);
    if (callbacks.on_report) callbacks.on_report(r);
    result.reports.push_back(r);
    if ((t + 1) % cfg.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(t + 1, bundle, trainer.checkpoint_extras(t + 1));
      last_checkpoint = t + 1;
    }
  }
  result.steps = std::max(total, start_step);
  if (callbacks.on_checkpoint && last_checkpoint != result.steps) {
    callbacks.on_checkpoint(result.steps, bundle, trainer.checkpoint_extras(result.steps));
  }
  return result;
}

}  // namespace earsr::training
