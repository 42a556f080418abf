#include "earsr/run_config.hpp"

#include <cmath>
#include <functional>
#include <map>

#include <json.hpp>

#include "earsr/error.hpp"

namespace earsr {

using json = nlohmann::ordered_json;

namespace {

// One JSON key bound to one config field, both directions.
struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T, class Access>
Field field(Access access) {
  return {[access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const json& v) {
            if constexpr (std::is_same_v<T, bool>) {
              if (!v.is_boolean()) throw Error(ErrorCode::BadConfig, "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
              if (!v.is_number_integer()) throw Error(ErrorCode::BadConfig, "expected an integer");
            } else {
              if (!v.is_number()) throw Error(ErrorCode::BadConfig, "expected a number");
            }
            access(c) = v.get<T>();
          }};
}

#define EARSR_FIELD(T, expr) field<T>([](RunConfig& c) -> T& { return c.expr; })

using Section = std::vector<std::pair<std::string, Field>>;

const std::vector<std::pair<std::string, Section>>& layout() {
  static const std::vector<std::pair<std::string, Section>> l = {
      {"",
       {{"seed", EARSR_FIELD(std::uint64_t, seed)}, {"jobs", EARSR_FIELD(int, jobs)}}},
      {"imaging",
       {{"target_pixel_mm", EARSR_FIELD(double, imaging.target_pixel_mm)},
        {"crop", EARSR_FIELD(bool, imaging.crop)},
        {"roi_threshold", EARSR_FIELD(double, imaging.roi_threshold)},
        {"roi_margin", EARSR_FIELD(int, imaging.roi_margin)},
        {"max_dim", EARSR_FIELD(int, imaging.max_dim)}}},
      {"patch",
       {{"size", EARSR_FIELD(int, patch.size)},
        {"stride", EARSR_FIELD(int, patch.stride)},
        {"bins", EARSR_FIELD(int, patch.bins)},
        {"median_kernel", EARSR_FIELD(int, patch.median_kernel)},
        {"post", EARSR_FIELD(bool, patch.post)}}},
      {"network",
       {{"base_width", EARSR_FIELD(int, network.base_width)},
        {"res_blocks", EARSR_FIELD(int, network.res_blocks)},
        {"dropout_rate", EARSR_FIELD(double, network.dropout_rate)},
        {"disc_width", EARSR_FIELD(int, network.disc_width)},
        {"disc_layers", EARSR_FIELD(int, network.disc_layers)}}},
      {"training",
       {{"lambda_rec", EARSR_FIELD(double, training.lambda_rec)},
        {"lambda_adv", EARSR_FIELD(double, training.lambda_adv)},
        {"batch_size", EARSR_FIELD(int, training.batch_size)},
        {"learning_rate", EARSR_FIELD(double, training.learning_rate)},
        {"epochs", EARSR_FIELD(int, training.epochs)},
        {"beta1", EARSR_FIELD(double, training.beta1)},
        {"beta2", EARSR_FIELD(double, training.beta2)},
        {"adam_eps", EARSR_FIELD(double, training.adam_eps)},
        {"checkpoint_every", EARSR_FIELD(int, training.checkpoint_every)},
        {"max_steps", EARSR_FIELD(std::int64_t, training.max_steps)},
        {"non_saturating", EARSR_FIELD(bool, training.non_saturating)},
        {"log_floor", EARSR_FIELD(double, training.log_floor)}}},
      {"inference",
       {{"mc_passes", EARSR_FIELD(int, inference.mc_passes)},
        {"deterministic", EARSR_FIELD(bool, inference.deterministic)},
        {"mask_quantile", EARSR_FIELD(double, inference.mask_quantile)}}},
      {"metric",
       {{"binarize", EARSR_FIELD(bool, metric.binarize)},
        {"threshold", EARSR_FIELD(double, metric.threshold)},
        {"log_form", EARSR_FIELD(bool, metric.log_form)}}},
  };
  return l;
}

#undef EARSR_FIELD

void merge_section(RunConfig& cfg, const Section& section, const json& obj, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto f = std::find_if(section.begin(), section.end(), [&](const auto& p) { return p.first == it.key(); });
    if (f == section.end()) throw Error(ErrorCode::BadConfig, "unknown config key \"" + where + it.key() + "\"");
    try {
      f->second.set(cfg, it.value());
    } catch (const Error& e) {
      throw Error(ErrorCode::BadConfig, "config key \"" + where + it.key() + "\": " + e.what());
    }
  }
}

}  // namespace

networks::BundleConfig NetworkConfig::bundle(int patch_size) const {
  networks::BundleConfig b;
  b.to_hr = {1, base_width, res_blocks > 0 ? res_blocks : networks::default_res_blocks(patch_size), dropout_rate};
  b.to_lr = b.to_hr;
  b.disc_lr = {1, disc_width, disc_layers};
  b.disc_hr = b.disc_lr;
  return b;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::BadConfig, m); };
  if (jobs < 1) bad("jobs must be >= 1");
  if (!(imaging.target_pixel_mm > 0.0)) bad("imaging.target_pixel_mm must be positive");
  if (imaging.roi_margin < 0) bad("imaging.roi_margin must be >= 0");
  if (imaging.max_dim < 1) bad("imaging.max_dim must be >= 1");
  if (patch.size < 4 || patch.size % 4 != 0) bad("patch.size must be a positive multiple of 4");
  if (patch.stride < 1 || patch.stride > patch.size) bad("patch.stride must lie in [1, patch.size]");
  if (patch.bins < 2) bad("patch.bins must be >= 2");
  if (patch.median_kernel < 1 || patch.median_kernel % 2 == 0) bad("patch.median_kernel must be odd");
  if (network.res_blocks < 0) bad("network.res_blocks must be >= 0");
  if (!(network.dropout_rate >= 0.0 && network.dropout_rate < 1.0)) bad("network.dropout_rate must lie in [0, 1)");
  if (inference.mc_passes < 1) throw Error(ErrorCode::BadT, "inference.mc_passes must be >= 1");
  if (!(inference.mask_quantile >= 0.0 && inference.mask_quantile <= 1.0)) bad("inference.mask_quantile must lie in [0, 1]");
  const auto b = network.bundle(patch.size);
  b.to_hr.validate();
  b.disc_hr.validate();
  training.validate();
}

std::string RunConfig::to_json() const {
  json out = json::object();
  for (const auto& [name, section] : layout()) {
    json& dst = name.empty() ? out : (out[name] = json::object());
    for (const auto& [key, f] : section) dst[key] = f.get(*this);
  }
  return out.dump(2) + "\n";
}

RunConfig merge_config(const RunConfig& base, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "config must be a JSON object");
  RunConfig cfg = base;
  const auto& l = layout();
  json top = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto s = std::find_if(l.begin() + 1, l.end(), [&](const auto& p) { return p.first == it.key(); });
    if (s == l.end()) {
      top[it.key()] = it.value();
    } else {
      if (!it.value().is_object()) throw Error(ErrorCode::BadConfig, "config section \"" + it.key() + "\" must be an object");
      merge_section(cfg, s->second, it.value(), it.key() + ".");
    }
  }
  merge_section(cfg, l.front().second, top, "");
  cfg.training.seed = cfg.seed;
  return cfg;
}

}  // namespace earsr
