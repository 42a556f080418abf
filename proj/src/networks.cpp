#include "earsr/networks.hpp"

#include <cstring>
#include <json.hpp>

#include "earsr/error.hpp"
#include "earsr/nn/ops.hpp"
#include "earsr/volume_io.hpp"

namespace earsr::networks {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace earsr::nn;

void GeneratorConfig::validate() const {
  if (in_channels != 1) throw Error(ErrorCode::BadConfig, "generators take one input channel");
  if (base_width < 1) throw Error(ErrorCode::BadConfig, "generator base_width must be positive");
  if (n_res_blocks < 1) throw Error(ErrorCode::BadConfig, "generator needs >= 1 residual block");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorCode::BadConfig, "dropout_rate must lie in [0, 1)");
  }
}

int default_res_blocks(int patch_size) { return patch_size >= 256 ? 9 : 6; }

void DiscriminatorConfig::validate() const {
  if (in_channels != 1) throw Error(ErrorCode::BadConfig, "discriminators take one input channel");
  if (base_width < 1) throw Error(ErrorCode::BadConfig, "discriminator base_width must be positive");
  if (n_layers < 1) throw Error(ErrorCode::BadConfig, "discriminator needs >= 1 layer");
}

Var ParamList::add(std::string name, Tensor t) {
  Var v = parameter(std::move(t));
  items_.push_back({std::move(name), v});
  return v;
}

void ParamList::extend(const std::string& prefix, const ParamList& other) {
  for (const auto& p : other.items()) items_.push_back({prefix + "." + p.name, p.var});
}

std::size_t ParamList::count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var->value.size();
  return n;
}

void ParamList::zero_grad() {
  for (auto& p : items_) p.var->zero_grad();
}

void ParamList::set_trainable(bool on) {
  for (auto& p : items_) p.var->requires_grad = on;
}

std::uint64_t ParamList::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : items_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.var->value.data.data());
    for (std::size_t i = 0; i < p.var->value.size() * sizeof(double); ++i) {
      h = (h ^ bytes[i]) * 0x100000001b3ull;
    }
  }
  return h;
}

namespace {

void init_params(ParamList& params, Rng& rng) {
  for (auto& p : params.items()) {
    auto& d = p.var->value.data;
    const bool is_bias = p.name.size() >= 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0;
    for (double& v : d) v = is_bias ? 0.0 : 0.02 * rng.normal();
  }
}

}  // namespace

Generator::Conv Generator::conv(const std::string& name, int cout, int cin, int k) {
  return {params_.add(name + ".weight", Tensor(cout, cin, k, k)),
          params_.add(name + ".bias", Tensor(1, cout, 1, 1))};
}

Generator::Conv Generator::conv_t(const std::string& name, int cin, int cout, int k) {
  return {params_.add(name + ".weight", Tensor(cin, cout, k, k)),
          params_.add(name + ".bias", Tensor(1, cout, 1, 1))};
}

Generator::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int w = cfg.base_width;
  ingress_ = conv("ingress", w, cfg.in_channels, 7);
  down1_ = conv("down1", 2 * w, w, 3);
  down2_ = conv("down2", 4 * w, 2 * w, 3);
  for (int b = 0; b < cfg.n_res_blocks; ++b) {
    const std::string name = "res" + std::to_string(b);
    auto c1 = conv(name + ".conv1", 4 * w, 4 * w, 3);
    auto c2 = conv(name + ".conv2", 4 * w, 4 * w, 3);
    blocks_.emplace_back(c1, c2);
  }
  up1_ = conv_t("up1", 4 * w, 2 * w, 3);
  up2_ = conv_t("up2", 2 * w, w, 3);
  egress_ = conv("egress", 1, w, 7);
}

void Generator::init_weights(Rng& rng) { init_params(params_, rng); }

Var Generator::forward(const Var& x, Mode mode, Rng* rng) const {
  const Tensor& in = x->value;
  if (in.c != cfg_.in_channels) throw Error(ErrorCode::ShapeError, "generator expects 1 channel");
  if (in.h % 4 != 0 || in.w % 4 != 0 || in.h < 8 || in.w < 8) {
    throw Error(ErrorCode::ShapeError,
                "generator input " + in.shape_string() + " must be >= 8 and divisible by 4");
  }
  const bool stochastic = mode == Mode::Stochastic && cfg_.dropout_rate > 0.0;
  if (stochastic && rng == nullptr) {
    throw Error(ErrorCode::BadArgument, "stochastic forward needs a random stream");
  }
  Var h = relu(instance_norm(conv2d(reflect_pad(x, 3), ingress_.weight, ingress_.bias, 1, 0)));
  h = relu(instance_norm(conv2d(reflect_pad(h, 1), down1_.weight, down1_.bias, 2, 0)));
  h = relu(instance_norm(conv2d(reflect_pad(h, 1), down2_.weight, down2_.bias, 2, 0)));
  for (const auto& [c1, c2] : blocks_) {
    Var r = relu(instance_norm(conv2d(reflect_pad(h, 1), c1.weight, c1.bias, 1, 0)));
    if (stochastic) r = dropout(r, cfg_.dropout_rate, *rng);
    r = instance_norm(conv2d(reflect_pad(r, 1), c2.weight, c2.bias, 1, 0));
    h = add(h, r);
  }
  h = relu(instance_norm(conv_transpose2d(h, up1_.weight, up1_.bias, 2, 1, 1)));
  h = relu(instance_norm(conv_transpose2d(h, up2_.weight, up2_.bias, 2, 1, 1)));
  return sigmoid(conv2d(reflect_pad(h, 3), egress_.weight, egress_.bias, 1, 0));
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int w = cfg.base_width;
  auto add_layer = [&](int cout, int cin, int stride, bool norm, bool act) {
    const std::string name = "layer" + std::to_string(layers_.size());
    Var weight = params_.add(name + ".weight", Tensor(cout, cin, 4, 4));
    Var bias = params_.add(name + ".bias", Tensor(1, cout, 1, 1));
    layers_.push_back({weight, bias, stride, norm, act});
  };
  add_layer(w, cfg.in_channels, 2, false, true);
  int mult = 1;
  for (int i = 1; i < cfg.n_layers; ++i) {
    const int prev = mult;
    mult = std::min(1 << i, 8);
    add_layer(w * mult, w * prev, 2, true, true);
  }
  const int prev = mult;
  mult = std::min(1 << cfg.n_layers, 8);
  add_layer(w * mult, w * prev, 1, true, true);
  add_layer(1, w * mult, 1, false, false);
}

void Discriminator::init_weights(Rng& rng) { init_params(params_, rng); }

int Discriminator::output_side(int side) const {
  for (const auto& l : layers_) side = (side + 2 - 4) / l.stride + 1;
  return side;
}

Var Discriminator::forward(const Var& x) const {
  if (x->value.c != cfg_.in_channels) {
    throw Error(ErrorCode::ShapeError, "discriminator expects 1 channel");
  }
  if (output_side(std::min(x->value.h, x->value.w)) < 1) {
    throw Error(ErrorCode::ShapeError, "discriminator input " + x->value.shape_string() + " too small");
  }
  Var h = x;
  for (const auto& l : layers_) {
    h = conv2d(h, l.weight, l.bias, l.stride, 1);
    if (l.norm) h = instance_norm(h);
    if (l.activation) h = leaky_relu(h, 0.2);
  }
  return sigmoid(h);
}

ModelBundle::ModelBundle(const BundleConfig& cfg)
    : config(cfg), to_hr(cfg.to_hr), to_lr(cfg.to_lr), disc_lr(cfg.disc_lr), disc_hr(cfg.disc_hr) {}

void ModelBundle::init_weights(std::uint64_t seed) {
  Rng a({seed, 0x10, 0});
  Rng b({seed, 0x10, 1});
  Rng c({seed, 0x10, 2});
  Rng d({seed, 0x10, 3});
  to_hr.init_weights(a);
  to_lr.init_weights(b);
  disc_lr.init_weights(c);
  disc_hr.init_weights(d);
}

std::size_t generator_param_count(const GeneratorConfig& cfg) {
  return Generator(cfg).params().count();
}

std::size_t discriminator_param_count(const DiscriminatorConfig& cfg) {
  return Discriminator(cfg).params().count();
}

Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::ShapeError, "empty image batch");
  const int h = images.front().height();
  const int w = images.front().width();
  Tensor t(static_cast<int>(images.size()), 1, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != h || images[i].width() != w) {
      throw Error(ErrorCode::ShapeError, "batch images differ in size");
    }
    std::copy(images[i].pixels().begin(), images[i].pixels().end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(i * t.plane()));
  }
  return t;
}

Image image_at(const Tensor& t, int index) {
  if (index < 0 || index >= t.n || t.c != 1) throw Error(ErrorCode::ShapeError, "bad batch index");
  Image img(t.h, t.w);
  const auto first = t.data.begin() + static_cast<std::ptrdiff_t>(index * t.plane());
  std::copy(first, first + static_cast<std::ptrdiff_t>(t.plane()), img.pixels().begin());
  return img;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json gen_json(const GeneratorConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_width", c.base_width},
          {"n_res_blocks", c.n_res_blocks},
          {"dropout_rate", c.dropout_rate},
          {"norm", "instance"},
          {"padding", "reflect"}};
}

json disc_json(const DiscriminatorConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_width", c.base_width},
          {"n_layers", c.n_layers},
          {"norm", "instance"},
          {"padding", "zero"}};
}

GeneratorConfig gen_from(const json& j) {
  GeneratorConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.n_res_blocks = j.at("n_res_blocks").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  return c;
}

DiscriminatorConfig disc_from(const json& j) {
  DiscriminatorConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  return c;
}

struct Entry {
  std::string name;
  const Tensor* tensor;
};

std::vector<std::pair<std::string, const ParamList*>> nets(const ModelBundle& b) {
  return {{"to_hr", &b.to_hr.params()},
          {"to_lr", &b.to_lr.params()},
          {"disc_lr", &b.disc_lr.params()},
          {"disc_hr", &b.disc_hr.params()}};
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const CheckpointExtras& extras,
                     const fs::path& path) {
  std::vector<Entry> entries;
  for (const auto& [net, params] : nets(bundle)) {
    for (const auto& p : params->items()) entries.push_back({net + "." + p.name, &p.var->value});
  }
  for (const auto& [name, t] : extras.extra_tensors) entries.push_back({name, &t});

  json m;
  m["format"] = "earsr-checkpoint";
  m["version"] = 1;
  m["step"] = extras.step;
  m["configs"] = {{"to_hr", gen_json(bundle.config.to_hr)},
                  {"to_lr", gen_json(bundle.config.to_lr)},
                  {"disc_lr", disc_json(bundle.config.disc_lr)},
                  {"disc_hr", disc_json(bundle.config.disc_hr)}};
  m["train"] = json::parse(extras.train_json);
  m["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    const Tensor& t = *e.tensor;
    m["tensors"].push_back({{"name", e.name}, {"shape", {t.n, t.c, t.h, t.w}}, {"offset", offset}});
    offset += t.size();
  }
  const std::string manifest = m.dump();

  std::string bytes("ERSRCKPT", 8);
  put_u64(bytes, manifest.size());
  bytes += manifest;
  bytes.reserve(bytes.size() + offset * 4);
  for (const auto& e : entries) {
    for (double v : e.tensor->data) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  io::write_file_atomic(path, bytes);
}

ModelBundle load_checkpoint(const fs::path& path, CheckpointExtras* extras) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < 16 || bytes.compare(0, 8, "ERSRCKPT") != 0) {
    throw FormatError("not a checkpoint: " + path.string(), 0);
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + len > bytes.size()) throw FormatError("checkpoint manifest truncated", 8);
  json m;
  try {
    m = json::parse(bytes.substr(16, len));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what(), 16 + e.byte);
  }
  if (m.value("format", "") != "earsr-checkpoint" || m.value("version", 0) != 1) {
    throw FormatError("unsupported checkpoint format/version", 16);
  }
  const auto& cfg = m.at("configs");
  ModelBundle bundle(BundleConfig{gen_from(cfg.at("to_hr")), gen_from(cfg.at("to_lr")),
                                  disc_from(cfg.at("disc_lr")), disc_from(cfg.at("disc_hr"))});

  std::map<std::string, Tensor*> targets;
  for (auto& [net, params] : nets(bundle)) {
    for (const auto& p : params->items()) targets[net + "." + p.name] = &p.var->value;
  }
  const std::size_t data_start = 16 + len;
  auto read_tensor = [&](const json& t, Tensor& dst) {
    const auto shape = t.at("shape");
    if (shape.size() != 4) throw FormatError("tensor shape must have 4 dims", 16);
    Tensor want(shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>(), shape[3].get<int>());
    if (dst.size() != 0 && !dst.same_shape(want)) {
      throw Error(ErrorCode::ShapeError, "checkpoint tensor " + t.at("name").get<std::string>() +
                                             " has shape " + want.shape_string() + ", model expects " +
                                             dst.shape_string());
    }
    const std::uint64_t off = data_start + 4 * t.at("offset").get<std::uint64_t>();
    if (off + 4 * want.size() > bytes.size()) {
      throw FormatError("tensor data truncated: " + t.at("name").get<std::string>(), off);
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 4 * i + b])) << (8 * b);
      }
      float f;
      std::memcpy(&f, &bits, 4);
      want.data[i] = f;
    }
    dst = std::move(want);
  };

  std::uint64_t payload = 0;
  for (const auto& t : m.at("tensors")) {
    std::uint64_t count = 1;
    for (const auto& d : t.at("shape")) count *= d.get<std::uint64_t>();
    payload = std::max(payload, t.at("offset").get<std::uint64_t>() + count);
  }
  if (bytes.size() != data_start + 4 * payload) {
    throw FormatError("checkpoint payload is " + std::to_string(bytes.size() - data_start) +
                          " bytes, manifest describes " + std::to_string(4 * payload),
                      bytes.size());
  }

  std::size_t filled = 0;
  for (const auto& t : m.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    auto it = targets.find(name);
    if (it != targets.end()) {
      read_tensor(t, *it->second);
      ++filled;
    } else if (extras) {
      Tensor tmp;
      read_tensor(t, tmp);
      extras->extra_tensors[name] = std::move(tmp);
    }
  }
  if (filled != targets.size()) {
    throw Error(ErrorCode::ShapeError, "checkpoint is missing " +
                                           std::to_string(targets.size() - filled) + " parameter arrays");
  }
  if (extras) {
    extras->step = m.value("step", std::int64_t{0});
    extras->train_json = m.value("train", json::object()).dump();
  }
  return bundle;
}

}  // namespace earsr::networks
