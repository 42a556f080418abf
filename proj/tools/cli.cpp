#include "cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "earsr/bayes.hpp"
#include "earsr/error.hpp"
#include "earsr/imaging.hpp"
#include "earsr/metrics.hpp"
#include "earsr/networks.hpp"
#include "earsr/patchwork.hpp"
#include "earsr/phantom.hpp"
#include "earsr/rating.hpp"
#include "earsr/rating_server.hpp"
#include "earsr/training.hpp"
#include "earsr/volume_io.hpp"

namespace earsr::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Accessor for one RunConfig field, usable as a plain function pointer.
#define CFG(expr) +[](RunConfig& c) -> decltype((c.expr)) { return c.expr; }

namespace {

const char* kVersion = "0.1.0";

std::string utc_stamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) { io::write_file_atomic(p, text); }

std::vector<Image> images_of(const patchwork::PatchSet& set) {
  std::vector<Image> out;
  out.reserve(set.patches.size());
  for (const auto& p : set.patches) out.push_back(p.data);
  return out;
}

// Patch ranges of one grid inside a PatchSet.
std::vector<patchwork::Patch> grid_slice(const patchwork::PatchSet& set, std::size_t g) {
  std::size_t begin = 0;
  for (std::size_t i = 0; i < g; ++i) begin += set.grids[i].origins.size();
  const std::size_t n = set.grids[g].origins.size();
  if (begin + n > set.patches.size()) throw Error(ErrorCode::GridMismatch, "patch set is shorter than its grids");
  return {set.patches.begin() + static_cast<std::ptrdiff_t>(begin),
          set.patches.begin() + static_cast<std::ptrdiff_t>(begin + n)};
}

// The run id recorded by an upstream run directory, if the input lives in one.
json provenance(const std::string& input) {
  if (input.empty()) return nullptr;
  fs::path p = fs::absolute(input);
  for (int up = 0; up < 3 && !p.empty(); ++up, p = p.parent_path()) {
    if (fs::exists(p / "run.json")) {
      try {
        const auto j = json::parse(io::read_file(p / "run.json"));
        return {{"path", input}, {"run_id", j.value("run_id", "")}};
      } catch (const json::exception&) {
        break;
      }
    }
    if (p == p.parent_path()) break;
  }
  return {{"path", input}, {"run_id", nullptr}};
}

struct Context {
  const RunConfig& cfg;
  const Paths& paths;
  fs::path dir;  // the temporary run directory being filled
  std::ostream& log;
  json inputs = json::object();
};

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorCode::BadArgument, std::string("missing required flag ") + flag);
}

// ---- subcommands ---------------------------------------------------------

void cmd_preprocess(Context& ctx) {
  const auto& cfg = ctx.cfg;
  require(ctx.paths.input, "--in");
  ctx.inputs["volume"] = provenance(ctx.paths.input);
  const Volume in = io::load_volume(ctx.paths.input);
  in.validate();
  const PixelSize target{cfg.imaging.target_pixel_mm, cfg.imaging.target_pixel_mm};
  std::vector<Image> norm;
  for (int z = 0; z < in.depth(); ++z) {
    const Slice s{in.slices[z], {in.voxel_size_mm.y, in.voxel_size_mm.x}, std::nullopt};
    const Slice r = imaging::bicubic_resample(s, target, cfg.imaging.max_dim);
    norm.push_back(imaging::zscore_then_unit_normalize(r.data));
    ctx.log << "slice " << z << ": " << r.data.height() << "x" << r.data.width() << "\n";
  }
  if (cfg.imaging.crop && !norm.empty()) {
    // One box for the whole volume so every slice keeps the same dims.
    std::optional<imaging::RoiBox> box;
    for (const Image& img : norm) {
      try {
        const auto roi = imaging::crop_roi(Slice{img, target, std::nullopt}, cfg.imaging.roi_threshold,
                                           cfg.imaging.roi_margin).second;
        if (!box) {
          box = roi;
        } else {
          box->y0 = std::min(box->y0, roi.y0);
          box->x0 = std::min(box->x0, roi.x0);
          box->y1 = std::max(box->y1, roi.y1);
          box->x1 = std::max(box->x1, roi.x1);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyForeground) throw;
      }
    }
    if (!box) throw Error(ErrorCode::EmptyForeground, "no slice has pixels above the ROI threshold");
    for (Image& img : norm) img = imaging::crop(img, *box);
    ctx.log << "roi " << box->y0 << " " << box->x0 << " " << box->y1 << " " << box->x1 << "\n";
  }
  Volume out;
  out.slices = norm;
  out.voxel_size_mm = VoxelSize{in.voxel_size_mm.z, target.y, target.x};
  out.meta = in.meta;
  io::save_volume(out, ctx.dir / "volume");
  if (ctx.paths.write_patches) {
    patchwork::PatchSet set;
    set.pixel_size_mm = target;
    for (int z = 0; z < out.depth(); ++z) {
      const auto grid = patchwork::make_grid(out.height(), out.width(), cfg.patch.size, cfg.patch.stride);
      for (auto& p : patchwork::extract_patches(out.slices[z], grid, io::slice_file_name(z))) {
        set.patches.push_back(std::move(p));
      }
      set.grids.push_back(grid);
    }
    patchwork::save_patch_set(set, ctx.dir / "patches");
  }
}

void cmd_phantom(Context& ctx) {
  const auto& cfg = ctx.cfg;
  phantom::PhantomSpec spec;
  spec.seed = cfg.seed;
  if (!ctx.paths.spec.empty()) {
    const std::string text = io::read_file(ctx.paths.spec);
    spec = phantom::spec_from_json(text);
    // A seed in the spec file wins over the run seed.
    if (!json::parse(text).contains("seed")) spec.seed = cfg.seed;
    ctx.inputs["spec"] = ctx.paths.spec;
  }
  spec.validate();
  const auto sum = phantom::generate_unpaired_corpus(spec, ctx.paths.n_lr, ctx.paths.n_hr, cfg.patch.size,
                                                     cfg.patch.stride, ctx.dir, ctx.paths.n_val);
  write_text(ctx.dir / "spec.json", phantom::spec_to_json(spec) + "\n");
  const json s{{"lr_slices", sum.lr_slices}, {"hr_slices", sum.hr_slices}, {"val_slices", sum.val_slices},
               {"lr_patches", sum.lr_patches}, {"hr_patches", sum.hr_patches}};
  write_text(ctx.dir / "summary.json", s.dump(2) + "\n");
  ctx.log << "lr patches " << sum.lr_patches << ", hr patches " << sum.hr_patches << "\n";
}

void cmd_train(Context& ctx) {
  const auto& cfg = ctx.cfg;
  require(ctx.paths.lr_patches, "--lr-patches");
  require(ctx.paths.hr_patches, "--hr-patches");
  ctx.inputs["lr_patches"] = provenance(ctx.paths.lr_patches);
  ctx.inputs["hr_patches"] = provenance(ctx.paths.hr_patches);
  const auto lr = images_of(patchwork::load_patch_set(ctx.paths.lr_patches));
  const auto hr = images_of(patchwork::load_patch_set(ctx.paths.hr_patches));
  if (lr.empty() || hr.empty()) throw Error(ErrorCode::EmptySet, "training patch sets must be non-empty");
  const int side = lr.front().height();
  for (const auto* set : {&lr, &hr})
    for (const Image& im : *set)
      if (im.height() != side || im.width() != side) {
        throw Error(ErrorCode::ShapeError, "all training patches must be square and the same size");
      }

  training::TrainConfig tc = cfg.training;
  tc.seed = cfg.seed;
  std::optional<networks::ModelBundle> bundle;
  networks::CheckpointExtras resume;
  std::int64_t start = 0;
  if (!ctx.paths.resume.empty()) {
    bundle.emplace(networks::load_checkpoint(ctx.paths.resume, &resume));
    start = resume.step;
    ctx.inputs["resume"] = provenance(ctx.paths.resume);
  } else {
    bundle.emplace(cfg.network.bundle(side));
    bundle->init_weights(cfg.seed);
  }

  std::int64_t total = static_cast<std::int64_t>(tc.epochs) * training::steps_per_epoch(lr.size(), hr.size(), tc.batch_size);
  if (tc.max_steps > 0) total = std::min(total, tc.max_steps);
  total = std::max(total, start);

  std::ofstream losses(ctx.dir / "losses.ndjson");
  training::TrainCallbacks cb;
  cb.on_report = [&](const training::LossReport& r) {
    losses << r.to_json() << "\n";
    losses.flush();
    if (r.step == 1 || r.step % 10 == 0 || r.step == total) {
      ctx.log << "step " << r.step << "/" << total << " L_rec " << r.l_rec << " L_adv_g " << r.l_adv_g
              << " L_adv_d " << r.l_adv_d << "\n";
    }
  };
  cb.on_checkpoint = [&](std::int64_t step, const networks::ModelBundle& b, const networks::CheckpointExtras& ex) {
    if (step == total) {
      networks::save_checkpoint(b, ex, ctx.dir / "model.ckpt");
    } else {
      char name[48];
      std::snprintf(name, sizeof name, "step_%08lld.ckpt", static_cast<long long>(step));
      fs::create_directories(ctx.dir / "checkpoints");
      networks::save_checkpoint(b, ex, ctx.dir / "checkpoints" / name);
    }
  };
  const auto result = training::train(lr, hr, tc, *bundle, cb, start, ctx.paths.resume.empty() ? nullptr : &resume);
  json s{{"steps", result.steps}, {"start_step", start}, {"patch_size", side}};
  if (!result.reports.empty()) {
    s["first_l_rec"] = result.reports.front().l_rec;
    s["last_l_rec"] = result.reports.back().l_rec;
  }
  write_text(ctx.dir / "summary.json", s.dump(2) + "\n");
}

void cmd_infer(Context& ctx) {
  const auto& cfg = ctx.cfg;
  require(ctx.paths.model, "--model");
  require(ctx.paths.input, "--in");
  ctx.inputs["model"] = provenance(ctx.paths.model);
  ctx.inputs["volume"] = provenance(ctx.paths.input);
  const networks::ModelBundle bundle = networks::load_checkpoint(ctx.paths.model);
  const Volume vol = io::load_volume(ctx.paths.input);
  vol.validate();
  const PixelSize px{vol.voxel_size_mm.y, vol.voxel_size_mm.x};
  patchwork::PatchSet gen, lr, heat, mask;
  gen.pixel_size_mm = lr.pixel_size_mm = heat.pixel_size_mm = mask.pixel_size_mm = px;
  json var_max = json::array();
  for (int z = 0; z < vol.depth(); ++z) {
    const auto grid = patchwork::make_grid(vol.height(), vol.width(), cfg.patch.size, cfg.patch.stride);
    const auto lp = patchwork::extract_patches(vol.slices[z], grid, io::slice_file_name(z));
    for (std::size_t i = 0; i < lp.size(); ++i) {
      patchwork::Patch g = lp[i];
      if (cfg.inference.deterministic) {
        nn::NoGradGuard ng;
        const auto t = networks::to_tensor(std::span<const Image>(&lp[i].data, 1));
        g.data = networks::image_at(bundle.to_hr.forward(nn::constant(t), networks::Mode::Deterministic)->value, 0);
      } else {
        const std::uint64_t seed = Rng::mix({cfg.seed, static_cast<std::uint64_t>(z), i});
        const auto r = bayes::mc_infer(bundle.to_hr, lp[i].data, cfg.inference.mc_passes, seed, cfg.jobs);
        g.data = r.mean;
        const auto h = bayes::uncertainty_map(r, lp[i].data, cfg.inference.mask_quantile);
        heat.patches.push_back({h.map, lp[i].origin, lp[i].parent});
        mask.patches.push_back({*h.mask, lp[i].origin, lp[i].parent});
        var_max.push_back(r.variance.max());
      }
      gen.patches.push_back(std::move(g));
      lr.patches.push_back(lp[i]);
    }
    gen.grids.push_back(grid);
    lr.grids.push_back(grid);
    heat.grids.push_back(grid);
    mask.grids.push_back(grid);
    ctx.log << "slice " << z << ": " << lp.size() << " patches\n";
  }
  patchwork::save_patch_set(gen, ctx.dir / "generated");
  patchwork::save_patch_set(lr, ctx.dir / "lr");
  if (!cfg.inference.deterministic) {
    patchwork::save_patch_set(heat, ctx.dir / "uncertainty");
    patchwork::save_patch_set(mask, ctx.dir / "mask");
    write_text(ctx.dir / "variance.json", json{{"variance_max", var_max}}.dump(2) + "\n");
  }
}

void cmd_reconstruct(Context& ctx) {
  const auto& cfg = ctx.cfg;
  std::string gen_dir = ctx.paths.patches, lr_dir = ctx.paths.lr_patches;
  if (!ctx.paths.from.empty()) {
    gen_dir = (fs::path(ctx.paths.from) / "generated").string();
    lr_dir = (fs::path(ctx.paths.from) / "lr").string();
  }
  require(gen_dir, "--patches or --from");
  if (cfg.patch.post) require(lr_dir, "--lr-patches or --from");
  ctx.inputs["patches"] = provenance(gen_dir);
  ctx.inputs["lr_patches"] = provenance(lr_dir);
  const auto gen = patchwork::load_patch_set(gen_dir);
  std::optional<patchwork::PatchSet> lr;
  if (!lr_dir.empty()) lr = patchwork::load_patch_set(lr_dir);
  if (lr && lr->grids != gen.grids) throw Error(ErrorCode::GridMismatch, "generated and LR patch grids differ");
  patchwork::ReconstructOptions opts;
  opts.post = cfg.patch.post;
  opts.bins = cfg.patch.bins;
  opts.median_kernel = cfg.patch.median_kernel;
  Volume out;
  out.voxel_size_mm = VoxelSize{gen.pixel_size_mm.y, gen.pixel_size_mm.y, gen.pixel_size_mm.x};
  for (std::size_t g = 0; g < gen.grids.size(); ++g) {
    const auto gp = grid_slice(gen, g);
    const auto lp = lr ? grid_slice(*lr, g) : std::vector<patchwork::Patch>{};
    out.slices.push_back(patchwork::reconstruct_slice(gp, lp, gen.grids[g], opts));
  }
  io::save_volume(out, ctx.dir / "volume");
}

json hum_report(const std::vector<Image>& xs, const std::vector<Image>& ys, const RunConfig& cfg) {
  const metrics::MomentOptions mo{cfg.metric.binarize, cfg.metric.threshold};
  const auto form = cfg.metric.log_form ? metrics::HumForm::Log : metrics::HumForm::InverseLog;
  const auto m = metrics::m_hum(xs, ys, form, mo);
  json r{{"m_hum", m.global_min},
         {"mean_of_minima", m.mean_of_minima},
         {"best_pair", {m.best_x, m.best_y}},
         {"per_slice_min", m.per_x_min}};
  if (xs.size() == ys.size()) {
    json aligned = json::array();
    for (std::size_t i = 0; i < xs.size(); ++i) aligned.push_back(metrics::hum_distance(xs[i], ys[i], form, mo).distance);
    r["aligned"] = aligned;
  }
  return r;
}

void cmd_evaluate(Context& ctx) {
  require(ctx.paths.generated, "--generated");
  require(ctx.paths.reference, "--reference");
  ctx.inputs["generated"] = provenance(ctx.paths.generated);
  ctx.inputs["reference"] = provenance(ctx.paths.reference);
  const Volume gen = io::load_volume(ctx.paths.generated);
  const Volume ref = io::load_volume(ctx.paths.reference);
  json report{{"generated", hum_report(gen.slices, ref.slices, ctx.cfg)}};
  if (!ctx.paths.baseline.empty()) {
    ctx.inputs["baseline"] = provenance(ctx.paths.baseline);
    report["baseline"] = hum_report(io::load_volume(ctx.paths.baseline).slices, ref.slices, ctx.cfg);
  }
  write_text(ctx.dir / "report.json", report.dump(2) + "\n");
  ctx.log << "m-HuM " << report["generated"]["m_hum"].get<double>() << "\n";
}

void cmd_rate_create(Context& ctx) {
  require(ctx.paths.input, "--lr");
  require(ctx.paths.study_id, "--study-id");
  rating::StudyInput in;
  in.study_id = ctx.paths.study_id;
  in.lr = io::load_volume(ctx.paths.input).slices;
  in.raters = ctx.paths.raters;
  in.seed = ctx.cfg.seed;
  in.token = ctx.paths.token;
  ctx.inputs["lr"] = provenance(ctx.paths.input);
  for (const auto& m : ctx.paths.methods) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::BadArgument, "--method expects label=volume_dir");
    const std::string label = m.substr(0, eq), dir = m.substr(eq + 1);
    in.methods.push_back({label, io::load_volume(dir).slices});
    ctx.inputs["method:" + label] = provenance(dir);
  }
  const auto manifest = rating::create_study(in, ctx.dir);
  (void)manifest;
  ctx.log << "study " << in.study_id << " created for " << in.raters.size() << " raters\n";
}

void cmd_rate_analyze(Context& ctx) {
  require(ctx.paths.study, "--study");
  ctx.inputs["study"] = ctx.paths.study;
  const rating::Study study(ctx.paths.study);
  rating::ReportOptions opts;
  opts.anonymize = ctx.paths.anonymize;
  const auto rep = study.analyze(opts);
  write_text(ctx.dir / "report.json", rep.json + "\n");
  write_text(ctx.dir / "records.csv", rep.csv);
}

int cmd_rate_serve(const Paths& paths, std::ostream& out) {
  require(paths.study, "--studies");
  // Signals are taken by a dedicated thread so stop() runs outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  rating::ServerOptions opts;
  opts.compact_every = static_cast<std::size_t>(std::max(0, paths.compact_every));
  rating::Server server(paths.study, opts);
  const int port = server.bind(paths.host, paths.port);
  if (port < 0) throw Error(ErrorCode::Io, "cannot bind " + paths.host + ":" + std::to_string(paths.port));
  out << "listening on http://" << paths.host << ":" << port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.serve();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

// ---- command line ---------------------------------------------------------

Cli::Cli() : app_(std::make_unique<CLI::App>("Unpaired CT to micro-CT super-resolution toolkit", "earsr")) {
  CLI::App& app = *app_;
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* pre = app.add_subcommand("preprocess", "Resample, normalize and crop a volume; cut training patches");
  add_common(pre);
  pre->add_option("--in", paths_.input, "Input volume directory");
  bind(pre, "--target-mm", CFG(imaging.target_pixel_mm), "Target in-plane pixel size (mm)");
  bind_flag(pre, "--crop,!--no-crop", CFG(imaging.crop), "Crop to the foreground bounding box");
  bind(pre, "--roi-threshold", CFG(imaging.roi_threshold), "Foreground threshold on normalized intensities");
  bind(pre, "--roi-margin", CFG(imaging.roi_margin), "Margin around the foreground box (px)");
  bind(pre, "--max-dim", CFG(imaging.max_dim), "Largest allowed output side (px)");
  bind(pre, "--patch-size", CFG(patch.size), "Patch side (px)");
  bind(pre, "--stride", CFG(patch.stride), "Patch stride (px)");
  pre->add_flag("--patches,!--no-patches", paths_.write_patches, "Also write the patch set");

  auto* ph = app.add_subcommand("phantom", "Generate an unpaired synthetic corpus and paired validation slices");
  add_common(ph);
  ph->add_option("--spec", paths_.spec, "Phantom spec JSON file");
  ph->add_option("--n-lr", paths_.n_lr, "LR slices");
  ph->add_option("--n-hr", paths_.n_hr, "HR slices");
  ph->add_option("--n-val", paths_.n_val, "Paired validation slices");
  bind(ph, "--patch-size", CFG(patch.size), "Patch side (px)");
  bind(ph, "--stride", CFG(patch.stride), "Patch stride (px)");

  auto* tr = app.add_subcommand("train", "Train the cycle-consistent generator pair");
  add_common(tr);
  tr->add_option("--lr-patches", paths_.lr_patches, "LR patch set directory");
  tr->add_option("--hr-patches", paths_.hr_patches, "HR patch set directory");
  tr->add_option("--resume", paths_.resume, "Checkpoint to continue from");
  bind(tr, "--epochs", CFG(training.epochs), "Training epochs");
  bind(tr, "--batch-size", CFG(training.batch_size), "Patches per batch and domain");
  bind(tr, "--learning-rate", CFG(training.learning_rate), "Adam learning rate");
  bind(tr, "--lambda-rec", CFG(training.lambda_rec), "Cycle reconstruction weight");
  bind(tr, "--lambda-adv", CFG(training.lambda_adv), "Adversarial weight");
  bind(tr, "--beta1", CFG(training.beta1), "Adam beta1");
  bind(tr, "--beta2", CFG(training.beta2), "Adam beta2");
  bind(tr, "--adam-eps", CFG(training.adam_eps), "Adam epsilon");
  bind(tr, "--checkpoint-every", CFG(training.checkpoint_every), "Steps between checkpoints");
  bind(tr, "--max-steps", CFG(training.max_steps), "Cap on optimizer steps (0 = none)");
  bind_flag(tr, "--non-saturating", CFG(training.non_saturating), "Use -log D(fake) for the generators");
  bind(tr, "--log-floor", CFG(training.log_floor), "Probability clamp inside logs");
  bind(tr, "--base-width", CFG(network.base_width), "Generator base channel width");
  bind(tr, "--res-blocks", CFG(network.res_blocks), "Residual blocks (0 = 9 for 256 px patches, else 6)");
  bind(tr, "--dropout-rate", CFG(network.dropout_rate), "Dropout rate in residual blocks");
  bind(tr, "--disc-width", CFG(network.disc_width), "Discriminator base channel width");
  bind(tr, "--disc-layers", CFG(network.disc_layers), "Discriminator stride-2 layers");
  bind(tr, "--patch-size", CFG(patch.size), "Patch side (px), informational");

  auto* inf = app.add_subcommand("infer", "Run the LR-to-HR generator with Monte Carlo dropout");
  add_common(inf);
  inf->add_option("--model", paths_.model, "Checkpoint file");
  inf->add_option("--in", paths_.input, "Preprocessed LR volume directory");
  bind(inf, "--mc-passes", CFG(inference.mc_passes), "Stochastic forward passes T");
  bind_flag(inf, "--deterministic", CFG(inference.deterministic), "Single pass with dropout off");
  bind(inf, "--mask-quantile", CFG(inference.mask_quantile), "Quantile for the binarized uncertainty mask");
  bind(inf, "--patch-size", CFG(patch.size), "Patch side (px)");
  bind(inf, "--stride", CFG(patch.stride), "Patch stride (px)");

  auto* rec = app.add_subcommand("reconstruct", "Stitch generated patches into whole slices");
  add_common(rec);
  rec->add_option("--from", paths_.from, "An infer run directory");
  rec->add_option("--patches", paths_.patches, "Generated patch set");
  rec->add_option("--lr-patches", paths_.lr_patches, "LR patch set on the same grids");
  bind_flag(rec, "--post,!--no-post", CFG(patch.post), "Histogram-match to LR patches and median filter");
  bind(rec, "--bins", CFG(patch.bins), "Histogram matching quantile levels");
  bind(rec, "--median-kernel", CFG(patch.median_kernel), "Median filter side (odd)");

  auto* ev = app.add_subcommand("evaluate", "Hu-moment shape distances between volumes");
  add_common(ev);
  ev->add_option("--generated", paths_.generated, "Generated volume directory");
  ev->add_option("--reference", paths_.reference, "Reference volume directory");
  ev->add_option("--baseline", paths_.baseline, "Optional baseline volume directory");
  bind_flag(ev, "--binarize", CFG(metric.binarize), "Threshold before computing moments");
  bind(ev, "--threshold", CFG(metric.threshold), "Binarization threshold");
  bind_flag(ev, "--log-form", CFG(metric.log_form), "Sum |m_a - m_b| instead of |1/m_a - 1/m_b|");

  auto* rc = app.add_subcommand("rate-create", "Create a blinded rating study");
  add_common(rc);
  rc->add_option("--study-id", paths_.study_id, "Study name");
  rc->add_option("--lr", paths_.input, "LR reference volume directory");
  rc->add_option("--method", paths_.methods, "label=volume_dir, given three times");
  rc->add_option("--rater", paths_.raters, "Rater id, repeatable");
  rc->add_option("--token", paths_.token, "Report access token (random when empty)");

  auto* rs = app.add_subcommand("rate-serve", "Serve rating studies over HTTP");
  rs->add_option("--studies", paths_.study, "Directory holding study directories");
  rs->add_option("--host", paths_.host, "Bind address");
  rs->add_option("--port", paths_.port, "Port (0 = any free port)");
  rs->add_option("--compact-every", paths_.compact_every, "Submissions between log compactions (0 = never)");

  auto* ra = app.add_subcommand("rate-analyze", "Unblind a study and run the rank-sum analysis");
  add_common(ra);
  ra->add_option("--study", paths_.study, "Study directory");
  ra->add_flag("--anonymize", paths_.anonymize, "Drop rater ids from the report");
}

Cli::~Cli() = default;

CLI::App& Cli::app() { return *app_; }

template <class T>
void Cli::bind(CLI::App* sub, const std::string& flag, T& (*access)(RunConfig&), const std::string& desc) {
  CLI::Option* o = sub->add_option(flag, access(flags_), desc);
  overrides_.emplace_back(o, [access](RunConfig& dst, RunConfig& src) { access(dst) = access(src); });
}

void Cli::bind_flag(CLI::App* sub, const std::string& flag, bool& (*access)(RunConfig&), const std::string& desc) {
  CLI::Option* o = sub->add_flag(flag, access(flags_), desc);
  o->default_str(access(flags_) ? "true" : "false");
  overrides_.emplace_back(o, [access](RunConfig& dst, RunConfig& src) { access(dst) = access(src); });
}

void Cli::add_common(CLI::App* sub) {
  sub->add_option("--out", paths_.out, "Run directory (relative paths go under $EARSR_RUN_DIR)");
  sub->add_option("--config", paths_.config, "JSON file with any part of the run configuration");
  bind(sub, "--seed", CFG(seed), "Seed for every random stream");
  bind(sub, "--jobs", CFG(jobs), "Worker threads");
}

std::string Cli::help(const std::string& subcommand) const {
  if (subcommand.empty()) return app_->help();
  return app_->get_subcommand(subcommand)->help();
}

void Cli::parse(const std::vector<std::string>& args) {
  std::vector<std::string> rev(args.rbegin(), args.rend());
  app_->parse(rev);
}

std::string Cli::subcommand() const {
  const auto subs = app_->get_subcommands();
  return subs.empty() ? std::string{} : subs.front()->get_name();
}

RunConfig Cli::effective_config() const {
  RunConfig cfg;
  if (!paths_.config.empty()) cfg = merge_config(cfg, io::read_file(paths_.config));
  RunConfig src = flags_;
  for (const auto& [opt, copy] : overrides_) {
    if (opt->count() > 0) copy(cfg, src);
  }
  cfg.training.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

fs::path resolve_run_dir(const std::string& out, const std::string& command) {
  const char* env = std::getenv("EARSR_RUN_DIR");
  const fs::path root = (env && *env) ? fs::path(env) : fs::path("runs");
  if (!out.empty()) {
    const fs::path p(out);
    return (p.is_absolute() || !(env && *env)) ? p : root / p;
  }
  fs::path p = root / (command + "-" + utc_stamp());
  for (int k = 1; fs::exists(p) || fs::exists(fs::path(p.string() + ".tmp")); ++k) {
    p = root / (command + "-" + utc_stamp() + "-" + std::to_string(k));
  }
  return p;
}

int Cli::execute(std::ostream& out, std::ostream& err) {
  const std::string cmd = subcommand();
  fs::path tmp;
  auto fail = [&](const std::string& code, const std::string& message) {
    const json e{{"v", 1}, {"error", code}, {"message", message}, {"command", cmd}};
    if (!tmp.empty() && fs::exists(tmp)) {
      std::ofstream(tmp / "error.json") << e.dump(2) << "\n";
    }
    err << e.dump() << std::endl;
    return 1;
  };
  try {
    if (cmd == "rate-serve") return cmd_rate_serve(paths_, out);
    const RunConfig cfg = effective_config();
    const fs::path run = resolve_run_dir(paths_.out, cmd);
    if (fs::exists(run)) throw Error(ErrorCode::BadArgument, "run directory already exists: " + run.string());
    tmp = fs::path(run.string() + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    std::ofstream log_file(tmp / "log.txt");
    Context ctx{cfg, paths_, tmp, log_file};
    if (cmd == "preprocess") cmd_preprocess(ctx);
    else if (cmd == "phantom") cmd_phantom(ctx);
    else if (cmd == "train") cmd_train(ctx);
    else if (cmd == "infer") cmd_infer(ctx);
    else if (cmd == "reconstruct") cmd_reconstruct(ctx);
    else if (cmd == "evaluate") cmd_evaluate(ctx);
    else if (cmd == "rate-create") cmd_rate_create(ctx);
    else if (cmd == "rate-analyze") cmd_rate_analyze(ctx);
    else throw Error(ErrorCode::BadArgument, "unknown subcommand " + cmd);
    log_file.close();

    write_text(tmp / "config.json", cfg.to_json());
    const json meta{{"v", 1}, {"command", cmd}, {"run_id", run.filename().string()},
                    {"version", kVersion}, {"inputs", ctx.inputs}};
    write_text(tmp / "run.json", meta.dump(2) + "\n");
    fs::rename(tmp, run);
    out << run.string() << std::endl;
    return 0;
  } catch (const Error& e) {
    return fail(error_code_name(e.code()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(error_code_name(ErrorCode::Io), e.what());
  } catch (const std::exception& e) {
    return fail("Internal", e.what());
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Cli cli;
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    cli.parse(args);
  } catch (const CLI::ParseError& e) {
    return cli.app().exit(e, out, err);
  } catch (const Error& e) {
    err << json{{"v", 1}, {"error", error_code_name(e.code())}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }
  return cli.execute(out, err);
}

}  // namespace earsr::cli
