#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "earsr/bayes.hpp"
#include "earsr/error.hpp"
#include "earsr/metrics.hpp"
#include "earsr/networks.hpp"
#include "earsr/patchwork.hpp"
#include "earsr/phantom.hpp"
#include "earsr/run_config.hpp"

namespace py = pybind11;
using namespace earsr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels().begin());
  return img;
}

Array to_array(const Image& img) {
  Array a({img.height(), img.width()});
  std::copy(img.pixels().begin(), img.pixels().end(), a.mutable_data());
  return a;
}

std::vector<Image> to_images(const std::vector<Array>& xs) {
  std::vector<Image> out;
  for (const auto& x : xs) out.push_back(to_image(x));
  return out;
}

metrics::HumForm form_of(const std::string& s) {
  if (s == "inverse_log") return metrics::HumForm::InverseLog;
  if (s == "log") return metrics::HumForm::Log;
  throw py::value_error("form must be 'inverse_log' or 'log'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core routines of the earsr super-resolution toolkit";
  m.attr("__version__") = "0.1.0";

  static py::exception<Error> error(m, "EarsrError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(error_code_name(e.code())) + ": " + e.what()).c_str());
    }
  });

  m.def("default_config", [] { return RunConfig{}.to_json(); }, "Default run configuration as JSON text.");

  m.def("hu_moments", [](const Array& img, bool binarize, double threshold) {
    const auto h = metrics::hu_moments(to_image(img), {binarize, threshold});
    return std::vector<double>(h.begin(), h.end());
  }, py::arg("image"), py::arg("binarize") = false, py::arg("threshold") = 0.5);

  m.def("hum_distance", [](const Array& a, const Array& b, const std::string& form) {
    return metrics::hum_distance(to_image(a), to_image(b), form_of(form)).distance;
  }, py::arg("a"), py::arg("b"), py::arg("form") = "inverse_log");

  m.def("m_hum", [](const std::vector<Array>& xs, const std::vector<Array>& ys, const std::string& form) {
    const auto x = to_images(xs), y = to_images(ys);
    const auto r = metrics::m_hum(x, y, form_of(form));
    py::dict d;
    d["m_hum"] = r.global_min;
    d["mean_of_minima"] = r.mean_of_minima;
    d["best_pair"] = py::make_tuple(r.best_x, r.best_y);
    d["per_slice_min"] = r.per_x_min;
    return d;
  }, py::arg("xs"), py::arg("ys"), py::arg("form") = "inverse_log");

  m.def("wilcoxon_rank_sum", [](const std::vector<double>& a, const std::vector<double>& b, int exact_limit) {
    const auto r = metrics::wilcoxon_rank_sum(a, b, exact_limit);
    py::dict d;
    d["statistic"] = r.statistic;
    d["p_two_sided"] = r.p_two_sided;
    d["exact"] = r.exact;
    d["rank_sum_a"] = r.rank_sum_a;
    return d;
  }, py::arg("a"), py::arg("b"), py::arg("exact_limit") = metrics::kExactLimit);

  m.def("histogram_match", [](const Array& src, const Array& ref, int bins) {
    return to_array(patchwork::histogram_match(to_image(src), to_image(ref), bins));
  }, py::arg("src"), py::arg("ref"), py::arg("bins") = patchwork::kDefaultBins);

  m.def("cdf_gap", [](const Array& a, const Array& b) { return patchwork::cdf_gap(to_image(a), to_image(b)); });

  m.def("median_filter", [](const Array& img, int kernel) {
    return to_array(patchwork::median_filter(to_image(img), kernel));
  }, py::arg("image"), py::arg("kernel") = patchwork::kDefaultMedianKernel);

  m.def("extract_patches", [](const Array& img, int size, int stride) {
    const auto grid = patchwork::make_grid(static_cast<int>(img.shape(0)), static_cast<int>(img.shape(1)), size, stride);
    py::list patches, origins;
    for (const auto& p : patchwork::extract_patches(to_image(img), grid)) {
      patches.append(to_array(p.data));
      origins.append(py::make_tuple(p.origin.y, p.origin.x));
    }
    return py::make_tuple(patches, origins);
  }, py::arg("image"), py::arg("size") = patchwork::kDefaultPatchSize, py::arg("stride") = patchwork::kDefaultStride);

  m.def("reconstruct_slice", [](const std::vector<Array>& patches, const std::vector<Array>& lr_patches, int height,
                                int width, int size, int stride, bool post) {
    const auto grid = patchwork::make_grid(height, width, size, stride);
    std::vector<patchwork::Patch> g, l;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      g.push_back({to_image(patches[i]), i < grid.origins.size() ? grid.origins[i] : patchwork::Origin{}, {}});
    }
    for (std::size_t i = 0; i < lr_patches.size(); ++i) {
      l.push_back({to_image(lr_patches[i]), i < grid.origins.size() ? grid.origins[i] : patchwork::Origin{}, {}});
    }
    patchwork::ReconstructOptions o;
    o.post = post;
    return to_array(patchwork::reconstruct_slice(g, l, grid, o));
  }, py::arg("patches"), py::arg("lr_patches"), py::arg("height"), py::arg("width"),
     py::arg("size") = patchwork::kDefaultPatchSize, py::arg("stride") = patchwork::kDefaultStride,
     py::arg("post") = true);

  m.def("summarize_passes", [](const std::vector<Array>& passes) {
    const auto r = bayes::summarize_passes(to_images(passes));
    return py::make_tuple(to_array(r.mean), to_array(r.variance));
  });

  m.def("generate_phantom_pair", [](const std::string& spec_json) {
    const auto p = phantom::generate_pair(phantom::spec_from_json(spec_json));
    return py::make_tuple(to_array(p.hr.data), to_array(p.lr.data));
  }, py::arg("spec_json") = "{}", "Returns (hr, lr) for a phantom spec given as JSON text.");

  py::class_<networks::Generator>(m, "Generator")
      .def(py::init([](int base_width, int res_blocks, double dropout_rate, std::uint64_t seed) {
             networks::Generator g({1, base_width, res_blocks, dropout_rate});
             Rng rng(seed);
             g.init_weights(rng);
             return g;
           }),
           py::arg("base_width") = 64, py::arg("res_blocks") = 9, py::arg("dropout_rate") = 0.5, py::arg("seed") = 0)
      .def_property_readonly("param_count", [](const networks::Generator& g) { return g.params().count(); })
      .def("forward", [](const networks::Generator& g, const Array& x) {
        const Image img = to_image(x);
        Image out;
        {
          py::gil_scoped_release release;
          nn::NoGradGuard ng;
          const auto t = networks::to_tensor(std::span<const Image>(&img, 1));
          out = networks::image_at(g.forward(nn::constant(t), networks::Mode::Deterministic)->value, 0);
        }
        return to_array(out);
      }, "Dropout-free forward pass of one patch.")
      .def("mc_infer", [](const networks::Generator& g, const Array& x, int passes, std::uint64_t seed, int jobs) {
        const Image img = to_image(x);
        bayes::UncertaintyResult r;
        {
          py::gil_scoped_release release;
          r = bayes::mc_infer(g, img, passes, seed, jobs);
        }
        return py::make_tuple(to_array(r.mean), to_array(r.variance));
      }, py::arg("x"), py::arg("passes") = bayes::kDefaultPasses, py::arg("seed") = 0, py::arg("jobs") = 1,
         "Monte Carlo dropout: (predictive mean, per-pixel variance).");

  m.def("load_generator", [](const std::string& path) { return networks::load_checkpoint(path).to_hr; },
        "The LR-to-HR generator stored in a checkpoint.");
}
