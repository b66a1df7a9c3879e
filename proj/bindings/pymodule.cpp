// Python bindings for the emitter-tip pipeline. Images cross the boundary as
// 2-D uint8 numpy arrays; labels and predictions stay in micrometers, matching
// the manifest columns.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "simic/augment.hpp"
#include "simic/checkpoint.hpp"
#include "simic/classical.hpp"
#include "simic/dataset.hpp"
#include "simic/image.hpp"
#include "simic/manifest.hpp"
#include "simic/model.hpp"
#include "simic/objective.hpp"
#include "simic/ops.hpp"
#include "simic/synth.hpp"
#include "simic/tensor.hpp"
#include "simic/trainer.hpp"

namespace py = pybind11;
using namespace simic;

namespace {

py::array_t<std::uint8_t> to_array(const Image& img) {
  py::array_t<std::uint8_t> out({img.height, img.width});
  std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size());
  return out;
}

Image from_array(const py::array& a) {
  if (a.ndim() != 2)
    throw std::invalid_argument("image array must be 2-D, got " + std::to_string(a.ndim()) +
                                " dimensions");
  if (!a.dtype().is(py::dtype::of<std::uint8_t>()))
    throw std::invalid_argument("image array must have dtype uint8");
  auto arr = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
  Image img;
  img.height = static_cast<int>(arr.shape(0));
  img.width = static_cast<int>(arr.shape(1));
  img.pixels.assign(arr.data(), arr.data() + arr.size());
  return img;
}

py::list images_to_list(const std::vector<Image>& imgs) {
  py::list out;
  for (const Image& img : imgs) out.append(to_array(img));
  return out;
}

// Accepts [H,W] or [N,H,W] uint8 and returns a [N,1,H,W] tensor in [0,1].
Tensor batch_from_array(const py::array& images, int* n_out) {
  if (!images.dtype().is(py::dtype::of<std::uint8_t>()))
    throw std::invalid_argument("image array must have dtype uint8");
  auto arr =
      py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(images);
  int n = 0, h = 0, w = 0;
  if (arr.ndim() == 2) {
    n = 1;
    h = static_cast<int>(arr.shape(0));
    w = static_cast<int>(arr.shape(1));
  } else if (arr.ndim() == 3) {
    n = static_cast<int>(arr.shape(0));
    h = static_cast<int>(arr.shape(1));
    w = static_cast<int>(arr.shape(2));
  } else {
    throw std::invalid_argument("expected a [H,W] image or [N,H,W] batch, got " +
                                std::to_string(arr.ndim()) + " dimensions");
  }
  if (n < 1 || h < 1 || w < 1) throw std::invalid_argument("empty image batch");
  Tensor x({n, 1, h, w});
  const std::uint8_t* src = arr.data();
  for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] = src[i] / 255.0;
  *n_out = n;
  return x;
}

Tensor structure_from_object(const Model& m, const py::object& structure, int n) {
  if (!m.config.uses_structure()) {
    if (!structure.is_none())
      throw std::invalid_argument("full mode takes no structure input");
    return Tensor();
  }
  if (structure.is_none())
    throw std::invalid_argument(
        "half mode needs structure rows of (width_um, height_um) per image");
  auto arr = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(structure);
  if (!arr) throw std::invalid_argument("structure must be an array of (width_um, height_um)");
  std::vector<double> vals(arr.data(), arr.data() + arr.size());
  if (arr.ndim() == 1 && n == 1 && vals.size() == 2) {
    // a single (w, h) pair for a single image
  } else if (!(arr.ndim() == 2 && static_cast<int>(arr.shape(0)) == n && arr.shape(1) == 2)) {
    throw std::invalid_argument("structure must have shape [" + std::to_string(n) + ", 2]");
  }
  Tensor s({n, 2});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j)
      s.data()[i * 2 + j] = (vals[static_cast<std::size_t>(i) * 2 + j] - m.norm.mean[j]) /
                            m.norm.stdev[j];
  return s;
}

py::array_t<double> model_predict(Model& m, const py::array& images,
                                  const py::object& structure) {
  int n = 0;
  Tensor x = batch_from_array(images, &n);
  Tensor s = structure_from_object(m, structure, n);
  NoGradGuard ng;
  Tensor pred = m.forward(x, s, /*training=*/false).pred;
  const int out_dim = m.config.out_dim();
  py::array_t<double> out({n, out_dim});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < out_dim; ++t) {
      const int lab = m.config.uses_structure() ? 2 : t;
      out.mutable_data()[i * out_dim + t] =
          pred.data()[i * out_dim + t] * m.norm.stdev[lab] + m.norm.mean[lab];
    }
  return out;
}

py::array_t<double> model_attention(Model& m, const py::array& image,
                                    const py::object& structure) {
  int n = 0;
  Tensor x = batch_from_array(image, &n);
  if (n != 1) throw std::invalid_argument("attention maps are extracted per single image");
  Tensor s = structure_from_object(m, structure, 1);
  NoGradGuard ng;
  const ForwardResult fr = m.forward(x, s, /*training=*/false);
  const AttentionMaps maps = extract_attention_maps(fr, 0, "sample");
  py::array_t<double> out({maps.heads, maps.grid_h, maps.grid_w});
  std::copy(maps.weights.begin(), maps.weights.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_simic, m) {
  m.doc() =
      "Emitter-tip micrograph pipeline: synthetic rendering, manifest-driven "
      "training of attention CNN regressors, and a classical contour/circle-fit "
      "measurement oracle.";

  // ---- manifest -------------------------------------------------------------
  py::class_<SampleRecord>(m, "SampleRecord")
      .def(py::init<>())
      .def_readwrite("id", &SampleRecord::id)
      .def_readwrite("file", &SampleRecord::file)
      .def_readwrite("width_um", &SampleRecord::width_um)
      .def_readwrite("height_um", &SampleRecord::height_um)
      .def_readwrite("radius_um", &SampleRecord::radius_um)
      .def_readwrite("split", &SampleRecord::split)
      .def("__repr__", [](const SampleRecord& r) {
        return "SampleRecord(id='" + r.id + "', split='" + r.split + "')";
      });

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def(py::init<>())
      .def_readwrite("metadata", &DatasetManifest::metadata)
      .def_readwrite("records", &DatasetManifest::records)
      .def("by_split", &DatasetManifest::by_split, py::arg("split"))
      .def("__len__", [](const DatasetManifest& mf) { return mf.records.size(); });

  m.def("load_manifest", &load_manifest, py::arg("path"));
  m.def("save_manifest", &save_manifest, py::arg("path"), py::arg("manifest"));
  m.def("assign_splits", &assign_splits, py::arg("manifest"), py::arg("seed"),
        "Shuffle ids with the seed and stamp train/val/eval split labels in place.");
  m.def("split_assignment", &split_assignment, py::arg("ids"), py::arg("seed"));

  // ---- images ---------------------------------------------------------------
  m.def("read_image", [](const std::string& path) { return to_array(read_image(path)); },
        py::arg("path"));
  m.def("write_image",
        [](const std::string& path, const py::array& img) { write_image(path, from_array(img)); },
        py::arg("path"), py::arg("image"));

  // ---- synthetic generator ---------------------------------------------------
  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("image_size", &SynthSpec::image_size)
      .def_readwrite("nm_per_px", &SynthSpec::nm_per_px)
      .def_readwrite("width_min_um", &SynthSpec::width_min_um)
      .def_readwrite("width_max_um", &SynthSpec::width_max_um)
      .def_readwrite("height_min_um", &SynthSpec::height_min_um)
      .def_readwrite("height_max_um", &SynthSpec::height_max_um)
      .def_readwrite("radius_min_um", &SynthSpec::radius_min_um)
      .def_readwrite("radius_max_um", &SynthSpec::radius_max_um)
      .def_readwrite("blur_min_px", &SynthSpec::blur_min_px)
      .def_readwrite("blur_max_px", &SynthSpec::blur_max_px)
      .def_readwrite("noise_min", &SynthSpec::noise_min)
      .def_readwrite("noise_max", &SynthSpec::noise_max)
      .def_readwrite("seed", &SynthSpec::seed)
      .def("validate", &SynthSpec::validate);

  m.def("render_tip",
        [](int size, double w_px, double h_px, double r_px) {
          return to_array(render_tip(size, w_px, h_px, r_px));
        },
        py::arg("size"), py::arg("w_px"), py::arg("h_px"), py::arg("r_px"));
  m.def("tip_fits", &tip_fits, py::arg("size"), py::arg("w_px"), py::arg("h_px"),
        py::arg("r_px"));
  m.def("gaussian_blur",
        [](const py::array& img, double sigma) {
          return to_array(gaussian_blur(from_array(img), sigma));
        },
        py::arg("image"), py::arg("sigma"));
  m.def("generate_synthetic",
        [](const SynthSpec& spec, int n) {
          const SynthResult res = generate_synthetic(spec, n);
          return py::make_tuple(images_to_list(res.images), res.manifest);
        },
        py::arg("spec"), py::arg("n"),
        "Returns (images, manifest); labels are the exact generating parameters.");

  // ---- augmentation -----------------------------------------------------------
  py::class_<AugmentationSpec>(m, "AugmentationSpec")
      .def(py::init<>())
      .def_readwrite("alphas", &AugmentationSpec::alphas)
      .def_readwrite("betas", &AugmentationSpec::betas)
      .def("validate", &AugmentationSpec::validate);

  m.def("apply_brightness_contrast",
        [](const py::array& img, double alpha, double beta) {
          return to_array(apply_brightness_contrast(from_array(img), alpha, beta));
        },
        py::arg("image"), py::arg("alpha"), py::arg("beta"),
        "pixel -> round(clamp(alpha * p + beta, 0, 255))");
  m.def("augment",
        [](const py::array& img, const AugmentationSpec& spec) {
          return images_to_list(augment(from_array(img), spec));
        },
        py::arg("image"), py::arg("spec"));
  m.def("variant_id", &variant_id, py::arg("id"), py::arg("alpha_index"),
        py::arg("beta_index"));
  m.def("expand_training_set", &expand_training_set, py::arg("manifest"), py::arg("spec"));

  // ---- model ------------------------------------------------------------------
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("backbone", &ModelConfig::backbone)
      .def_readwrite("attention", &ModelConfig::attention)
      .def_readwrite("mode", &ModelConfig::mode)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("coord_channels", &ModelConfig::coord_channels)
      .def_readwrite("stage_widths", &ModelConfig::stage_widths)
      .def_readwrite("input_size", &ModelConfig::input_size)
      .def_readwrite("depth_coef", &ModelConfig::depth_coef)
      .def_readwrite("width_coef", &ModelConfig::width_coef)
      .def("validate", &ModelConfig::validate)
      .def("out_dim", &ModelConfig::out_dim)
      .def("uses_structure", &ModelConfig::uses_structure);

  py::class_<NormStats>(m, "NormStats")
      .def(py::init<>())
      .def_readwrite("mean", &NormStats::mean)
      .def_readwrite("stdev", &NormStats::stdev);

  py::class_<Model>(m, "Model")
      .def_static("build", &Model::build, py::arg("config"), py::arg("seed"))
      .def_readwrite("config", &Model::config)
      .def_readwrite("norm", &Model::norm)
      .def("parameter_count", &Model::parameter_count)
      .def("predict", &model_predict, py::arg("images"), py::arg("structure") = py::none(),
           "De-normalized predictions in micrometers, one row per image. Full "
           "mode returns (width, height, radius); half mode takes structure "
           "rows of (width_um, height_um) and returns the radius.")
      .def("attention_maps", &model_attention, py::arg("image"),
           py::arg("structure") = py::none(),
           "Per-head attention weights over the feature grid for one image, "
           "shaped [heads, grid_h, grid_w].");

  // ---- training and evaluation --------------------------------------------------
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("min_delta", &TrainConfig::min_delta)
      .def_readwrite("huber_delta", &TrainConfig::huber_delta)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("validate", &TrainConfig::validate);

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("train_loss", &EpochStats::train_loss)
      .def_readonly("val_loss", &EpochStats::val_loss);

  py::class_<TrainLog>(m, "TrainLog")
      .def_readonly("epochs", &TrainLog::epochs)
      .def_readonly("best_epoch", &TrainLog::best_epoch)
      .def_readonly("best_val", &TrainLog::best_val);

  m.def("train_model", &train_model, py::arg("model"), py::arg("manifest"),
        py::arg("image_dir"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>(),
        "Fit on the manifest's train split with early stopping on val; the "
        "model keeps the best-validation weights.");
  m.def("train_log_csv", &train_log_csv, py::arg("log"));

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("split", &MetricsReport::split)
      .def_readonly("n", &MetricsReport::n)
      .def_readonly("target_names", &MetricsReport::target_names)
      .def_readonly("rmse_um", &MetricsReport::rmse_um)
      .def_readonly("r2", &MetricsReport::r2)
      .def("__repr__", [](const MetricsReport& r) {
        return "MetricsReport(split='" + r.split + "', n=" + std::to_string(r.n) + ")";
      });

  m.def("evaluate", &evaluate, py::arg("model"), py::arg("manifest"), py::arg("image_dir"),
        py::arg("split"), py::call_guard<py::gil_scoped_release>());
  m.def("metrics_csv", &metrics_csv, py::arg("report"));
  m.def("rmse", &rmse, py::arg("y"), py::arg("yhat"));
  m.def("r_squared", &r_squared, py::arg("y"), py::arg("yhat"));

  m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
  m.def("load_checkpoint",
        [](const std::string& path, std::optional<ModelConfig> expected) {
          return load_checkpoint(path, expected ? &*expected : nullptr);
        },
        py::arg("path"), py::arg("expected") = std::nullopt);

  // ---- classical oracle -----------------------------------------------------------
  py::class_<TipMeasurement>(m, "TipMeasurement")
      .def_readonly("width_px", &TipMeasurement::width_px)
      .def_readonly("height_px", &TipMeasurement::height_px)
      .def_readonly("radius_px", &TipMeasurement::radius_px)
      .def("__repr__", [](const TipMeasurement& t) {
        return "TipMeasurement(width_px=" + format_double(t.width_px) +
               ", height_px=" + format_double(t.height_px) +
               ", radius_px=" + format_double(t.radius_px) + ")";
      });

  py::class_<CircleFit>(m, "CircleFit")
      .def_readonly("cx", &CircleFit::cx)
      .def_readonly("cy", &CircleFit::cy)
      .def_readonly("r", &CircleFit::r);

  m.def("measure_tip",
        [](const py::array& img) { return measure_tip(from_array(img)); }, py::arg("image"),
        "Segment, trace, and fit: width/height in pixels plus the apex radius.");
  m.def("fit_circle", &fit_circle, py::arg("points"),
        "Algebraic least-squares circle through (x, y) points.");

  m.attr("contour_radius_bias") = kContourRadiusBias;
  m.attr("__version__") = "0.1.0";
}
