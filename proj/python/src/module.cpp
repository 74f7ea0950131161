#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gencond/condense.hpp"
#include "gencond/errors.hpp"
#include "gencond/eval.hpp"
#include "gencond/losses.hpp"
#include "gencond/run_config.hpp"

namespace py = pybind11;
using namespace gencond;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::span<const double>(a.data(), static_cast<size_t>(a.size())));
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

RunConfig config_of(const std::vector<std::string>& overrides, const std::optional<std::filesystem::path>& file) {
  return resolve_config(file, overrides);
}

SyntheticSet make_set(const Array& images, std::vector<int> labels, int num_classes) {
  SyntheticSet s;
  s.images = from_numpy(images);
  s.labels = std::move(labels);
  s.num_classes = num_classes;
  s.ipc = num_classes > 0 ? static_cast<int>(s.labels.size()) / num_classes : 0;
  return s;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["mean"] = r.mean;
  d["std"] = r.std;
  d["per_run"] = r.per_run_acc;
  d["arch"] = r.arch;
  d["ipc"] = r.ipc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gencond, m) {
  m.doc() = "Generative dataset condensation core";

  auto base = py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  (void)base;

  py::class_<LabeledDataset>(m, "Dataset")
      .def_readonly("name", &LabeledDataset::name)
      .def_readonly("num_classes", &LabeledDataset::num_classes)
      .def_property_readonly("images", [](const LabeledDataset& d) { return to_numpy(d.images); })
      .def_readonly("labels", &LabeledDataset::labels)
      .def_property_readonly("split", [](const LabeledDataset& d) { return std::string(to_string(d.split)); })
      .def("__len__", &LabeledDataset::size);

  m.def(
      "toy_dataset",
      [](int num_classes, int per_class, int image_size, uint64_t seed, const std::string& split) {
        return make_toy_dataset(num_classes, per_class, image_size, seed, parse_split(split));
      },
      py::arg("num_classes") = 3, py::arg("per_class") = 100, py::arg("image_size") = 16, py::arg("seed") = 7,
      py::arg("split") = "train");

  m.def(
      "load_dataset",
      [](const std::vector<std::string>& overrides, const std::string& split,
         const std::optional<std::filesystem::path>& config) {
        const RunConfig rc = config_of(overrides, config);
        return load_dataset(rc.dataset, rc.data_root, parse_split(split), rc.toy);
      },
      py::arg("overrides") = std::vector<std::string>{}, py::arg("split") = "train", py::arg("config") = py::none());

  m.def(
      "resolve_config",
      [](const std::vector<std::string>& overrides, const std::optional<std::filesystem::path>& config) {
        return json_to_py(config_of(overrides, config).tree);
      },
      py::arg("overrides") = std::vector<std::string>{}, py::arg("config") = py::none());

  py::class_<CondensedModel>(m, "CondensedModel")
      .def_readonly("dataset", &CondensedModel::dataset)
      .def_readonly("num_classes", &CondensedModel::num_classes)
      .def_property_readonly("codebook_size", [](const CondensedModel& cm) { return cm.codebook.size(); })
      .def_property_readonly("config", [](const CondensedModel& cm) { return json_to_py(cm.config); })
      .def("param_count", &CondensedModel::generative_param_count)
      .def(
          "synthesize",
          [](const CondensedModel& cm, int ipc) {
            const SyntheticSet s = synthesize_set(cm, ipc);
            return py::make_tuple(to_numpy(s.images), s.labels);
          },
          py::arg("ipc"))
      .def("save", [](CondensedModel& cm, const std::filesystem::path& p) { save_checkpoint(cm, p); });

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "condense",
      [](const LabeledDataset& train, const std::vector<std::string>& overrides,
         const std::optional<std::filesystem::path>& config, const std::function<void(py::dict)>& on_step) {
        const RunConfig rc = config_of(overrides, config);
        std::function<void(const StepRecord&)> cb;
        if (on_step) {
          cb = [&](const StepRecord& r) {
            py::gil_scoped_acquire gil;
            on_step(json_to_py(to_json(r)));
          };
        }
        CondenseResult result = [&] {
          py::gil_scoped_release release;
          return condense(train, rc.condense, cb);
        }();
        return std::move(result.model);
      },
      py::arg("train"), py::arg("overrides") = std::vector<std::string>{}, py::arg("config") = py::none(),
      py::arg("on_step") = nullptr);

  m.def(
      "evaluate",
      [](const Array& images, const std::vector<int>& labels, int num_classes, const LabeledDataset& test,
         const std::vector<std::string>& overrides) {
        const RunConfig rc = config_of(overrides, std::nullopt);
        const SyntheticSet s = make_set(images, labels, num_classes);
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = evaluate(s, test, rc.eval);
        }
        return report_dict(r);
      },
      py::arg("images"), py::arg("labels"), py::arg("num_classes"), py::arg("test"),
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "coreset",
      [](const LabeledDataset& train, const std::string& method, int ipc, const CondensedModel& model, uint64_t seed) {
        const SyntheticSet s = coreset_baseline(train, parse_coreset_method(method), ipc, model.extractor, seed);
        return py::make_tuple(to_numpy(s.images), s.labels, s.source);
      },
      py::arg("train"), py::arg("method"), py::arg("ipc"), py::arg("model"), py::arg("seed") = 0);

  m.def(
      "herding_select",
      [](const Array& feats, std::vector<int64_t> order, int count) { return herding_select(from_numpy(feats), order, count); },
      py::arg("features"), py::arg("order"), py::arg("count"));
  m.def(
      "kcenter_select",
      [](const Array& feats, std::vector<int64_t> order, int count) { return kcenter_select(from_numpy(feats), order, count); },
      py::arg("features"), py::arg("order"), py::arg("count"));

  m.def(
      "param_count",
      [](const std::string& format, int num_classes, int ipc, std::tuple<int, int, int> image, const std::vector<std::string>& overrides) {
        CondensedFormat f;
        if (format == "pixel") {
          f = CondensedFormat::Pixel;
        } else if (format == "generative") {
          f = CondensedFormat::Generative;
        } else {
          throw ArgumentError("format must be 'pixel' or 'generative'");
        }
        const auto [c, h, w] = image;
        return param_count(f, num_classes, ipc, ImageShape{c, h, w}, config_of(overrides, std::nullopt).condense.model);
      },
      py::arg("format"), py::arg("num_classes"), py::arg("ipc"), py::arg("image"),
      py::arg("overrides") = std::vector<std::string>{"dataset.name=cifar10"});

  auto losses = m.def_submodule("losses", "Scalar loss evaluation");
  losses.def(
      "adversarial",
      [](const Array& real, const Array& fake) {
        const AdvLosses l = adv_losses(Var(from_numpy(real)), Var(from_numpy(fake)));
        return py::make_tuple(l.d_loss.item(), l.g_loss.item());
      },
      py::arg("real_probs"), py::arg("fake_probs"));
  losses.def(
      "classification",
      [](const Array& logits, const std::vector<int>& targets) { return cls_loss(Var(from_numpy(logits)), targets).item(); },
      py::arg("logits"), py::arg("targets"));
  losses.def(
      "intra",
      [](const Array& feat, const Array& anchor, const Array& others, double tau) {
        return intra_loss(from_numpy(feat), from_numpy(anchor), from_numpy(others), tau);
      },
      py::arg("feature"), py::arg("anchor"), py::arg("others"), py::arg("tau") = 0.1);
  losses.def(
      "inter", [](const Array& means, double tau_m) { return inter_loss(Var(from_numpy(means)), tau_m).item(); },
      py::arg("class_means"), py::arg("tau_m") = 1.0);

  m.attr("__version__") = build_version();
}
