#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mseg/checkpoint.hpp"
#include "mseg/cluster.hpp"
#include "mseg/config.hpp"
#include "mseg/data.hpp"
#include "mseg/errors.hpp"
#include "mseg/losses.hpp"
#include "mseg/parallel.hpp"
#include "mseg/swin.hpp"
#include "mseg/train.hpp"

namespace py = pybind11;
using namespace mseg;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a, DType dtype = DType::f64) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data), dtype);
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  const auto d = t.data();
  std::copy(d.begin(), d.end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const I32Array& a) {
  if (a.ndim() != 3) throw ValidationError("labels must be [B,H,W]");
  return make_label_map({a.shape(0), a.shape(1), a.shape(2)}, {a.data(), a.data() + a.size()});
}

ModelConfig model_config(const std::string& json) { return parse_run_config("{\"model\": " + json + "}").model; }

py::dict load_report(const LoadReport& r) {
  py::dict d;
  d["loaded"] = r.loaded;
  d["skipped"] = r.skipped;
  d["mismatched"] = r.mismatched;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mseg, m) {
  m.doc() = "Hybrid CNN/Swin segmentation core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("set_num_threads", &set_num_threads, py::arg("n"));

  m.def(
      "cosine_warmup_lr",
      [](int epoch, int epochs, int warmup_epochs, double base_lr, double min_lr) {
        PretrainSchedule s;
        s.epochs = epochs;
        s.warmup_epochs = warmup_epochs;
        s.base_lr = base_lr;
        s.min_lr = min_lr;
        s.validate();
        return cosine_warmup_lr(epoch, s);
      },
      py::arg("epoch"), py::arg("epochs") = 30, py::arg("warmup_epochs") = 5, py::arg("base_lr") = 1e-3,
      py::arg("min_lr") = 0.0);
  m.def("early_stop", &early_stop, py::arg("history"), py::arg("patience"), py::arg("min_delta") = 0.0);
  m.def(
      "tile_offsets",
      [](int extent, int tile, const std::string& policy) { return tile_offsets(extent, tile, parse_tile_policy(policy)); },
      py::arg("extent"), py::arg("tile"), py::arg("policy") = "cover");

  m.def(
      "window_partition", [](const F64Array& x, int window) { return to_array(window_partition(to_tensor(x), window)); },
      py::arg("x"), py::arg("window"));
  m.def(
      "window_reverse",
      [](const F64Array& w, int window, std::int64_t H, std::int64_t W) {
        return to_array(window_reverse(to_tensor(w), window, H, W));
      },
      py::arg("windows"), py::arg("window"), py::arg("height"), py::arg("width"));

  m.def(
      "combined_loss",
      [](const F64Array& logits, const I32Array& labels, std::vector<double> weights) {
        const auto terms = combined_loss_terms(to_tensor(logits), to_labels(labels), weights);
        py::dict d;
        d["total"] = terms.total.item();
        d["bce"] = terms.bce.item();
        d["dice"] = terms.dice.item();
        return d;
      },
      py::arg("logits"), py::arg("labels"), py::arg("weights"));
  m.def(
      "class_weights",
      [](const I32Array& labels, int num_classes) {
        return class_weights(label_histogram({labels.data(), static_cast<std::size_t>(labels.size())}, num_classes));
      },
      py::arg("labels"), py::arg("num_classes"));
  m.def(
      "iou",
      [](const I32Array& pred, const I32Array& target, int num_classes) {
        if (pred.size() != target.size()) throw ValidationError("pred and target differ in size");
        const auto r = iou({pred.data(), static_cast<std::size_t>(pred.size())},
                           {target.data(), static_cast<std::size_t>(target.size())}, num_classes);
        return py::make_tuple(r.per_class, r.mean);
      },
      py::arg("pred"), py::arg("target"), py::arg("num_classes"));
  m.def(
      "topk_accuracy",
      [](const F64Array& logits, const I32Array& labels, int k) {
        return topk_accuracy(to_tensor(logits), {labels.data(), static_cast<std::size_t>(labels.size())}, k);
      },
      py::arg("logits"), py::arg("labels"), py::arg("k"));
  m.def(
      "kmeans",
      [](const F64Array& features, int k, std::uint64_t seed, int max_iter) {
        const auto r = kmeans(to_tensor(features), k, seed, max_iter);
        py::array_t<std::int32_t> assign(std::vector<py::ssize_t>{static_cast<py::ssize_t>(r.assignments.size())});
        std::copy(r.assignments.begin(), r.assignments.end(), assign.mutable_data());
        return py::make_tuple(assign, r.inertia, r.iterations);
      },
      py::arg("features"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 300);

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        py::dict d;
        for (const auto& nt : load_checkpoint(path).tensors) d[py::str(nt.name)] = to_array(nt.tensor);
        return d;
      },
      py::arg("path"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return std::make_unique<Model>(model_config(config_json), seed);
           }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_property_readonly("variant", [](const Model& self) { return variant_name(self.config().variant); })
      .def_property_readonly("num_classes", [](const Model& self) { return self.config().num_classes; })
      .def_property_readonly("input_size", [](const Model& self) { return self.config().input_size; })
      .def("parameter_names", [](const Model& self) { return self.parameters().names(); })
      .def("num_parameters", [](const Model& self) { return self.parameters().total_numel(); })
      .def(
          "forward",
          [](const Model& self, const F64Array& x) {
            NoGradGuard ng;
            ForwardContext ctx;
            return to_array(self.forward(to_tensor(x, self.config().dtype), ctx));
          },
          py::arg("images"))
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(checkpoint_from(self.parameters()), p); },
           py::arg("path"))
      .def(
          "load",
          [](Model& self, const std::filesystem::path& p, const std::string& policy) {
            return load_report(load_pretrained(self, load_checkpoint(p), parse_load_policy(policy)));
          },
          py::arg("path"), py::arg("policy") = "full")
      .def(
          "predict",
          [](const Model& self, const std::filesystem::path& image, const std::filesystem::path& out) {
            predict(self, image, out);
          },
          py::arg("image_path"), py::arg("out_path"));
}
