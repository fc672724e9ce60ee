#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lsnet/analysis.hpp"
#include "lsnet/bench.hpp"
#include "lsnet/train.hpp"

namespace py = pybind11;
using namespace lsnet;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  if (a.ndim() != 4) throw ConfigError("expected a 4-d NCHW array");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                static_cast<int>(a.shape(3))};
  return Tensor<T>(s, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  const Shape& s = t.shape();
  Array<T> out({s.n, s.c, s.h, s.w});
  std::copy(t.vec().begin(), t.vec().end(), out.mutable_data());
  return out;
}

py::array_t<float> heat_array(const HeatMap& m) {
  py::array_t<float> out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

// f32 model: spec plus its parameter store.
struct Model {
  ModelSpec spec;
  ParamStore<float> store;
};

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["loss"] = m.loss;
  d["top1"] = m.top1;
  return d;
}

py::tuple dataset_arrays(const Dataset& d) {
  py::array_t<std::uint8_t> images({d.shape.n, d.shape.c, d.shape.h, d.shape.w});
  std::copy(d.pixels.begin(), d.pixels.end(), images.mutable_data());
  py::array_t<int> labels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(d.labels.size())});
  std::copy(d.labels.begin(), d.labels.end(), labels.mutable_data());
  return py::make_tuple(images, labels);
}

Dataset dataset_from(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& images,
                     const std::vector<int>& labels, int classes, const Dataset& stats) {
  if (images.ndim() != 4) throw ConfigError("images must be (N, C, H, W) uint8");
  Dataset d;
  d.shape = {static_cast<int>(images.shape(0)), static_cast<int>(images.shape(1)),
             static_cast<int>(images.shape(2)), static_cast<int>(images.shape(3))};
  d.pixels.assign(images.data(), images.data() + images.size());
  d.labels = labels;
  d.classes = classes;
  d.mean = stats.mean;
  d.std = stats.std;
  d.validate();
  return d;
}

}  // namespace

PYBIND11_MODULE(_lsnet, m) {
  m.doc() = "LSNet core: LS convolution, model construction, training and analysis";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<IncompatibleError>(m, "IncompatibleError", error.ptr());
  py::register_exception<LookupError>(m, "LookupError", error.ptr());
  py::register_exception<ArithmeticError>(m, "ArithmeticError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());

  py::class_<ModelSpec>(m, "ModelSpec")
      .def_static("builtin", &ModelSpec::builtin, py::arg("name"))
      .def_static("from_text", [](const std::string& t) { return ModelSpec::from_text(t); })
      .def_static("load", &ModelSpec::load)
      .def("to_text", &ModelSpec::to_text)
      .def("digest", &ModelSpec::digest)
      .def_readwrite("name", &ModelSpec::name)
      .def_readwrite("classes", &ModelSpec::classes)
      .def_property_readonly("channels", [](const ModelSpec& s) {
        return std::vector<int>{s.stages[0].channels, s.stages[1].channels, s.stages[2].channels, s.stages[3].channels};
      })
      .def_property_readonly("blocks", [](const ModelSpec& s) {
        return std::vector<int>{s.stages[0].blocks, s.stages[1].blocks, s.stages[2].blocks, s.stages[3].blocks};
      })
      .def("ablate", [](ModelSpec s, bool no_dw, bool no_se, bool no_lkp_dw) {
        s.ablation = {no_dw, no_se, no_lkp_dw};
        s.validate();
        return s;
      }, py::arg("no_dw") = false, py::arg("no_se") = false, py::arg("no_lkp_dw") = false)
      .def("__repr__", [](const ModelSpec& s) { return "<ModelSpec " + s.name + ">"; });

  m.def("count_macs", [](const ModelSpec& spec, int h, int w) {
    const MacReport r = count_macs(spec, h, w);
    py::list entries;
    for (const auto& e : r.entries) entries.append(py::make_tuple(e.name, e.kind, e.macs, e.params));
    py::dict d;
    d["macs"] = r.total_macs;
    d["params"] = r.total_params;
    d["entries"] = entries;
    d["table"] = r.table();
    return d;
  }, py::arg("spec"), py::arg("height") = 224, py::arg("width") = 224);

  m.def("ls_conv_macs", [](int c, int kl, int ks, int g, int h, int w, bool large_dw) {
    const LsConvMacs r = ls_conv_macs(LsConvConfig{c, kl, ks, g, large_dw}, h, w);
    py::dict d;
    d["pointwise"] = r.pointwise;
    d["depthwise"] = r.depthwise;
    d["aggregation"] = r.aggregation;
    d["closed_form"] = r.closed_form;
    d["itemized"] = r.itemized();
    return d;
  }, py::arg("channels"), py::arg("large_kernel"), py::arg("small_kernel"), py::arg("groups"), py::arg("height"),
     py::arg("width"), py::arg("large_dw") = true);

  m.def("ska_forward", [](const Array<double>& x, const Array<double>& w, int kernel, int groups) {
    return to_array(ska_forward_fast(to_tensor(x), to_tensor(w), kernel, groups));
  }, py::arg("x"), py::arg("weights"), py::arg("kernel"), py::arg("groups"));
  m.def("ska_forward_naive", [](const Array<double>& x, const Array<double>& w, int kernel, int groups) {
    return to_array(ska_forward_naive(to_tensor(x), to_tensor(w), kernel, groups));
  }, py::arg("x"), py::arg("weights"), py::arg("kernel"), py::arg("groups"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const ModelSpec& spec, std::uint64_t seed) { return Model{spec, build_model<float>(spec, seed)}; }),
           py::arg("spec"), py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& path, const ModelSpec& spec) {
        return Model{spec, load_weights<float>(path, spec)};
      })
      .def_readonly("spec", &Model::spec)
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_weights(self.store, self.spec, p); })
      .def("num_params", [](const Model& self) { return count_params(self.store); })
      .def("names", [](const Model& self) {
        std::vector<std::string> out;
        for (const auto& [name, e] : self.store.entries()) out.push_back(name);
        return out;
      })
      .def("get", [](const Model& self, const std::string& name) { return to_array(self.store.get(name)); })
      .def("set", [](Model& self, const std::string& name, const Array<float>& value) {
        Tensor<float>& t = self.store.get_mut(name);
        Tensor<float> v = to_tensor(value);
        require_same_shape(t.shape(), v.shape(), name);
        t = std::move(v);
      })
      .def("forward", [](const Model& self, const Array<float>& images) {
        Tensor<float> x = to_tensor(images);
        Tensor<float> logits;
        {
          py::gil_scoped_release release;
          logits = forward_classify(self.store, self.spec, x);
        }
        const Shape& s = logits.shape();
        py::array_t<float> out({s.n, s.c});
        std::copy(logits.vec().begin(), logits.vec().end(), out.mutable_data());
        return out;
      }, py::arg("images"))
      .def("erf", [](const Model& self, const Array<double>& image, int stage, int row, int col) {
        const ParamStore<double> s64 = self.store.cast<double>();
        return heat_array(erf_map(s64, self.spec, to_tensor(image), stage, row, col));
      }, py::arg("image"), py::arg("stage") = 2, py::arg("row") = -1, py::arg("col") = -1)
      .def("aggregation_weights", [](const Model& self, const Array<float>& image, int stage, int layer, bool delta) {
        const AggregationMap a = aggregation_weights(self.store, self.spec, to_tensor(image), stage, layer, delta);
        return py::make_tuple(heat_array(a.upsampled), a.mass);
      }, py::arg("image"), py::arg("stage") = 2, py::arg("layer") = 0, py::arg("delta") = false);

  m.def("blobs10", [](bool train, std::uint64_t seed) { return dataset_arrays(make_blobs10(train, seed)); },
        py::arg("train") = true, py::arg("seed") = 0);

  m.def("train", [](Model& model, int epochs, std::uint64_t seed, double lr, int batch_size, bool evaluate_blobs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.warmup_epochs = std::min(cfg.warmup_epochs, epochs - 1);
    cfg.seed = seed;
    cfg.lr = lr;
    cfg.batch_size = batch_size;
    const Dataset train = make_blobs10(true, 0), test = make_blobs10(false, 0);
    py::list history;
    py::gil_scoped_release release;
    Trainer<float> trainer(model.store, model.spec, cfg);
    for (int e = 0; e < epochs; ++e) {
      const Metrics tr = trainer.train_epoch(train);
      const Metrics te = evaluate_blobs ? evaluate(model.store, model.spec, test) : Metrics{};
      py::gil_scoped_acquire acquire;
      py::dict row;
      row["epoch"] = e + 1;
      row["train"] = metrics_dict(tr);
      if (evaluate_blobs) row["test"] = metrics_dict(te);
      history.append(row);
    }
    return history;
  }, py::arg("model"), py::arg("epochs"), py::arg("seed") = 0, py::arg("lr") = 1e-3, py::arg("batch_size") = 32,
     py::arg("evaluate") = true, "Trains on blobs10 in place and returns per-epoch metrics.");

  m.def("evaluate", [](const Model& model, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& images,
                       const std::vector<int>& labels) {
    const Dataset d = dataset_from(images, labels, model.spec.classes, make_blobs10(true, 0));
    return metrics_dict(evaluate(model.store, model.spec, d));
  }, py::arg("model"), py::arg("images"), py::arg("labels"),
     "Infer-mode loss and top-1 on uint8 images normalized with blobs10 statistics.");

  m.def("gradcheck", [](const ModelSpec& spec, double tolerance, int height, std::uint64_t seed) {
    GradcheckConfig cfg;
    cfg.tolerance = tolerance;
    cfg.height = cfg.width = height;
    cfg.seed = seed;
    GradcheckReport r;
    {
      py::gil_scoped_release release;
      r = gradcheck_model(spec, cfg);
    }
    py::dict d;
    d["passed"] = r.passed();
    d["checked"] = r.checked;
    d["max_rel_error"] = r.max_rel_error;
    d["culprit"] = r.culprit;
    py::dict worst;
    for (const auto& [kind, s] : r.worst_by_kind) worst[py::str(kind)] = s.rel_error;
    d["worst_by_kind"] = worst;
    d["summary"] = r.summary();
    return d;
  }, py::arg("spec"), py::arg("tolerance") = 1e-4, py::arg("height") = 96, py::arg("seed") = 0);

  m.def("bench_ska", [](std::vector<int> shape, int kernel, int groups, int repeats) {
    if (shape.size() != 4) throw ConfigError("shape must have four extents");
    const SkaBench b = bench_ska({shape[0], shape[1], shape[2], shape[3]}, kernel, groups, repeats);
    py::dict d;
    d["fast_s"] = b.fast.median_s;
    d["naive_s"] = b.naive.median_s;
    d["speedup"] = b.speedup();
    d["max_abs_diff"] = b.max_abs_diff;
    return d;
  }, py::arg("shape") = std::vector<int>{1, 64, 64, 64}, py::arg("kernel") = 3, py::arg("groups") = 8,
     py::arg("repeats") = 9);
}
