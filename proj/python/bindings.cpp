#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>
#include <vector>

#include "acmseg/harness.hpp"
#include "acmseg/ops.hpp"

namespace py = pybind11;
using namespace acm;

namespace {

Tensor to_tensor(const py::array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (py::isinstance<py::array_t<float>>(a)) {
    auto c = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
    std::vector<float> v(c.data(), c.data() + c.size());
    return Tensor::from<float>(std::move(shape), std::move(v));
  }
  auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c) throw py::type_error("expected a numeric array");
  std::vector<double> v(c.data(), c.data() + c.size());
  return Tensor::from<double>(std::move(shape), std::move(v));
}

py::array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  return dispatch(t.dtype(), [&]<typename T>() -> py::array {
    py::array_t<T> out(shape);
    const auto d = t.data<T>();
    if (!d.empty()) std::memcpy(out.mutable_data(), d.data(), d.size() * sizeof(T));
    return out;
  });
}

train::Mask to_mask(const py::array& a) {
  auto c = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c || c.ndim() != 2) throw py::value_error("mask must be a 2-D array");
  train::Mask m{c.shape(0), c.shape(1), std::vector<std::uint8_t>(c.data(), c.data() + c.size())};
  for (auto& v : m.data) v = v != 0;
  return m;
}

model::ModelConfig config_from(const py::dict& d) {
  model::ModelConfig c;
  for (auto [k, v] : d) {
    const std::string key = py::str(k);
    std::string value;
    if (py::isinstance<py::bool_>(v)) value = v.cast<bool>() ? "true" : "false";
    else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (auto item : v) value += (value.empty() ? "" : ",") + std::string(py::str(item));
    } else value = py::str(v);
    if (!model::set_config_key(c, key, value)) throw py::key_error("unknown model key '" + key + "'");
  }
  c.validate();
  return c;
}

py::dict config_to(const model::ModelConfig& c) {
  py::dict d;
  d["base_width"] = c.base_width;
  d["n_vss"] = c.n_vss;
  d["num_classes"] = c.num_classes;
  d["input_size"] = c.input_size;
  d["use_mswt"] = c.use_mswt;
  d["use_vss"] = c.use_vss;
  d["d_state"] = c.d_state;
  d["expansion_factor"] = c.expansion_factor;
  d["wavelet_levels"] = c.wavelet_levels;
  d["depths"] = py::make_tuple(c.depths[0], c.depths[1], c.depths[2]);
  d["vss_dim"] = c.vss_dim;
  d["share_scan_proj"] = c.share_scan_proj;
  return d;
}

class PyModel {
 public:
  PyModel(const py::dict& cfg, std::uint64_t seed) : m_(model::Model::build(config_from(cfg), seed)) {}
  explicit PyModel(std::unique_ptr<model::Model> m) : m_(std::move(m)) {}

  py::array forward(const py::array& x) {
    const Tensor t = to_tensor(x).to(m_->dtype());
    return to_numpy(m_->forward(t));
  }
  py::dict encode(const py::array& x) {
    const auto f = m_->encode(to_tensor(x).to(m_->dtype()));
    py::dict d;
    d["f1"] = to_numpy(f.f1);
    d["f2"] = to_numpy(f.f2);
    d["f3"] = to_numpy(f.f3);
    d["f4"] = to_numpy(f.f4);
    return d;
  }
  py::array predict(const py::array& x) {
    const Tensor logits = m_->forward(to_tensor(x).to(m_->dtype()));
    const auto labels = train::predict_labels(logits);
    std::vector<py::ssize_t> shape{logits.shape()[0], logits.shape()[2], logits.shape()[3]};
    py::array_t<std::int32_t> out(shape);
    std::memcpy(out.mutable_data(), labels.data(), labels.size() * sizeof(std::int32_t));
    return out;
  }
  model::Model& get() { return *m_; }

 private:
  std::unique_ptr<model::Model> m_;
};

train::Dataset to_dataset(const py::array& images, const py::array& masks) {
  const Tensor x = to_tensor(images).to(DType::f32), y = to_tensor(masks).to(DType::f32);
  if (x.dim() != 4 || y.dim() != 3 || x.shape()[0] != y.shape()[0]) {
    throw py::value_error("expected images [n,3,h,w] and masks [n,h,w]");
  }
  train::Dataset d;
  for (std::int64_t i = 0; i < x.shape()[0]; ++i) {
    d.images.push_back(reshape(slice(x, 0, i, 1), {x.shape()[1], x.shape()[2], x.shape()[3]}));
    d.masks.push_back(reshape(slice(y, 0, i, 1), {y.shape()[1], y.shape()[2]}));
  }
  return d;
}

py::dict report_dict(const train::MetricsReport& r) {
  py::dict d;
  d["mean_dsc"] = r.mean_dsc;
  d["mean_hd95"] = r.mean_hd95;
  d["class_dsc"] = r.class_dsc;
  d["class_hd95"] = r.class_hd95;
  d["cases"] = r.cases;
  d["undefined_hd95"] = r.undefined_hd95;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "acmseg core bindings";

  static py::exception<Error> error(m, "AcmError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), e.what());
    }
  });

  m.def("dwt2_haar", [](const py::array& x) { return to_numpy(wavelet::dwt2_haar_packed(to_tensor(x))); },
        "[n,c,h,w] -> [n,c,4,h/2,w/2] (ll, lh, hl, hh)");
  m.def("idwt2_haar", [](const py::array& x) { return to_numpy(wavelet::idwt2_haar_packed(to_tensor(x))); });
  m.def("selective_scan",
        [](const py::array& u, const py::array& delta, const py::array& A, const py::array& B, const py::array& C,
           const py::array& D) {
          return to_numpy(ssm::selective_scan_core(to_tensor(u), to_tensor(delta), to_tensor(A), to_tensor(B),
                                                   to_tensor(C), to_tensor(D)));
        },
        py::arg("u"), py::arg("delta"), py::arg("A"), py::arg("B"), py::arg("C"), py::arg("D"));
  m.def("scan_order", &ssm::scan_order, py::arg("direction"), py::arg("h"), py::arg("w"));
  m.def("scan_expand", [](const py::array& x) { return to_numpy(ssm::scan_expand(to_tensor(x))); });
  m.def("scan_merge", [](const py::array& s, std::int64_t h, std::int64_t w) {
    return to_numpy(ssm::scan_merge(to_tensor(s), h, w));
  });

  m.def("dsc", [](const py::array& p, const py::array& g) { return train::dsc_metric(to_mask(p), to_mask(g)); });
  m.def("hd95",
        [](const py::array& p, const py::array& g, std::array<double, 2> spacing) {
          return train::hd95(to_mask(p), to_mask(g), spacing);
        },
        py::arg("pred"), py::arg("gt"), py::arg("spacing") = std::array<double, 2>{1.0, 1.0});
  m.def("loss",
        [](const py::array& logits, const py::array& target, double alpha) {
          const Tensor lg = to_tensor(logits);
          return train::total_loss(lg, to_tensor(target).to(lg.dtype()), {alpha, 1.0}).item();
        },
        py::arg("logits"), py::arg("target"), py::arg("alpha") = 0.5);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) {
        return std::make_unique<PyModel>(model::load_checkpoint(path).model);
      })
      .def("save", [](PyModel& p, const std::string& path) { model::save_checkpoint(path, p.get()); })
      .def("forward", &PyModel::forward)
      .def("__call__", &PyModel::forward)
      .def("encode", &PyModel::encode)
      .def("predict", &PyModel::predict)
      .def("param_count", [](PyModel& p) { return p.get().count_params(); })
      .def_property_readonly("config", [](PyModel& p) { return config_to(p.get().config()); })
      .def("train", [](PyModel& p) { p.get().mode = nn::Mode::train; })
      .def("eval", [](PyModel& p) { p.get().mode = nn::Mode::eval; })
      .def(
          "fit",
          [](PyModel& p, const py::array& images, const py::array& masks, std::int64_t steps, std::int64_t batch,
             double lr, std::uint64_t seed) {
            train::TrainConfig tc;
            tc.max_steps = steps;
            tc.epochs = steps;
            tc.batch = batch;
            tc.lr = lr;
            tc.seed = seed;
            tc.eval_every = steps + 1;
            const train::Dataset d = to_dataset(images, masks);
            py::gil_scoped_release release;
            return train::train_loop(p.get(), d, {}, tc).step_losses;
          },
          py::arg("images"), py::arg("masks"), py::arg("steps") = 100, py::arg("batch") = 4,
          py::arg("lr") = 5e-4, py::arg("seed") = 0)
      .def(
          "evaluate",
          [](PyModel& p, const py::array& images, const py::array& masks) {
            return report_dict(train::evaluate(p.get(), to_dataset(images, masks)));
          },
          py::arg("images"), py::arg("masks"));

  m.def("param_count", [](const py::dict& cfg) { return model::Model::build(config_from(cfg), 0)->count_params(); });
  m.def("read_tensor", [](const std::string& path) { return to_numpy(harness::read_tensor(path)); });
  m.def("write_tensor", [](const std::string& path, const py::array& a) { harness::write_tensor(path, to_tensor(a)); });
  m.def("phantom", [](std::uint64_t seed, std::int64_t index, std::int64_t size, std::int64_t classes) {
    const auto p = harness::make_phantom(seed, index, size, classes);
    return py::make_tuple(to_numpy(p.image), to_numpy(p.mask));
  }, py::arg("seed"), py::arg("index"), py::arg("size") = 64, py::arg("num_classes") = 4);
  m.def("gen_phantoms", [](std::uint64_t seed, std::int64_t count, std::int64_t size, std::int64_t classes,
                           const std::string& out) {
    return harness::gen_phantoms(seed, count, size, classes, out).entries.size();
  });
  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "acmseg");
    std::vector<const char*> argv;
    for (auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = harness::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return py::make_tuple(rc, out.str(), err.str());
  });
}
