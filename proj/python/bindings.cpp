#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <filesystem>
#include <span>

#include "mismatch/calibration.hpp"
#include "mismatch/cli.hpp"
#include "mismatch/config.hpp"
#include "mismatch/erf.hpp"
#include "mismatch/error.hpp"
#include "mismatch/mmt.hpp"
#include "mismatch/synth.hpp"
#include "mismatch/train.hpp"

namespace py = pybind11;
using namespace mismatch;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Array to_array(const Shape& shape, std::span<const double> values) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  Array out(dims);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Shape shape_of(const Array& a) {
  Shape s;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) s.push_back(static_cast<std::size_t>(a.shape(i)));
  return s;
}

py::list split_to_list(const std::vector<Sample>& split) {
  py::list out;
  for (const auto& s : split) {
    py::dict d;
    d["id"] = s.id;
    d["image"] = to_array({s.image.height, s.image.width}, s.image.values);
    d["mask"] = to_array({s.mask.height, s.mask.width}, s.mask.values);
    out.append(d);
  }
  return out;
}

class Model {
 public:
  explicit Model(const std::filesystem::path& path) : model_(load_model(path).model) {}

  Array predict(const Array& images) const {
    const Tensor x = Tensor::from(shape_of(images), {images.data(), images.data() + images.size()});
    Prediction p;
    {
      py::gil_scoped_release release;
      p = mismatch::predict(model_, x);
    }
    return to_array(p.prob.shape(), p.prob.data());
  }

  std::size_t members() const { return model_.members.size(); }

 private:
  AveragedModel model_;
};

}  // namespace

PYBIND11_MODULE(_mismatch, m) {
  m.doc() = "Dual-decoder semi-supervised segmentation toolkit";

  m.def("analytic_erf_ratio_pasb", &analytic_erf_ratio_pasb, py::arg("K"), py::arg("K_prime"), py::arg("n"));
  m.def(
      "analytic_erf_ratio_nasb",
      [](std::size_t n, std::size_t skip_units, double p) { return analytic_erf_ratio_nasb(n, {skip_units, p}); },
      py::arg("n"), py::arg("skip_units") = 2, py::arg("p") = 0.5);
  m.def(
      "path_weights", [](std::size_t skip_units, double p) { return path_weights({skip_units, p}); },
      py::arg("skip_units") = 2, py::arg("p") = 0.5);
  m.def(
      "measure_plain_erf",
      [](std::size_t depth, std::vector<std::uint64_t> seeds, std::size_t input_size, const std::string& mode) {
        const ErfReport r = measure_erf(plain_stack(depth), parse_erf_mode(mode), seeds, input_size);
        py::dict d;
        d["erf_size"] = r.erf_size;
        d["support_extent"] = r.support_extent;
        d["per_seed_size"] = r.per_seed_size;
        d["gradient_map"] = to_array({r.height, r.width}, r.gradient_map);
        return d;
      },
      py::arg("depth"), py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2, 3, 4}, py::arg("input_size") = 32,
      py::arg("mode") = "linearized");

  m.def("iou", [](const Array& p, const Array& t) { return iou(view(p), view(t)); });
  m.def("dice_score", [](const Array& p, const Array& t) { return dice_score(view(p), view(t)); });
  m.def(
      "ece", [](const Array& p, const Array& t, std::size_t bins) { return ece(view(p), view(t), bins); },
      py::arg("probs"), py::arg("truth"), py::arg("bins") = 5);
  m.def(
      "bin_stats",
      [](const Array& p, const Array& t, std::size_t bins) {
        py::list out;
        for (const auto& b : bin_stats(view(p), view(t), bins)) {
          py::dict d;
          d["lo"] = b.lo;
          d["hi"] = b.hi;
          d["count"] = b.count;
          d["acc"] = b.acc;
          d["conf"] = b.conf;
          d["gap"] = b.gap();
          out.append(d);
        }
        return out;
      },
      py::arg("probs"), py::arg("truth"), py::arg("bins") = 5);
  m.def("mann_whitney_u", [](const Array& a, const Array& b) {
    const auto r = mann_whitney_u(view(a), view(b));
    return py::make_tuple(r.u, r.p_two_sided, r.exact);
  });

  m.def(
      "generate_dataset",
      [](const std::string& config_json) {
        const DatasetSpec spec = dataset_spec_from_json(json::parse(config_json.empty() ? "{}" : config_json));
        const Dataset d = generate_dataset(spec);
        py::dict out;
        out["labeled"] = split_to_list(d.labeled);
        out["unlabeled"] = split_to_list(d.unlabeled);
        out["validation"] = split_to_list(d.validation);
        out["test"] = split_to_list(d.test);
        return out;
      },
      py::arg("config_json") = "", "Generate a synthetic dataset from a JSON 'data' section.");

  m.def("read_mmt", [](const std::filesystem::path& p) {
    const MmtArray a = read_mmt(p);
    return to_array(a.shape, a.values);
  });
  m.def("write_mmt", [](const std::filesystem::path& p, const Array& a) { write_mmt(p, shape_of(a), view(a)); });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return run_cli(args);
      },
      py::arg("args"), "Run a mismatch subcommand in-process; returns the exit code.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def("predict", &Model::predict, py::arg("images"), "Foreground probabilities for [N,1,H,W] images.")
      .def_property_readonly("members", &Model::members);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
}
