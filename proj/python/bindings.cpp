#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

#include "fedpaq/cost_model.hpp"
#include "fedpaq/error.hpp"
#include "fedpaq/harness.hpp"
#include "fedpaq/quantizer.hpp"
#include "fedpaq/theory.hpp"

namespace py = pybind11;
using namespace fedpaq;

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load(const std::string& text) {
  auto config = parse_config(text);
  validate(config);
  return config;
}

py::dict summarize(const ExecuteResult& res) {
  py::dict out;
  out["metrics_path"] = res.metrics_path;
  out["summary_path"] = res.summary_path;
  out["metrics_csv"] = read_text(res.metrics_path);
  const auto& records = res.runs.front().records;
  if (!records.empty()) {
    out["final_loss"] = records.back().train_loss;
    out["sim_time_s"] = records.back().sim_time_s;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_fedpaq, m) {
  m.doc() = "FedPAQ simulator core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<Unsupported>(m, "Unsupported", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  py::class_<QuantizedVector>(m, "QuantizedVector")
      .def(py::init<>())
      .def_readwrite("norm", &QuantizedVector::norm)
      .def_readwrite("signs", &QuantizedVector::signs)
      .def_readwrite("levels", &QuantizedVector::levels)
      .def_readwrite("level_count", &QuantizedVector::level_count)
      .def_property_readonly("dim", &QuantizedVector::dim)
      .def(py::self == py::self)
      .def("__repr__", [](const QuantizedVector& q) {
        return "QuantizedVector(dim=" + std::to_string(q.dim()) + ", s=" + std::to_string(q.level_count) + ")";
      });

  m.def(
      "quantize",
      [](const std::vector<double>& x, std::uint32_t s, std::uint64_t seed) {
        Stream rng(seed);
        return quantize(x, s, rng);
      },
      py::arg("x"), py::arg("s"), py::arg("seed") = 0);
  m.def("dequantize", &dequantize, py::arg("q"));
  m.def("canonical", &canonical, py::arg("q"), py::arg("float_bits") = kDefaultFloatBits);
  m.def(
      "encode",
      [](const QuantizedVector& q, unsigned float_bits) {
        const auto bytes = encode(q, float_bits);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("q"), py::arg("float_bits") = kDefaultFloatBits);
  m.def(
      "decode",
      [](const py::bytes& data, unsigned float_bits) {
        const std::string raw = data;
        const std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
        return decode(bytes, float_bits);
      },
      py::arg("data"), py::arg("float_bits") = kDefaultFloatBits);
  m.def("payload_bits", &payload_bits, py::arg("p"), py::arg("s"), py::arg("float_bits") = kDefaultFloatBits);
  m.def("default_variance_parameter", &default_variance_parameter, py::arg("p"), py::arg("s"));

  m.def("comm_comp_ratio",
        [](std::size_t p, double bandwidth, double shift, double scale, unsigned float_bits) {
          return comm_comp_ratio(p, CostModelParams{bandwidth, shift, scale, float_bits});
        },
        py::arg("p"), py::arg("bandwidth"), py::arg("shift"), py::arg("scale"), py::arg("float_bits") = 32);
  m.def("solve_bandwidth", &solve_bandwidth, py::arg("p"), py::arg("ratio"), py::arg("shift"), py::arg("scale"),
        py::arg("float_bits") = 32);

  auto th = m.def_submodule("theory", "Convergence-bound constants");
  py::class_<theory::StronglyConvexConstants>(th, "StronglyConvexConstants")
      .def_readonly("b1", &theory::StronglyConvexConstants::b1)
      .def_readonly("c1", &theory::StronglyConvexConstants::c1)
      .def_readonly("c2", &theory::StronglyConvexConstants::c2)
      .def_readonly("c3", &theory::StronglyConvexConstants::c3);
  py::class_<theory::NonConvexConstants>(th, "NonConvexConstants")
      .def_readonly("b2", &theory::NonConvexConstants::b2)
      .def_readonly("n1", &theory::NonConvexConstants::n1)
      .def_readonly("n2", &theory::NonConvexConstants::n2);
  th.def("strongly_convex", &theory::thm1_constants, py::arg("q"), py::arg("n"), py::arg("r"), py::arg("L"),
         py::arg("mu"), py::arg("sigma2"));
  th.def("k0", &theory::thm1_k0, py::arg("L"), py::arg("mu"), py::arg("b1"), py::arg("n"), py::arg("tau"));
  th.def("strongly_convex_bound", &theory::thm1_bound, py::arg("k"), py::arg("k0"), py::arg("tau"),
         py::arg("constants"), py::arg("initial_gap"));
  th.def("nonconvex", &theory::thm2_constants, py::arg("q"), py::arg("n"), py::arg("r"), py::arg("sigma2"));
  th.def("tau_max", &theory::thm2_tau_max, py::arg("T"), py::arg("b2"));
  th.def("nonconvex_bound", &theory::thm2_bound, py::arg("T"), py::arg("tau"), py::arg("L"), py::arg("f0_gap"),
         py::arg("n1"), py::arg("n2"));

  m.def(
      "normalize_config", [](const std::string& text) { return render_config(load(text)); },
      py::arg("text"), "Parse and validate a configuration, returning it with every default filled in.");
  m.def(
      "theory_report", [](const std::string& text) { return theory_report(load(text)); }, py::arg("text"));
  m.def(
      "execute",
      [](const std::string& text, const std::filesystem::path& out_dir) {
        ExecuteResult res;
        {
          py::gil_scoped_release release;
          res = execute(load(text), out_dir);
        }
        return summarize(res);
      },
      py::arg("text"), py::arg("out_dir"));
  m.def(
      "sweep",
      [](const std::string& text, const std::filesystem::path& out_dir) {
        std::vector<ExecuteResult> results;
        {
          py::gil_scoped_release release;
          results = sweep(load(text), out_dir);
        }
        py::list out;
        for (const auto& r : results) {
          out.append(summarize(r));
        }
        return out;
      },
      py::arg("text"), py::arg("out_dir"));
  m.def(
      "time_to_target",
      [](const std::string& metrics, double target) { return time_to_target(parse_metrics_csv(metrics), target); },
      py::arg("metrics_csv"), py::arg("target_loss"));
}
