#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "emla/config.hpp"
#include "emla/csv.hpp"
#include "emla/error.hpp"
#include "emla/model.hpp"
#include "emla/observer.hpp"
#include "emla/report.hpp"
#include "emla/stability.hpp"
#include "emla/sim.hpp"
#include "emla/trajectory.hpp"

namespace py = pybind11;

namespace {

PyObject* validation_error_type = nullptr;
PyObject* numeric_error_type = nullptr;

/// Raises the Python exception with `field` set as an attribute.
void raise_with_field(PyObject* type, const char* what, const std::string& field) {
  py::object inst = py::reinterpret_borrow<py::object>(type)(what);
  inst.attr("field") = field;
  PyErr_SetObject(type, inst.ptr());
}

py::array_t<double> trace_array(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = emla::trace_columns().size();
  py::array_t<double> out({rows.size(), cols});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) view(r, c) = rows[r][c];
  }
  return out;
}

py::dict metrics_dict(const emla::MetricsReport& m) {
  py::dict d;
  d["pos_error"] = m.pos_error;
  d["vel_error"] = m.vel_error;
  d["pos_error_rms"] = m.pos_error_rms;
  d["vel_error_rms"] = m.vel_error_rms;
  d["torque_effort"] = m.torque_effort;
  d["convergence_speed"] = m.convergence_speed;
  d["converged"] = m.converged;
  d["threshold"] = m.threshold;
  d["saturation_count"] = m.saturation_count;
  return d;
}

py::dict simulate(const std::string& path, std::optional<std::uint64_t> seed) {
  const emla::ScenarioConfig cfg = emla::load_scenario(path, seed);
  emla::SimulationResult res;
  {
    py::gil_scoped_release release;
    res = emla::run_scenario(cfg);
  }
  std::ostringstream csv;
  emla::write_trace_csv(csv, res.trace);
  py::dict d;
  d["scenario"] = cfg.name;
  d["seed"] = cfg.seed;
  d["columns"] = emla::trace_columns();
  d["trace"] = trace_array(res.trace);
  d["trace_csv"] = csv.str();
  d["metrics"] = metrics_dict(res.metrics);
  d["metrics_json"] = emla::metrics_json(cfg, res);
  d["diverged"] = res.diverged;
  d["divergence_message"] = res.divergence_message;
  d["steps"] = res.steps;
  d["min_eta_hat"] = res.min_eta_hat;
  return d;
}

py::dict optimize(const std::string& path) {
  const emla::TrajectoryProblem prob = emla::load_trajectory_problem(path);
  std::optional<emla::OptimizationResult> res;
  {
    py::gil_scoped_release release;
    res = emla::optimize_trajectory(prob.constraints, *prob.oracle, std::nullopt, prob.options);
  }
  const auto& r = res->report;
  std::ostringstream csv;
  emla::write_trajectory_csv(csv, res->curve, prob.samples);
  py::dict d;
  d["problem"] = prob.name;
  d["converged"] = r.converged;
  d["t_final"] = r.t_final;
  d["final_cost"] = r.final_cost;
  d["seed_cost"] = r.seed_cost;
  d["max_violation"] = r.max_violation;
  d["iterations"] = r.iterations;
  d["returned_seed"] = r.returned_seed;
  d["degree"] = res->curve.degree();
  d["knots"] = res->curve.knots();
  d["control_points"] = res->curve.control_points();
  d["trajectory_csv"] = csv.str();
  return d;
}

}  // namespace

PYBIND11_MODULE(_emla_lab, m) {
  m.doc() = "EMLA simulation and control workbench";

  validation_error_type = PyErr_NewException("emla_lab.ValidationError", PyExc_ValueError, nullptr);
  numeric_error_type = PyErr_NewException("emla_lab.NumericError", PyExc_ArithmeticError, nullptr);
  m.attr("ValidationError") = py::handle(validation_error_type);
  m.attr("NumericError") = py::handle(numeric_error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const emla::ValidationError& e) {
      raise_with_field(validation_error_type, e.what(), e.field());
    } catch (const emla::NumericError& e) {
      raise_with_field(numeric_error_type, e.what(), e.where());
    } catch (const emla::Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  m.def("simulate", &simulate, py::arg("config"), py::arg("seed") = py::none(),
        "Run a closed-loop scenario and return its trace and metrics.");
  m.def("optimize", &optimize, py::arg("config"), "Optimize a joint trajectory from a problem file.");
  m.def(
      "validate",
      [](const std::string& path) {
        const std::string text = emla::read_text_file(path);
        if (emla::config_kind(text, path) == "trajectory") {
          (void)emla::load_trajectory_problem(path);
          return std::string("trajectory");
        }
        (void)emla::load_scenario(path);
        return std::string("scenario");
      },
      py::arg("config"), "Check a config file and return its kind.");
  m.def(
      "render_report",
      [](const std::string& trace_csv) { return emla::render_report_svg(emla::read_csv_file(trace_csv)); },
      py::arg("trace_csv"), "SVG report of a trace CSV file.");
  m.def(
      "verify",
      [](const std::string& trace_csv, const std::string& config) {
        const auto summary = emla::verify_trace(emla::read_csv_file(trace_csv), emla::load_scenario(config));
        return py::make_tuple(summary.passed, summary.json);
      },
      py::arg("trace_csv"), py::arg("config"), "Stability verification of a trace; returns (passed, json).");

  m.def(
      "park_abc_to_dq",
      [](double a, double b, double c, double angle) {
        const auto v = emla::park_abc_to_dq({a, b, c}, angle);
        return py::make_tuple(v.d, v.q, v.zero);
      },
      py::arg("a"), py::arg("b"), py::arg("c"), py::arg("angle"));
  m.def(
      "park_dq_to_abc",
      [](double d, double q, double zero, double angle) {
        const auto v = emla::park_dq_to_abc({d, q, zero}, angle);
        return py::make_tuple(v.a, v.b, v.c);
      },
      py::arg("d"), py::arg("q"), py::arg("zero"), py::arg("angle"));
  m.def("solve_lyapunov", &emla::solve_lyapunov_2x2, py::arg("a_bar"), py::arg("q"),
        "Solve p A + A^T p = -Q for a Hurwitz 2x2 A.");
  m.def("is_hurwitz", &emla::is_hurwitz, py::arg("m"));
}
