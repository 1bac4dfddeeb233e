#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <sstream>

#include "linabs/errors.hpp"
#include "linabs/experiments.hpp"
#include "linabs/units.hpp"

namespace py = pybind11;
using namespace linabs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> to_phase(const Setup& setup, const std::optional<Array>& phase) {
  if (!phase) return {};
  const auto n = setup.grid.frequencies.size();
  if (phase->ndim() != 1 || static_cast<std::size_t>(phase->size()) != n) {
    throw py::value_error("phase must be a 1-d array with " + std::to_string(n) + " entries");
  }
  return {phase->data(), phase->data() + n};
}

ExperimentConfig from_ini(const std::string& text) {
  std::istringstream in(text);
  return ExperimentConfig::parse(in);
}

}  // namespace

PYBIND11_MODULE(_linabs, m) {
  m.doc() = "Spectral-phase control of a three-level Lambda system";
  m.attr("LEVEL_G") = lambda_levels::g;
  m.attr("LEVEL_S") = lambda_levels::s;
  m.attr("LEVEL_F") = lambda_levels::f;

  py::register_exception<ConfigurationError>(m, "ConfigurationError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init(&ExperimentConfig::defaults))
      .def_static("from_ini", &from_ini, py::arg("text"))
      .def_static("load", [](const std::string& path) { return ExperimentConfig::load(path); }, py::arg("path"))
      .def_property_readonly("hash", &ExperimentConfig::hash)
      .def_property_readonly("canonical", &ExperimentConfig::canonical)
      .def_readwrite("energies", &ExperimentConfig::energies)
      .def_readwrite("samples_per_cycle", &ExperimentConfig::samples_per_cycle)
      .def_property(
          "sigma_cm", [](const ExperimentConfig& c) { return units::hartree_to_wavenumber(c.sigma); },
          [](ExperimentConfig& c, double v) { c.sigma = units::wavenumber_to_hartree(v); })
      .def_property_readonly("omega0", [](const ExperimentConfig& c) { return c.omega0; });

  py::class_<Setup>(m, "Problem")
      .def(py::init<ExperimentConfig>(), py::arg("config"))
      .def_property_readonly("n_frequencies", [](const Setup& s) { return s.grid.frequencies.size(); })
      .def_property_readonly("n_times", [](const Setup& s) { return s.grid.times.size(); })
      .def_property_readonly("frequencies",
                             [](const Setup& s) {
                               const auto& g = s.grid.frequencies;
                               std::vector<double> w(g.size());
                               for (std::size_t j = 0; j < w.size(); ++j) w[j] = g.omega(j);
                               return to_array(w);
                             })
      .def("amplitude", [](const Setup& s, double energy) { return to_array(s.field(energy).amplitude()); },
           py::arg("energy"))
      .def("first_order", &Setup::first_order, py::arg("energy"))
      .def(
          "populations",
          [](const Setup& s, double energy, const std::optional<Array>& phase) {
            const auto field = s.field(energy, to_phase(s, phase));
            py::gil_scoped_release release;
            return s.problem.final_populations(field);
          },
          py::arg("energy"), py::arg("phase") = py::none())
      .def(
          "gradients",
          [](const Setup& s, double energy, const std::optional<Array>& phase, std::vector<std::size_t> levels) {
            const auto field = s.field(energy, to_phase(s, phase));
            std::optional<ControlProblem::Evaluation> eval;
            {
              py::gil_scoped_release release;
              eval.emplace(s.problem.evaluate(field, levels));
            }
            const std::size_t n = field.grid().size();
            py::array_t<double> out({levels.size(), n});
            auto view = out.mutable_unchecked<2>();
            for (std::size_t r = 0; r < levels.size(); ++r)
              for (std::size_t j = 0; j < n; ++j) view(r, j) = eval->gradients.values[r][j];
            return py::make_tuple(eval->populations, out);
          },
          py::arg("energy"), py::arg("phase") = py::none(),
          py::arg("levels") = std::vector<std::size_t>{lambda_levels::s, lambda_levels::f})
      .def(
          "support_fs",
          [](const Setup& s, double energy, const std::optional<Array>& phase, double fraction) {
            return units::atomic_to_fs(temporal_support(s.problem.drive(s.field(energy, to_phase(s, phase))), fraction));
          },
          py::arg("energy"), py::arg("phase") = py::none(), py::arg("fraction") = 0.01);

  m.def(
      "constant_sweep",
      [](const Setup& s, std::size_t threads) {
        SweepResult r;
        {
          py::gil_scoped_release release;
          r = run_constant_phase_sweep(s, {threads, false});
        }
        py::list rows;
        for (const auto& row : r.rows) {
          py::dict d;
          d["A2"] = row.energy;
          d["populations"] = row.populations;
          d["P1_f"] = row.first_order;
          d["flags"] = row.flags;
          rows.append(d);
        }
        return rows;
      },
      py::arg("problem"), py::arg("threads") = 1);

  m.def(
      "validate",
      [](const Setup& s) {
        std::vector<CheckResult> checks;
        {
          py::gil_scoped_release release;
          checks = run_validation(s, {});
        }
        py::dict out;
        for (const auto& c : checks) out[py::str(c.name)] = py::make_tuple(c.passed, c.value, c.limit);
        return out;
      },
      py::arg("problem"));
}
