#include <algorithm>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spreadlab/brackets.hpp"
#include "spreadlab/error.hpp"
#include "spreadlab/experiments.hpp"
#include "spreadlab/malliavin.hpp"
#include "spreadlab/presets.hpp"

namespace py = pybind11;
namespace sl = spreadlab;

namespace {

py::dict result_dict(const sl::RunResult& r) {
  py::dict d;
  d["experiment"] = r.experiment;
  d["passed"] = r.passed();
  d["diverged"] = r.diverged;
  d["info"] = r.info;
  py::list asserts;
  for (const auto& a : r.assertions) {
    py::dict x;
    x["name"] = a.name;
    x["pass"] = a.pass;
    x["detail"] = a.detail;
    asserts.append(x);
  }
  d["assertions"] = asserts;
  py::dict tables;
  for (const auto& t : r.tables) tables[py::str(t.name)] = t.csv();
  d["tables"] = tables;
  return d;
}

sl::ExperimentConfig config_from(const std::string& text, const py::dict& overrides) {
  sl::ExperimentConfig cfg = text.empty() ? sl::ExperimentConfig{} : sl::parse_config(text);
  for (const auto& [k, v] : overrides) sl::set_config_value(cfg, py::str(k), py::str(v));
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Python access to the spreadlab core";

  py::register_exception<sl::Error>(m, "SpreadlabError", PyExc_RuntimeError);

  py::class_<sl::BasisSpec, std::shared_ptr<sl::BasisSpec>>(m, "BasisSpec")
      .def_static("dirichlet", [](int K, double nu) { return std::const_pointer_cast<sl::BasisSpec>(sl::BasisSpec::dirichlet(K, nu)); })
      .def_static("torus", [](int K, double nu) { return std::const_pointer_cast<sl::BasisSpec>(sl::BasisSpec::torus(K, nu)); })
      .def_property_readonly("dim", &sl::BasisSpec::dim)
      .def_property_readonly("eigenvalues", &sl::BasisSpec::eigenvalues)
      .def("describe", &sl::BasisSpec::describe);

  m.def("version", &sl::version_string);
  m.def("config_keys", &sl::config_keys);
  m.def(
      "canonical_config", [](const std::string& text, const py::dict& overrides) {
        return sl::canonical_config(config_from(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = py::dict());
  m.def(
      "validate_config", [](const std::string& text, const py::dict& overrides) {
        sl::validate_config(config_from(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = py::dict());
  m.def(
      "compute_experiment",
      [](const std::string& text, const py::dict& overrides) {
        const auto cfg = config_from(text, overrides);
        sl::RunResult r;
        {
          py::gil_scoped_release release;
          r = sl::compute_experiment(cfg);
        }
        return result_dict(r);
      },
      py::arg("text") = "", py::arg("overrides") = py::dict(),
      "Run an experiment in memory; returns assertions, info and CSV tables.");
  m.def(
      "run_experiment",
      [](const std::string& text, const py::dict& overrides) {
        const auto cfg = config_from(text, overrides);
        sl::RunResult r;
        {
          py::gil_scoped_release release;
          r = sl::run_experiment(cfg);
        }
        return result_dict(r);
      },
      py::arg("text") = "", py::arg("overrides") = py::dict(), "Run an experiment and write its bundle to disk.");
  m.def("report", [](const std::string& dir) { return sl::report(dir); });

  m.def("spectrum", [](const Eigen::MatrixXd& M) {
    const auto s = sl::spectrum(M);
    return py::make_tuple(s.values, s.vectors);
  });
  m.def("inf_cone",
        [](const Eigen::MatrixXd& M, const Eigen::MatrixXd& S, double delta, const Eigen::VectorXd& w, int restarts,
           std::uint64_t seed) { return sl::inf_cone(M, S, delta, w, restarts, seed).value; },
        py::arg("M"), py::arg("S"), py::arg("delta"), py::arg("weights"), py::arg("restarts") = 16,
        py::arg("seed") = 0);
  m.def("wilson_interval", [](int hits, int n) {
    double lo = 0.0, hi = 0.0;
    sl::wilson_interval(hits, n, lo, hi);
    return py::make_tuple(lo, hi);
  });
  // Lattice points are taken modulo sign, as in the config key ns_z0.
  m.def("ns_condition", [](const std::vector<std::array<int, 2>>& z0) {
    std::vector<std::array<int, 2>> sym;
    for (const auto& k : z0) {
      for (const std::array<int, 2> p : {k, std::array<int, 2>{-k[0], -k[1]}}) {
        if (std::find(sym.begin(), sym.end(), p) == sym.end()) sym.push_back(p);
      }
    }
    const auto c = sl::ns_condition(sym);
    return py::make_tuple(c.generates_Z2, c.unequal_norms);
  });
  m.def(
      "ns_bracket_ranks",
      [](int K, const std::vector<std::array<int, 2>>& z0, int max_steps) {
        const auto basis = sl::BasisSpec::torus(K, 0.1);
        const auto steps = sl::grow_span(sl::ns_generators(basis, z0, 1.0), sl::ns_drift(basis), max_steps);
        std::vector<int> ranks;
        for (const auto& s : steps) ranks.push_back(s.rank());
        return ranks;
      },
      py::arg("K"), py::arg("z0"), py::arg("max_steps") = 12);
}
