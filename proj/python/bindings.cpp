#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "commopt/compressors/compressor.hpp"
#include "commopt/errors.hpp"
#include "commopt/harness/experiment.hpp"

namespace py = pybind11;
using namespace commopt;

namespace {

// Trace as {"columns": {name: [values]}, "meta": json text}.
py::dict trace_dict(const Trace& t) {
  py::dict cols;
  for (const std::string& c : t.columns()) cols[py::str(c)] = t.column(c);
  py::dict out;
  out["columns"] = cols;
  out["meta"] = t.meta.dump();
  return out;
}

py::dict sweep_dict(const SweepTable& t) {
  py::list rows;
  for (const SweepRow& r : t.rows) {
    py::dict d;
    d["value"] = r.value;
    d["seeds"] = r.seeds;
    d["reached"] = r.reached;
    d["rounds_mean"] = r.rounds_mean;
    d["rounds_se"] = r.rounds_se;
    d["rounds_median"] = r.rounds_median;
    d["cost_mean"] = r.cost_mean;
    d["cost_se"] = r.cost_se;
    d["final_mean"] = r.final_mean;
    d["final_se"] = r.final_se;
    rows.append(d);
  }
  py::dict out;
  out["key"] = t.key;
  out["eps"] = t.eps;
  out["rows"] = rows;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "commopt native core";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<EnumerationLimit>(m, "EnumerationLimit");
  py::register_exception<RateError>(m, "RateError", PyExc_ValueError);

  m.def(
      "config_hash",
      [](const std::string& text) { return config_hash_hex(parse_config(text)); },
      py::arg("toml"));

  m.def(
      "run",
      [](const std::string& text, std::uint64_t seed, const std::string& base_dir) {
        const ExperimentConfig cfg = parse_config(text, base_dir);
        Trace t;
        {
          py::gil_scoped_release release;
          t = run_single(cfg, seed);
        }
        return trace_dict(t);
      },
      py::arg("toml"), py::arg("seed") = 0, py::arg("base_dir") = ".",
      "Run one seed of the configured experiment and return its trace.");

  m.def(
      "run_experiment",
      [](const std::string& path) {
        const ExperimentConfig cfg = load_config(path);
        py::gil_scoped_release release;
        return run_experiment(cfg);
      },
      py::arg("config_path"));

  m.def(
      "sweep",
      [](const std::string& text, const std::string& param, unsigned threads,
         const std::string& base_dir) {
        const ExperimentConfig cfg = parse_config(text, base_dir);
        SweepTable t;
        {
          py::gil_scoped_release release;
          t = sweep(cfg, parse_grid(param), threads);
        }
        return sweep_dict(t);
      },
      py::arg("toml"), py::arg("param"), py::arg("threads") = 0, py::arg("base_dir") = ".");

  m.def(
      "sampling_stats",
      [](const std::string& text, bool enumerate, const std::string& base_dir) {
        const ExperimentConfig cfg = parse_config(text, base_dir);
        const Problem p = build_problem(cfg);
        const SamplingScheme s = build_scheme(cfg, p);
        const SamplingStats st =
            sampling_stats(s, p.constants().mu, grads_at(p, reference_solution(p)),
                           enumerate ? StatsMethod::enumeration : StatsMethod::closed_form);
        py::dict out;
        out["sampling"] = s.describe();
        out["blocks"] = s.blocks;
        out["mu_as"] = st.mu_as;
        out["sigma_star_as_sq"] = st.sigma_star_as_sq;
        return out;
      },
      py::arg("toml"), py::arg("enumerate") = false, py::arg("base_dir") = ".");

  m.def(
      "certified",
      [](const std::string& spec, std::size_t dim) {
        const CompressorParams c = parse_compressor(spec, dim).certified();
        return py::make_tuple(c.eta, c.omega);
      },
      py::arg("spec"), py::arg("dim"), "Certified (eta, omega) of a compressor.");
}
