// commopt: command-line front end for experiments, sweeps and certificates.
//
// Exit codes: 0 ok, 1 certificate violation or I/O failure, 2 invalid input,
// 3 divergence guard.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "commopt/compressors/compressor.hpp"
#include "commopt/errors.hpp"
#include "commopt/harness/experiment.hpp"

using namespace commopt;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kInvalid = 2, kDiverged = 3 };

int run_family(const std::string& path, const std::string& output, std::string_view family) {
  ExperimentConfig cfg = load_config(path);
  if (section_of(cfg.algorithm) != family)
    throw ConfigError("algorithm", "'" + std::string(to_string(cfg.algorithm)) +
                                       "' is not run by run-" + std::string(family));
  if (!output.empty()) cfg.output = output;
  for (const std::string& p : run_experiment(cfg)) std::cout << p << '\n';
  return kOk;
}

int run_sweep(const std::string& path, const std::string& param, const std::string& out,
              unsigned threads) {
  const ExperimentConfig cfg = load_config(path);
  const SweepTable t = sweep(cfg, parse_grid(param), threads);
  const std::string csv = sweep_to_csv(t);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!(f << csv)) throw std::runtime_error("cannot write " + out);
  }
  return kOk;
}

int certify(const std::string& spec_text, std::size_t dim, std::size_t trials,
            std::uint64_t seed) {
  const CompressorSpec spec = parse_compressor(spec_text, dim);
  const CompressorParams cert = spec.certified();
  Rng rng = Rng::stream(seed, stream_tag::compressor);
  const CertificateEstimate est = estimate_params(spec, trials, rng);
  json out = {{"compressor", spec.to_string()},
              {"dim", dim},
              {"eta", cert.eta},
              {"omega", cert.omega},
              {"eta_hat", est.eta_hat},
              {"omega_hat", est.omega_hat},
              {"inputs", est.inputs},
              {"trials", trials},
              {"violations", json::array()}};
  for (const CertificateViolation& v : est.violations)
    out["violations"].push_back({{"input", v.input}, {"bias", v.bias}, {"variance", v.variance}});
  std::cout << out.dump(2) << '\n';
  return est.violations.empty() ? kOk : kFailure;
}

int stats(const std::string& path, bool enumerate) {
  const ExperimentConfig cfg = load_config(path);
  if (section_of(cfg.algorithm) != "sppm")
    throw ConfigError("algorithm", "stats needs an SPPM-family config");
  const Problem p = build_problem(cfg);
  const SamplingScheme s = build_scheme(cfg, p);
  const Vec xs = reference_solution(p);
  const StatsMethod m = enumerate ? StatsMethod::enumeration : StatsMethod::closed_form;
  const SamplingStats st = sampling_stats(s, p.constants().mu, grads_at(p, xs), m);
  json out = {{"sampling", s.describe()},
              {"blocks", s.blocks},
              {"method", std::string(to_string(st.method))},
              {"mu_as", st.mu_as},
              {"sigma_star_as_sq", st.sigma_star_as_sq}};
  if (!st.sigma_j_sq.empty()) out["sigma_j_sq"] = st.sigma_j_sq;
  std::cout << out.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Communication-efficient distributed optimization experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config, output, param, sweep_out, spec;
  std::size_t dim = 0, trials = 20000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool enumerate = false;

  auto add_run = [&](const char* name, const char* help) {
    CLI::App* c = app.add_subcommand(name, help);
    c->add_option("--config", config, "experiment TOML")->required()->check(CLI::ExistingFile);
    c->add_option("--output", output, "trace directory (overrides the config)");
    return c;
  };
  CLI::App* efbv = add_run("run-efbv", "EF-BV, EF21 or DIANA");
  CLI::App* scafflix = add_run("run-scafflix", "Scafflix, i-Scaffnew or FLIX gradient descent");
  CLI::App* sppm = add_run("run-sppm", "SPPM-AS and its baselines");

  CLI::App* sw = app.add_subcommand("sweep", "grid over one config key, summary CSV");
  sw->add_option("--config", config, "experiment TOML")->required()->check(CLI::ExistingFile);
  sw->add_option("--param", param, "key=lo..hi or key=v1,v2,...")->required();
  sw->add_option("--out", sweep_out, "write the table here instead of stdout");
  sw->add_option("--threads", threads, "concurrent grid points (0: all cores)");

  CLI::App* cert = app.add_subcommand("certify-compressor",
                                      "Monte-Carlo audit of a compressor's (eta, omega)");
  cert->add_option("--spec", spec, "e.g. rand_k:k=2, comp:k=1,kp=4")->required();
  cert->add_option("--dim", dim, "vector dimension")->required()->check(CLI::PositiveNumber);
  cert->add_option("--trials", trials, "draws per input")->check(CLI::PositiveNumber);
  cert->add_option("--seed", seed, "RNG seed");

  CLI::App* st = app.add_subcommand("stats", "mu_AS and sigma^2_AS of the configured scheme");
  st->add_option("--config", config, "experiment TOML")->required()->check(CLI::ExistingFile);
  st->add_flag("--enumerate", enumerate, "enumerate cohorts instead of closed forms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (efbv->parsed()) return run_family(config, output, "efbv");
    if (scafflix->parsed()) return run_family(config, output, "scafflix");
    if (sppm->parsed()) return run_family(config, output, "sppm");
    if (sw->parsed()) return run_sweep(config, param, sweep_out, threads);
    if (cert->parsed()) return certify(spec, dim, trials, seed);
    if (st->parsed()) return stats(config, enumerate);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kInvalid;
}
