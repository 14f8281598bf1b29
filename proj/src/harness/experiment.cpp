#include "commopt/harness/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

#include "commopt/errors.hpp"

namespace commopt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Trace run_efbv_family(const ExperimentConfig& cfg, const Problem& p, std::uint64_t seed) {
  const EfbvSection& e = cfg.efbv;
  EfbvConfig c;
  if (e.dependence == Dependence::m_nice_joint) {
    c.ensemble = EnsembleSpec::m_nice(p.dim(), e.nice_m, p.clients());
  } else {
    const CompressorSpec spec = [&] {
      try {
        return parse_compressor(e.compressor, p.dim());
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& err) {
        throw ConfigError("efbv.compressor", err.what());
      }
    }();
    c.ensemble = EnsembleSpec::independent(spec, p.clients());
  }
  c.lambda = e.lambda;
  c.nu = e.nu;
  c.gamma = e.gamma;
  if (e.l2 > 0) c.regularizer = Regularizer::l2(e.l2);
  c.T = e.T;
  c.seed = seed;
  c.mode = cfg.algorithm == Algorithm::ef21   ? EfbvMode::ef21
           : cfg.algorithm == Algorithm::diana ? EfbvMode::diana
                                               : EfbvMode::efbv;
  c.smoothness = e.smoothness;
  c.stop_gap = e.stop_gap;
  return run_efbv(p, c).trace;
}

Trace run_scafflix_family(const ExperimentConfig& cfg, const Problem& p, std::uint64_t seed) {
  const ScafflixSection& s = cfg.scafflix;
  Vec gamma_i = default_stepsizes(p, s.grad_mode);
  for (double& g : gamma_i) g *= s.gamma_scale;
  if (cfg.algorithm == Algorithm::iscaffnew) return run_iscaffnew(p, gamma_i, s.p, s.T, seed).trace;

  const Vec alpha = s.alpha.size() == 1 ? Vec(p.clients(), s.alpha[0]) : s.alpha;
  const FlixInstance inst = build_flix(p, alpha, s.eps_loc);
  if (cfg.algorithm == Algorithm::flix_gd) {
    const double gamma =
        s.gamma ? *s.gamma : server_stepsize(alpha, default_stepsizes(p, GradMode::exact));
    Trace t = run_flix_gd(inst, gamma, s.T, s.stop_gap).trace;
    t.meta["seed"] = seed;
    return t;
  }
  ScafflixConfig c;
  c.gamma_i = std::move(gamma_i);
  c.p = s.p;
  c.T = s.T;
  c.grad_mode = s.grad_mode;
  c.seed = seed;
  c.stop_gap = s.stop_gap;
  return run_scafflix(inst, c).trace;
}

Trace run_sppm_family(const ExperimentConfig& cfg, const Problem& p, std::uint64_t seed) {
  const SppmSection& s = cfg.sppm;
  const SamplingScheme scheme = build_scheme(cfg, p);
  SppmOptions o;
  o.target = s.target;
  o.measure_prox_error = s.measure_prox_error;
  switch (cfg.algorithm) {
    case Algorithm::sppm_as:
      return run_sppm_as(p, scheme, s.gamma, s.T, {s.solver, s.K, s.inner_tol}, s.cost, seed, o)
          .trace;
    case Algorithm::localgd:
      return run_localgd(p, scheme, s.stepsize, s.local_steps, s.T, s.cost, seed, o).trace;
    case Algorithm::mbgd: return run_mbgd(p, scheme, s.stepsize, s.T, s.cost, seed, o).trace;
    case Algorithm::fedprox_sppm:
      return run_fedprox_sppm(p, scheme, s.gamma, s.K, s.T, s.cost, seed, o).trace;
    case Algorithm::fedavg_sppm:
      return run_fedavg_sppm(p, scheme, s.gamma, s.alpha_loc, s.K, s.T, s.cost, seed, o).trace;
    default: break;
  }
  throw ConfigError("algorithm", "not an SPPM-family algorithm");
}

// Same dynamic type as `e`, message prefixed.
[[noreturn]] void rethrow_with(const std::exception_ptr& ep, const std::string& where) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    throw ConfigError(where + " " + e.field(), e.what());
  } catch (const ParseError& e) {
    throw ParseError(e.line(), where + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(where + ": " + e.what());
  } catch (const RateError& e) {
    throw RateError(where + ": " + e.what());
  } catch (const EnumerationLimit& e) {
    throw EnumerationLimit(where + ": " + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(where + ": " + e.what());
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
}

struct SeedOutcome {
  double rounds = kInf, cost = kInf, final_metric = 0;
};

SeedOutcome measure(const Trace& t, const SweepMetric& m, double eps) {
  SeedOutcome o;
  const std::size_t im = t.column_index(m.metric);
  const std::size_t ir = t.column_index(m.rounds);
  const std::size_t ic = t.column_index(m.cost);
  o.final_metric = t.back()[im];
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (t.row(r)[im] <= eps) {
      o.rounds = t.row(r)[ir];
      o.cost = t.row(r)[ic];
      break;
    }
  }
  return o;
}

void mean_se(const Vec& v, double& mean, double& se) {
  double s = 0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  if (!std::isfinite(mean) || v.size() < 2) {
    se = std::isfinite(mean) ? 0 : kInf;
    return;
  }
  double q = 0;
  for (double x : v) q += (x - mean) * (x - mean);
  se = std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

double median(Vec v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SweepRow sweep_point(const ExperimentConfig& cfg, const SweepMetric& m, double eps,
                     std::string value) {
  SweepRow row;
  row.value = std::move(value);
  Vec rounds, cost, fin;
  for (std::uint64_t seed : cfg.seeds) {
    const SeedOutcome o = measure(run_single(cfg, seed), m, eps);
    rounds.push_back(o.rounds);
    cost.push_back(o.cost);
    fin.push_back(o.final_metric);
    if (std::isfinite(o.rounds)) ++row.reached;
  }
  row.seeds = cfg.seeds.size();
  mean_se(rounds, row.rounds_mean, row.rounds_se);
  row.rounds_median = median(rounds);
  mean_se(cost, row.cost_mean, row.cost_se);
  mean_se(fin, row.final_mean, row.final_se);
  return row;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Trace run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Problem p = build_problem(cfg);
  Trace t;
  const std::string_view family = section_of(cfg.algorithm);
  if (family == "efbv") t = run_efbv_family(cfg, p, seed);
  else if (family == "scafflix") t = run_scafflix_family(cfg, p, seed);
  else t = run_sppm_family(cfg, p, seed);
  t.meta["algorithm"] = std::string(to_string(cfg.algorithm));
  t.meta["seed"] = seed;
  t.meta["config_hash"] = config_hash_hex(cfg);
  t.meta["software"] = std::string(kVersion);
  return t;
}

std::vector<std::string> run_experiment(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  const std::filesystem::path dir = cfg.output.empty() ? "." : cfg.output;
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (std::uint64_t seed : cfg.seeds) {
    const Trace t = run_single(cfg, seed);
    const std::filesystem::path file =
        dir / (std::string(to_string(cfg.algorithm)) + "_seed" + std::to_string(seed) + ".csv");
    write_trace(file.string(), t);
    paths.push_back(file.string());
  }
  return paths;
}

SweepMetric sweep_metric(Algorithm a) {
  const std::string_view family = section_of(a);
  if (family == "efbv") return {"f_gap", "round", "scalars_sent"};
  if (family == "scafflix") return {"f_gap", "comm_rounds", "comm_rounds"};
  return {"dist_sq", "round", "cost_cum"};
}

ParamGrid parse_grid(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("sweep.param", "expected key=values");
  ParamGrid g;
  g.key = std::string(text.substr(0, eq));
  const std::string_view rhs = text.substr(eq + 1);
  if (const auto dots = rhs.find(".."); dots != std::string_view::npos) {
    long long lo = 0, hi = 0;
    const std::string_view a = rhs.substr(0, dots), b = rhs.substr(dots + 2);
    auto ra = std::from_chars(a.data(), a.data() + a.size(), lo);
    auto rb = std::from_chars(b.data(), b.data() + b.size(), hi);
    if (ra.ec != std::errc() || ra.ptr != a.data() + a.size() || rb.ec != std::errc() ||
        rb.ptr != b.data() + b.size())
      throw ConfigError("sweep.param", "range bounds must be integers");
    for (long long v = lo; v <= hi; ++v) g.values.push_back(std::to_string(v));
  } else {
    std::size_t start = 0;
    while (start <= rhs.size() && !rhs.empty()) {
      const auto comma = rhs.find(',', start);
      const std::string_view item =
          rhs.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (item.empty()) throw ConfigError("sweep.param", "empty grid value");
      g.values.emplace_back(item);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  if (g.values.empty()) throw ConfigError("sweep.param", "grid is empty");
  return g;
}

SweepTable sweep(const ExperimentConfig& cfg, const ParamGrid& grid, unsigned threads) {
  if (grid.values.empty()) throw ConfigError("sweep.param", "grid is empty");
  SweepTable table;
  table.key = grid.key;
  table.metric = sweep_metric(cfg.algorithm);
  table.eps = cfg.sweep_eps;

  // Configs are built up front so validation errors surface before any run.
  std::vector<ExperimentConfig> points;
  for (const std::string& v : grid.values) {
    try {
      points.push_back(with_param(cfg, grid.key, v));
    } catch (...) {
      rethrow_with(std::current_exception(), "[" + grid.key + "=" + v + "]");
    }
  }
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());

  table.rows.resize(points.size());
  for (std::size_t begin = 0; begin < points.size(); begin += threads) {
    const std::size_t end = std::min(points.size(), begin + threads);
    std::vector<std::future<SweepRow>> jobs;
    for (std::size_t i = begin; i < end; ++i)
      jobs.push_back(std::async(std::launch::async, sweep_point, std::cref(points[i]),
                                std::cref(table.metric), table.eps, grid.values[i]));
    for (std::size_t i = begin; i < end; ++i) {
      try {
        table.rows[i] = jobs[i - begin].get();
      } catch (...) {
        for (std::size_t j = i + 1; j < end; ++j) jobs[j - begin].wait();
        rethrow_with(std::current_exception(), "[" + grid.key + "=" + grid.values[i] + "]");
      }
    }
  }
  return table;
}

std::string sweep_to_csv(const SweepTable& t) {
  std::ostringstream os;
  os << t.key << ",seeds,reached,rounds_mean,rounds_se,rounds_median,cost_mean,cost_se,"
     << "final_mean,final_se\n";
  for (const SweepRow& r : t.rows)
    os << r.value << ',' << r.seeds << ',' << r.reached << ',' << fmt(r.rounds_mean) << ','
       << fmt(r.rounds_se) << ',' << fmt(r.rounds_median) << ',' << fmt(r.cost_mean) << ','
       << fmt(r.cost_se) << ',' << fmt(r.final_mean) << ',' << fmt(r.final_se) << '\n';
  return os.str();
}

}  // namespace commopt
