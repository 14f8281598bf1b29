#include "commopt/scafflix/scafflix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "commopt/errors.hpp"
#include "commopt/problems/optim.hpp"
#include "commopt/rng.hpp"

namespace commopt {

namespace {

constexpr double kDivergenceGap = 1e12;

void check_dim(const FlixInstance& inst, std::span<const double> x) {
  if (x.size() != inst.dim())
    throw InvalidArgument("flix: x has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(inst.dim()));
}

double mean(const Vec& v) {
  double s = 0;
  for (double a : v) s += a;
  return s / static_cast<double>(v.size());
}

}  // namespace

Vec FlixInstance::personalize(std::size_t i, std::span<const double> x) const {
  if (alpha[i] == 1.0) return Vec(x.begin(), x.end());
  Vec out(x.size());
  const double a = alpha[i];
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = a * x[j] + (1 - a) * x_loc[i][j];
  return out;
}

FlixInstance build_flix(const Problem& p, Vec alpha, double eps_loc) {
  if (!p.convex()) throw InvalidArgument("flix: base problem must be convex");
  if (alpha.size() != p.clients())
    throw InvalidArgument("flix: need one alpha per client");
  for (double a : alpha)
    if (!(a >= 0 && a <= 1)) throw InvalidArgument("flix: alpha must lie in [0, 1]");
  FlixInstance inst{p, std::move(alpha), {}, eps_loc, {}};
  const std::size_t n = p.clients();
  inst.x_loc.resize(n);
  inst.local_iterations.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (inst.alpha[i] == 1.0) continue;
    LocalMinimum m = local_minimizer(p, i, eps_loc);
    inst.x_loc[i] = std::move(m.x);
    inst.local_iterations[i] = m.iterations;
  }
  return inst;
}

FlixValue flix_eval(const FlixInstance& inst, std::span<const double> x) {
  check_dim(inst, x);
  FlixValue out;
  const std::size_t n = inst.clients();
  out.personalized.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.personalized.push_back(inst.personalize(i, x));
    out.value += inst.base.loss(i, out.personalized.back());
  }
  out.value /= static_cast<double>(n);
  return out;
}

Vec flix_grad(const FlixInstance& inst, std::span<const double> x) {
  check_dim(inst, x);
  const std::size_t n = inst.clients();
  Vec g(inst.dim(), 0.0), gi(inst.dim());
  for (std::size_t i = 0; i < n; ++i) {
    inst.base.grad(i, inst.personalize(i, x), gi);
    axpy(inst.alpha[i], gi, g);
  }
  for (auto& v : g) v /= static_cast<double>(n);
  return g;
}

FlixSolution flix_reference(const FlixInstance& inst, double tol) {
  const Problem& p = inst.base;
  const std::size_t n = inst.clients(), d = inst.dim();
  FlixSolution sol;
  if (p.kind() == ProblemKind::quadratic) {
    // f~ = 1/(2n) sum_ij a_ij alpha_i^2 (x_j - c_ij)^2 because x_i* = c_i
    Vec num(d, 0.0), den(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = inst.alpha[i] * inst.alpha[i];
      for (std::size_t j = 0; j < d; ++j) {
        num[j] += w * p.curvature(i)[j] * p.center(i)[j];
        den[j] += w * p.curvature(i)[j];
      }
    }
    sol.x.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
      if (den[j] > 0) sol.x[j] = num[j] / den[j];
  } else {
    double L = 0;
    const auto& k = p.constants();
    for (std::size_t i = 0; i < n; ++i) L += inst.alpha[i] * inst.alpha[i] * k.L[i];
    L /= static_cast<double>(n);
    SmoothFn f = [&](std::span<const double> x, std::span<double> g) {
      Vec gg = flix_grad(inst, x);
      std::copy(gg.begin(), gg.end(), g.begin());
      return flix_eval(inst, x).value;
    };
    MinimizeOptions o;
    o.tol = tol;
    o.max_evals = 4'000'000;
    o.min_step = L > 0 ? 1 / L : 0;
    MinimizeResult r = gradient_descent_armijo(f, Vec(d, 0.0), o);
    if (!r.converged)
      throw DivergenceError("flix reference solver stopped at gradient norm " +
                            std::to_string(r.grad_norm));
    sol.x = std::move(r.x);
  }
  FlixValue v = flix_eval(inst, sol.x);
  sol.value = v.value;
  sol.x_tilde = std::move(v.personalized);
  for (std::size_t i = 0; i < n; ++i) sol.grad_tilde.push_back(p.grad(i, sol.x_tilde[i]));
  return sol;
}

GradMode parse_grad_mode(std::string_view s) {
  if (s == "exact") return GradMode::exact;
  if (s == "single_sample") return GradMode::single_sample;
  throw ConfigError("grad_mode", "expected 'exact' or 'single_sample', got '" + std::string(s) +
                                     "'");
}

Vec default_stepsizes(const Problem& p, GradMode mode) {
  const auto& L = p.constants().L;
  Vec g(L.size());
  for (std::size_t i = 0; i < L.size(); ++i)
    g[i] = 1 / (mode == GradMode::exact ? L[i] : 2 * L[i]);
  return g;
}

double server_stepsize(const Vec& alpha, const Vec& gamma_i) {
  double s = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) s += alpha[i] * alpha[i] / gamma_i[i];
  return 1.0 / (s / static_cast<double>(alpha.size()));
}

double lyapunov_scafflix(const FlixInstance& inst, const ScafflixState& state,
                         const Vec& gamma_i, double p, const FlixSolution& target) {
  const std::size_t n = inst.clients();
  const double gmin = *std::min_element(gamma_i.begin(), gamma_i.end());
  double a = 0, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a += gmin / gamma_i[i] * dist_sq(inst.personalize(i, state.x[i]), target.x_tilde[i]);
    b += gamma_i[i] * dist_sq(state.h[i], target.grad_tilde[i]);
  }
  const double nd = static_cast<double>(n);
  return a / nd + gmin / (p * p) * (b / nd);
}

ScafflixResult run_scafflix(const FlixInstance& inst, const ScafflixConfig& cfg) {
  const Problem& prob = inst.base;
  const std::size_t n = inst.clients(), d = inst.dim();
  if (cfg.gamma_i.size() != n) throw ConfigError("gamma_i", "need one stepsize per client");
  for (double g : cfg.gamma_i)
    if (!(g > 0) || !std::isfinite(g)) throw ConfigError("gamma_i", "stepsizes must be > 0");
  if (!(cfg.p > 0 && cfg.p <= 1)) throw ConfigError("p", "must lie in (0, 1]");
  for (double a : inst.alpha)
    if (a == 0) throw ConfigError("alpha", "alpha_i = 0 is excluded (the local step divides by alpha_i)");
  if (!cfg.x0.empty() && cfg.x0.size() != d) throw ConfigError("x0", "wrong dimension");
  if (!cfg.h0.empty()) {
    if (cfg.h0.size() != n) throw ConfigError("h0", "need one control variate per client");
    Vec sum(d, 0.0);
    double scale = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.h0[i].size() != d) throw ConfigError("h0", "wrong dimension");
      axpy(inst.alpha[i], cfg.h0[i], sum);
      scale = std::max(scale, std::sqrt(norm_sq(cfg.h0[i])));
    }
    if (std::sqrt(norm_sq(sum)) > 1e-8 * std::max(1.0, scale))
      throw ConfigError("h0", "sum of alpha_i h_i must be zero");
  }

  ScafflixResult res;
  res.solution = flix_reference(inst);
  res.gamma = server_stepsize(inst.alpha, cfg.gamma_i);
  const double f_star = res.solution.value;

  ScafflixState& s = res.state;
  const Vec x0 = cfg.x0.empty() ? Vec(d, 0.0) : cfg.x0;
  s.x.assign(n, x0);
  if (cfg.h0.empty())
    s.h.assign(n, Vec(d, 0.0));
  else
    s.h = cfg.h0;
  s.server = x0;

  res.trace = Trace(kScafflixColumns);
  res.trace.meta["algorithm"] = "scafflix";
  res.trace.meta["seed"] = cfg.seed;
  res.trace.meta["p"] = cfg.p;
  res.trace.meta["gamma"] = res.gamma;
  res.trace.meta["alpha_min"] = *std::min_element(inst.alpha.begin(), inst.alpha.end());
  res.trace.meta["alpha_max"] = *std::max_element(inst.alpha.begin(), inst.alpha.end());
  const double alpha_mean = mean(inst.alpha);

  auto record = [&] {
    const double gap = flix_eval(inst, s.server).value - f_star;
    const double psi = lyapunov_scafflix(inst, s, cfg.gamma_i, cfg.p, res.solution);
    res.trace.add_row({static_cast<double>(s.round), static_cast<double>(s.comm_rounds), gap,
                       psi, dist_sq(s.server, res.solution.x), alpha_mean});
    if (!std::isfinite(gap) || gap > kDivergenceGap || !std::isfinite(psi))
      throw DivergenceError("scafflix diverged at round " + std::to_string(s.round));
    return gap;
  };

  record();
  std::vector<Vec> xhat(n, Vec(d));
  Vec g(d), acc(d);
  Rng coin = Rng::stream(cfg.seed, stream_tag::coin);
  while (s.round < cfg.T) {
    const bool communicate = cfg.p >= 1.0 || coin.bernoulli(cfg.p);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec xt = inst.personalize(i, s.x[i]);
      if (cfg.grad_mode == GradMode::single_sample) {
        Rng r = Rng::stream(cfg.seed, i, s.round, stream_tag::sample);
        prob.sample_grad(i, r.below(prob.samples(i)), xt, g);
      } else {
        prob.grad(i, xt, g);
      }
      const double step = cfg.gamma_i[i] / inst.alpha[i];
      for (std::size_t j = 0; j < d; ++j) xhat[i][j] = s.x[i][j] - step * (g[j] - s.h[i][j]);
    }
    ++s.round;
    if (communicate) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        axpy(inst.alpha[i] * inst.alpha[i] / cfg.gamma_i[i], xhat[i], acc);
      const double scale = res.gamma / static_cast<double>(n);
      for (auto& v : acc) v *= scale;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = cfg.p * inst.alpha[i] / cfg.gamma_i[i];
        for (std::size_t j = 0; j < d; ++j) s.h[i][j] += c * (acc[j] - xhat[i][j]);
        s.x[i] = acc;
      }
      s.server = acc;
      ++s.comm_rounds;
      const double gap = record();
      if (cfg.stop_gap > 0 && gap <= cfg.stop_gap) break;
    } else {
      for (std::size_t i = 0; i < n; ++i) std::swap(s.x[i], xhat[i]);
      record();
    }
  }
  res.trace.meta["rounds"] = s.round;
  return res;
}

ScafflixResult run_iscaffnew(const Problem& p, const Vec& gamma_i, double p_comm, std::size_t T,
                             std::uint64_t seed) {
  FlixInstance inst = build_flix(p, Vec(p.clients(), 1.0));
  ScafflixConfig cfg;
  cfg.gamma_i = gamma_i;
  cfg.p = p_comm;
  cfg.T = T;
  cfg.seed = seed;
  ScafflixResult r = run_scafflix(inst, cfg);
  r.trace.meta["algorithm"] = "iscaffnew";
  return r;
}

ScafflixResult run_flix_gd(const FlixInstance& inst, double gamma, std::size_t T,
                           double stop_gap, Vec x0) {
  if (!(gamma > 0) || !std::isfinite(gamma)) throw ConfigError("gamma", "must be > 0");
  const std::size_t d = inst.dim();
  if (!x0.empty() && x0.size() != d) throw ConfigError("x0", "wrong dimension");
  ScafflixResult res;
  res.solution = flix_reference(inst);
  res.gamma = gamma;
  ScafflixState& s = res.state;
  s.server = x0.empty() ? Vec(d, 0.0) : std::move(x0);
  res.trace = Trace(kScafflixColumns);
  res.trace.meta["algorithm"] = "flix_gd";
  res.trace.meta["gamma"] = gamma;
  const double alpha_mean = mean(inst.alpha);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto record = [&] {
    const double gap = flix_eval(inst, s.server).value - res.solution.value;
    res.trace.add_row({static_cast<double>(s.round), static_cast<double>(s.comm_rounds), gap,
                       nan, dist_sq(s.server, res.solution.x), alpha_mean});
    if (!std::isfinite(gap) || gap > kDivergenceGap)
      throw DivergenceError("flix_gd diverged at round " + std::to_string(s.round));
    return gap;
  };
  double gap = record();
  while (s.round < T && !(stop_gap > 0 && gap <= stop_gap)) {
    Vec g = flix_grad(inst, s.server);
    axpy(-gamma, g, s.server);
    ++s.round;
    ++s.comm_rounds;
    gap = record();
  }
  return res;
}

}  // namespace commopt
