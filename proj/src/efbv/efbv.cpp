#include "commopt/efbv/efbv.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "commopt/errors.hpp"

namespace commopt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDivergenceGap = 1e12;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void check_unit(const char* name, double v) {
  if (!(v > 0 && v <= 1)) throw ConfigError(name, "must lie in (0, 1], got " + fmt(v));
}

}  // namespace

std::string_view to_string(EfbvMode m) {
  switch (m) {
    case EfbvMode::efbv: return "efbv";
    case EfbvMode::ef21: return "ef21";
    case EfbvMode::diana: return "diana";
    case EfbvMode::custom: return "custom";
  }
  return "?";
}

EfbvMode parse_efbv_mode(std::string_view s) {
  if (s == "efbv") return EfbvMode::efbv;
  if (s == "ef21") return EfbvMode::ef21;
  if (s == "diana") return EfbvMode::diana;
  if (s == "custom") return EfbvMode::custom;
  throw ConfigError("mode", "unknown mode '" + std::string(s) + "'");
}

SmoothnessConvention parse_smoothness_convention(std::string_view s) {
  if (s == "mean") return SmoothnessConvention::mean;
  if (s == "sum") return SmoothnessConvention::sum;
  throw ConfigError("smoothness", "expected 'mean' or 'sum', got '" + std::string(s) + "'");
}

DerivedParams derived_params(double eta, double omega, double omega_ran, double lambda,
                             double nu) {
  if (!(eta >= 0 && eta < 1)) throw InvalidArgument("eta must lie in [0, 1)");
  if (!(omega >= 0) || !(omega_ran >= 0)) throw InvalidArgument("omega must be >= 0");
  if (!(lambda > 0 && lambda <= 1)) throw InvalidArgument("lambda must lie in (0, 1]");
  if (!(nu > 0 && nu <= 1)) throw InvalidArgument("nu must lie in (0, 1]");
  DerivedParams dp;
  const double a = 1 - lambda + lambda * eta;
  dp.r = a * a + lambda * lambda * omega;
  if (dp.r >= 1)
    throw RateError("lambda = " + fmt(lambda) + " gives r = " + fmt(dp.r) + " >= 1");
  const double b = 1 - nu + nu * eta;
  dp.r_av = b * b + nu * nu * omega_ran;
  if (dp.r == 0) {
    dp.s_star = dp.theta_star = dp.s_ncvx = dp.theta_ncvx = kInf;
    return dp;
  }
  dp.s_star = std::sqrt((1 + dp.r) / (2 * dp.r)) - 1;
  dp.s_ncvx = 1 / std::sqrt(dp.r) - 1;
  if (dp.r_av == 0) {
    dp.theta_star = dp.theta_ncvx = kInf;
  } else {
    dp.theta_star = dp.s_star * (1 + dp.s_star) * dp.r / dp.r_av;
    dp.theta_ncvx = dp.s_ncvx * (1 + dp.s_ncvx) * dp.r / dp.r_av;
  }
  return dp;
}

double stepsize_bound(double L, double L_tilde, const DerivedParams& dp, StepsizeRegime regime) {
  if (!(L > 0) || !(L_tilde >= 0)) throw InvalidArgument("stepsize_bound: need L > 0, L_tilde >= 0");
  const double base = regime == StepsizeRegime::KL ? 2 * L : L;
  if (dp.r == 0) return 1 / base;
  const double s = regime == StepsizeRegime::nonconvex ? dp.s_ncvx : dp.s_star;
  return 1 / (base + L_tilde * std::sqrt(dp.r_av / dp.r) / s);
}

EfbvParams resolve_efbv(const Problem& p, const EfbvConfig& cfg) {
  const std::size_t n = p.clients();
  if (cfg.ensemble.clients() != n)
    throw ConfigError("compressor", "ensemble has " + std::to_string(cfg.ensemble.clients()) +
                                        " clients, problem has " + std::to_string(n));
  for (const auto& c : cfg.ensemble.per_client)
    if (c.dim() != p.dim())
      throw ConfigError("compressor", "dimension " + std::to_string(c.dim()) +
                                          " does not match problem dimension " +
                                          std::to_string(p.dim()));
  if (!cfg.x0.empty() && cfg.x0.size() != p.dim())
    throw ConfigError("x0", "wrong dimension");
  if (cfg.regularizer.kind == Regularizer::Kind::l2 && !(cfg.regularizer.strength >= 0))
    throw ConfigError("regularizer", "strength must be >= 0");

  EfbvParams out;
  const CompressorParams cp = cfg.ensemble.params();
  out.eta = cp.eta;
  out.omega = cp.omega;
  out.omega_ran = cfg.ensemble.omega_ran();

  if (cfg.lambda) check_unit("lambda", *cfg.lambda);
  if (cfg.nu) check_unit("nu", *cfg.nu);
  out.lambda = cfg.lambda ? *cfg.lambda : optimal_scaling(out.eta, out.omega);
  double omega_ran_step = out.omega_ran;
  switch (cfg.mode) {
    case EfbvMode::ef21:
      if (cfg.nu && *cfg.nu != out.lambda)
        throw ConfigError("nu", "ef21 requires nu = lambda");
      out.nu = out.lambda;
      omega_ran_step = out.omega;
      break;
    case EfbvMode::diana:
      if (cfg.nu && *cfg.nu != 1) throw ConfigError("nu", "diana requires nu = 1");
      out.nu = 1;
      break;
    case EfbvMode::efbv:
    case EfbvMode::custom:
      out.nu = cfg.nu ? *cfg.nu : optimal_scaling(out.eta, out.omega_ran);
      break;
  }
  try {
    out.dp = derived_params(out.eta, out.omega, omega_ran_step, out.lambda, out.nu);
  } catch (const RateError& e) {
    throw ConfigError("lambda", e.what());
  }

  const ProblemConstants& k = p.constants();
  out.L = cfg.smoothness == SmoothnessConvention::mean ? k.L_tilde : k.L_tilde_sum;
  out.L_tilde = out.L;
  if (cfg.regularizer.kind == Regularizer::Kind::l2 && cfg.regularizer.strength > 0)
    out.regime = StepsizeRegime::KL;
  if (!p.convex()) out.regime = StepsizeRegime::nonconvex;
  out.theta = out.regime == StepsizeRegime::nonconvex ? out.dp.theta_ncvx : out.dp.theta_star;
  if (cfg.gamma) {
    if (!(*cfg.gamma > 0) || !std::isfinite(*cfg.gamma))
      throw ConfigError("gamma", "must be a positive finite number");
    out.gamma = *cfg.gamma;
  } else {
    out.gamma = stepsize_bound(out.L, out.L_tilde, out.dp, out.regime);
  }
  return out;
}

double lyapunov_efbv(const Problem& p, const EfbvState& state, double gamma, double theta,
                     double f_star, const Regularizer& reg) {
  const double gap = p.loss_avg(state.x) + reg.value(state.x) - f_star;
  if (std::isinf(theta)) return gap;
  const std::size_t n = p.clients();
  Vec g(p.dim());
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.grad(i, state.x, g);
    acc += dist_sq(g, state.h[i]);
  }
  return gap + gamma / (2 * theta) * (acc / static_cast<double>(n));
}

EfbvResult run_efbv(const Problem& p, const EfbvConfig& cfg) {
  EfbvResult res;
  res.params = resolve_efbv(p, cfg);
  const EfbvParams& prm = res.params;
  const std::size_t n = p.clients(), d = p.dim();
  const double nd = static_cast<double>(n);

  Vec x_star;
  if (p.convex()) {
    x_star = reference_solution(p, cfg.regularizer);
    res.f_star = p.loss_avg(x_star) + cfg.regularizer.value(x_star);
  }

  EfbvState& s = res.state;
  s.x = cfg.x0.empty() ? Vec(d, 0.0) : cfg.x0;
  std::vector<Vec> G(n, Vec(d));
  auto gradients = [&] {
    for (std::size_t i = 0; i < n; ++i) p.grad(i, s.x, G[i]);
  };
  gradients();
  s.h = G;
  s.h_bar.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, s.h[i], s.h_bar);
  for (auto& v : s.h_bar) v /= nd;

  res.trace = Trace(kEfbvColumns);
  res.trace.meta["algorithm"] = std::string(to_string(cfg.mode));
  res.trace.meta["seed"] = cfg.seed;
  res.trace.meta["lambda"] = prm.lambda;
  res.trace.meta["nu"] = prm.nu;
  res.trace.meta["gamma"] = prm.gamma;

  Vec gbar(d);
  auto record = [&] {
    const double f_gap = p.loss_avg(s.x) + cfg.regularizer.value(s.x) - res.f_star;
    double acc = 0;
    std::fill(gbar.begin(), gbar.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      acc += dist_sq(G[i], s.h[i]);
      axpy(1.0, G[i], gbar);
    }
    for (auto& v : gbar) v /= nd;
    const double psi =
        std::isinf(prm.theta) ? f_gap : f_gap + prm.gamma / (2 * prm.theta) * (acc / nd);
    const double dist =
        x_star.empty() ? std::numeric_limits<double>::quiet_NaN() : dist_sq(s.x, x_star);
    res.trace.add_row({static_cast<double>(s.round), f_gap, psi, dist,
                       static_cast<double>(s.scalars_sent), norm_sq(gbar)});
    if (cfg.record_iterates) res.iterates.push_back(s.x);
    if (!std::isfinite(f_gap) || f_gap > kDivergenceGap)
      throw DivergenceError("efbv diverged at round " + std::to_string(s.round) +
                            " (f gap " + fmt(f_gap) + ")");
    return f_gap;
  };

  double gap = record();
  std::vector<Vec> diff(n, Vec(d)), D(n, Vec(d));
  Vec dbar(d), g(d), y(d);
  while (s.round < cfg.T && !(cfg.stop_gap > 0 && gap <= cfg.stop_gap)) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) diff[i][j] = G[i][j] - s.h[i][j];
    s.scalars_sent += apply_ensemble(cfg.ensemble, diff, cfg.seed, s.round, D);
    std::fill(dbar.begin(), dbar.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(prm.lambda, D[i], s.h[i]);
      axpy(1.0, D[i], dbar);
    }
    for (std::size_t j = 0; j < d; ++j) {
      dbar[j] /= nd;
      g[j] = s.h_bar[j] + prm.nu * dbar[j];
      s.h_bar[j] += prm.lambda * dbar[j];
      y[j] = s.x[j] - prm.gamma * g[j];
    }
    s.x = prox_reg(cfg.regularizer, prm.gamma, y);
    ++s.round;
    gradients();
    gap = record();
  }
  res.trace.meta["rounds"] = s.round;
  return res;
}

}  // namespace commopt
