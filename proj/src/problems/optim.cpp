#include "commopt/problems/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace commopt {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kCurvature = 0.9;
// Conjugate directions need a tighter line search.
constexpr double kCurvatureCG = 0.1;
// Decrease below this relative level is rounding noise, not a failed step.
constexpr double kNoise = 1e-15;

// Budgeted oracle; every call is one pass.
struct Oracle {
  const SmoothFn& f;
  std::size_t max;
  std::size_t used = 0;

  bool exhausted() const { return used >= max; }
  double operator()(std::span<const double> x, std::span<double> g) {
    ++used;
    return f(x, g);
  }
};

MinimizeResult finish(Vec x, double fx, std::span<const double> g, const Oracle& o,
                      std::size_t it, double tol) {
  MinimizeResult r;
  r.x = std::move(x);
  r.value = fx;
  r.grad_norm = std::sqrt(norm_sq(g));
  r.evaluations = o.used;
  r.iterations = it;
  r.converged = r.grad_norm <= tol;
  return r;
}

// Armijo, or the approximate form used once f differences drown in
// rounding: f did not move beyond noise and the directional derivative
// has not overshot (phi'(t) <= -0.8 phi'(0)).
bool sufficient_decrease(double f0, double ft, double t, double slope0, double slope_t) {
  if (ft <= f0 + kArmijo * t * slope0) return true;
  return std::abs(ft - f0) <= kNoise * std::abs(f0) && slope_t <= -0.8 * slope0;
}

Vec step_along(std::span<const double> x, double t, std::span<const double> d) {
  Vec out(x.begin(), x.end());
  axpy(t, d, out);
  return out;
}

// Backtracking along a descent direction d. Returns false when the budget
// ran out before any trial was accepted.
bool armijo(Oracle& o, Vec& x, double& fx, Vec& g, std::span<const double> d, double& t,
            double min_step) {
  const double slope = dot(g, d);
  Vec gn(x.size());
  while (!o.exhausted()) {
    Vec xn = step_along(x, t, d);
    double fn = o(xn, gn);
    const bool floor = t <= min_step;
    const bool ok = min_step > 0 ? fn <= fx + kArmijo * t * slope
                                 : sufficient_decrease(fx, fn, t, slope, dot(gn, d));
    if (std::isfinite(fn) && (ok || floor)) {
      x = std::move(xn);
      fx = fn;
      g = gn;
      return true;
    }
    // With a known safe step, rounding noise sends us straight to it.
    if (min_step > 0 && std::abs(fn - fx) <= kNoise * std::abs(fx)) t = min_step;
    t = std::max(t * 0.5, min_step);
    if (t == 0.0) return false;
  }
  return false;
}

}  // namespace

MinimizeResult gradient_descent_armijo(const SmoothFn& f, Vec x0, const MinimizeOptions& opts) {
  Oracle o{f, opts.max_evals};
  Vec g(x0.size());
  double fx = o(x0, g);
  double t = std::max(opts.initial_step, opts.min_step);
  std::size_t it = 0;
  while (std::sqrt(norm_sq(g)) > opts.tol && !o.exhausted()) {
    Vec d = scaled(-1.0, g);
    if (!armijo(o, x0, fx, g, d, t, opts.min_step)) break;
    ++it;
    t *= 2.0;
  }
  return finish(std::move(x0), fx, g, o, it, opts.tol);
}

MinimizeResult gradient_descent_fixed(const SmoothFn& f, Vec x0, double step,
                                      const MinimizeOptions& opts) {
  Oracle o{f, opts.max_evals};
  Vec g(x0.size());
  double fx = 0;
  std::size_t it = 0;
  while (!o.exhausted()) {
    fx = o(x0, g);
    if (std::sqrt(norm_sq(g)) <= opts.tol) return finish(std::move(x0), fx, g, o, it, opts.tol);
    axpy(-step, g, x0);
    ++it;
  }
  // The last step was taken blind; report the gradient seen before it.
  MinimizeResult r = finish(std::move(x0), fx, g, o, it, opts.tol);
  r.converged = false;
  return r;
}

namespace {

struct WolfePoint {
  double t = 0, f = 0, slope = 0;
  Vec x, g;
};

// Strong Wolfe search: bracketing by doubling, then bisection zoom.
// Returns false only if no point with sufficient decrease was found.
bool strong_wolfe(Oracle& o, const Vec& x, double f0, const Vec& g0, const Vec& d, double t0,
                  WolfePoint& out, double curvature = kCurvature) {
  const double slope0 = dot(g0, d);
  auto eval = [&](double t) {
    WolfePoint p;
    p.t = t;
    p.x = step_along(x, t, d);
    p.g.assign(x.size(), 0.0);
    p.f = o(p.x, p.g);
    p.slope = dot(p.g, d);
    return p;
  };
  auto armijo_ok = [&](const WolfePoint& p) {
    return std::isfinite(p.f) && sufficient_decrease(f0, p.f, p.t, slope0, p.slope);
  };
  auto curvature_ok = [&](const WolfePoint& p) {
    return std::abs(p.slope) <= -curvature * slope0;
  };

  // Within rounding noise f cannot order two points; the slope then decides.
  auto higher = [&](const WolfePoint& p, const WolfePoint& ref) {
    if (std::abs(p.f - ref.f) <= kNoise * std::abs(ref.f)) return p.slope * (p.t - ref.t) >= 0;
    return p.f >= ref.f;
  };

  bool have_best = false;
  WolfePoint best;
  auto remember = [&](const WolfePoint& p) {
    if (armijo_ok(p) && (!have_best || p.f < best.f)) {
      best = p;
      have_best = true;
    }
  };

  WolfePoint lo{0.0, f0, slope0, x, g0};
  WolfePoint hi;
  bool bracketed = false;
  double t = t0;
  for (int i = 0; i < 40 && !o.exhausted(); ++i) {
    WolfePoint p = eval(t);
    remember(p);
    if (!armijo_ok(p) || (i > 0 && higher(p, lo))) {
      hi = std::move(p);
      bracketed = true;
      break;
    }
    if (curvature_ok(p)) {
      out = std::move(p);
      return true;
    }
    if (p.slope >= 0) {
      hi = lo;
      lo = std::move(p);
      bracketed = true;
      break;
    }
    lo = std::move(p);
    t *= 2.0;
  }
  if (bracketed) {
    for (int i = 0; i < 40 && !o.exhausted(); ++i) {
      // Secant on the directional derivative, kept inside the middle 80%
      // of the bracket; bisection when the slopes give no usable root.
      const double width = hi.t - lo.t;
      double trial = 0.5 * (lo.t + hi.t);
      const double ds = hi.slope - lo.slope;
      if (hi.t != lo.t && std::isfinite(hi.slope) && ds != 0) {
        const double sec = lo.t - lo.slope * width / ds;
        const double a = lo.t + 0.1 * width, b = hi.t - 0.1 * width;
        if (std::isfinite(sec)) trial = std::clamp(sec, std::min(a, b), std::max(a, b));
      }
      WolfePoint p = eval(trial);
      remember(p);
      if (!armijo_ok(p) || higher(p, lo)) {
        hi = std::move(p);
      } else {
        if (curvature_ok(p)) {
          out = std::move(p);
          return true;
        }
        if (p.slope * (hi.t - lo.t) >= 0) hi = lo;
        lo = std::move(p);
      }
      if (std::abs(hi.t - lo.t) <= 1e-16 * std::max(1.0, lo.t)) break;
    }
  }
  if (have_best) {
    out = std::move(best);
    return true;
  }
  return false;
}

}  // namespace

MinimizeResult nonlinear_cg(const SmoothFn& f, Vec x0, const MinimizeOptions& opts) {
  Oracle o{f, opts.max_evals};
  const std::size_t n = x0.size();
  Vec g(n);
  double fx = o(x0, g);
  Vec d = scaled(-1.0, g);
  double t = std::min(1.0, 1.0 / std::sqrt(norm_sq(g))) * opts.initial_step;
  std::size_t it = 0;
  while (std::sqrt(norm_sq(g)) > opts.tol && !o.exhausted() && it < opts.max_iter) {
    if (dot(g, d) >= 0) d = scaled(-1.0, g);
    const double slope = dot(g, d);
    WolfePoint p;
    if (!strong_wolfe(o, x0, fx, g, d, t, p, kCurvatureCG)) break;
    ++it;
    const Vec g_old = std::move(g);
    x0 = std::move(p.x);
    g = std::move(p.g);
    fx = p.f;
    double beta = 0;
    const double gg = norm_sq(g_old);
    if (gg > 0 && it % std::max<std::size_t>(n, 1) != 0)
      beta = std::max(0.0, (norm_sq(g) - dot(g, g_old)) / gg);
    for (std::size_t j = 0; j < n; ++j) d[j] = -g[j] + beta * d[j];
    // Next trial step matches the first-order change of the last one.
    const double slope_new = dot(g, d);
    t = slope_new < 0 ? p.t * slope / slope_new : 1.0;
  }
  return finish(std::move(x0), fx, g, o, it, opts.tol);
}

MinimizeResult lbfgs(const SmoothFn& f, Vec x0, const MinimizeOptions& opts, std::size_t memory) {
  Oracle o{f, opts.max_evals};
  const std::size_t n = x0.size();
  Vec g(n);
  double fx = o(x0, g);
  std::deque<std::pair<Vec, Vec>> pairs;  // (s, y)
  std::deque<double> rhos;
  std::size_t it = 0;
  while (std::sqrt(norm_sq(g)) > opts.tol && !o.exhausted() && it < opts.max_iter) {
    // two-loop recursion
    Vec q = g;
    std::vector<double> a(pairs.size());
    for (std::size_t k = pairs.size(); k-- > 0;) {
      a[k] = rhos[k] * dot(pairs[k].first, q);
      axpy(-a[k], pairs[k].second, q);
    }
    double scale = 1.0;
    if (!pairs.empty()) {
      const auto& [s, y] = pairs.back();
      scale = dot(s, y) / norm_sq(y);
    }
    for (double& v : q) v *= scale;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      double b = rhos[k] * dot(pairs[k].second, q);
      axpy(a[k] - b, pairs[k].first, q);
    }
    Vec d = scaled(-1.0, q);
    if (dot(d, g) >= 0) {
      d = scaled(-1.0, g);
      pairs.clear();
      rhos.clear();
    }
    double t0 = pairs.empty() ? std::min(1.0, 1.0 / std::sqrt(norm_sq(g))) * opts.initial_step
                              : 1.0;
    WolfePoint p;
    if (!strong_wolfe(o, x0, fx, g, d, t0, p)) break;
    Vec s = sub(p.x, x0);
    Vec y = sub(p.g, g);
    const double sy = dot(s, y);
    if (sy > 1e-16 * std::sqrt(norm_sq(s) * norm_sq(y))) {
      pairs.emplace_back(std::move(s), std::move(y));
      rhos.push_back(1.0 / sy);
      if (pairs.size() > memory) {
        pairs.pop_front();
        rhos.pop_front();
      }
    }
    x0 = std::move(p.x);
    g = std::move(p.g);
    fx = p.f;
    ++it;
  }
  return finish(std::move(x0), fx, g, o, it, opts.tol);
}

}  // namespace commopt
