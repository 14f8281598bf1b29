#include "commopt/problems/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "commopt/errors.hpp"
#include "commopt/problems/optim.hpp"

namespace commopt {

std::string_view to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::l2_logistic: return "l2_logistic";
    case ProblemKind::nonconvex_logistic: return "nonconvex_logistic";
    case ProblemKind::quadratic: return "quadratic";
  }
  return "?";
}

namespace {

// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

// 1 / (1 + exp(z))
double sigmoid_neg(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

std::vector<Example> gather(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<Example> rows;
  rows.reserve(idx.size());
  for (auto j : idx) {
    if (j >= ds.count()) throw InvalidArgument("partition index out of range");
    rows.push_back(ds[j]);
  }
  return rows;
}

}  // namespace

Problem Problem::logistic(const Dataset& ds, const ClientPartition& part, double mu) {
  if (!(mu > 0)) throw InvalidArgument("l2_logistic requires mu > 0");
  if (part.clients() == 0) throw InvalidArgument("problem needs at least one client");
  Problem p;
  p.kind_ = ProblemKind::l2_logistic;
  p.n_ = part.clients();
  p.d_ = ds.dim();
  p.reg_ = mu;
  for (const auto& a : part.assignments) {
    if (a.empty()) throw InvalidArgument("client with no data");
    p.logistic_.push_back({gather(ds, a)});
  }
  p.cache_ = std::make_shared<ConstantsCache>();
  return p;
}

Problem Problem::nonconvex_logistic(const Dataset& ds, const ClientPartition& part,
                                    double lambda) {
  if (!(lambda >= 0)) throw InvalidArgument("nonconvex regularizer weight must be >= 0");
  Problem p = logistic(ds, part, 1.0);
  p.kind_ = ProblemKind::nonconvex_logistic;
  p.reg_ = lambda;
  return p;
}

Problem Problem::quadratic(std::vector<Vec> curvature, std::vector<Vec> centers) {
  if (curvature.empty() || curvature.size() != centers.size())
    throw InvalidArgument("quadratic: need matching, nonempty curvature and center lists");
  Problem p;
  p.kind_ = ProblemKind::quadratic;
  p.n_ = curvature.size();
  p.d_ = centers.front().size();
  if (p.d_ == 0) throw InvalidArgument("quadratic: dimension must be positive");
  for (std::size_t i = 0; i < p.n_; ++i) {
    if (curvature[i].size() != p.d_ || centers[i].size() != p.d_)
      throw InvalidArgument("quadratic: dimension mismatch");
    for (double a : curvature[i])
      if (!(a > 0) || !std::isfinite(a)) throw InvalidArgument("quadratic: curvature must be > 0");
    p.quadratic_.push_back({std::move(curvature[i]), std::move(centers[i])});
  }
  p.cache_ = std::make_shared<ConstantsCache>();
  return p;
}

void Problem::check_client(std::size_t client, std::size_t xdim) const {
  if (client >= n_) throw InvalidArgument("client index out of range");
  if (xdim != d_)
    throw InvalidArgument("dimension mismatch: expected " + std::to_string(d_) + ", got " +
                          std::to_string(xdim));
}

std::size_t Problem::samples(std::size_t client) const {
  if (client >= n_) throw InvalidArgument("client index out of range");
  return kind_ == ProblemKind::quadratic ? 1 : logistic_[client].rows.size();
}

double Problem::loss(std::size_t client, std::span<const double> x) const {
  check_client(client, x.size());
  if (kind_ == ProblemKind::quadratic) {
    const auto& q = quadratic_[client];
    double s = 0;
    for (std::size_t j = 0; j < d_; ++j) {
      const double r = x[j] - q.c[j];
      s += q.a[j] * r * r;
    }
    return 0.5 * s;
  }
  const auto& rows = logistic_[client].rows;
  double s = 0;
  for (const auto& ex : rows) s += softplus_neg(ex.label * ex.dot(x));
  s /= static_cast<double>(rows.size());
  if (kind_ == ProblemKind::l2_logistic) return s + 0.5 * reg_ * norm_sq(x);
  for (double v : x) s += reg_ * v * v / (1.0 + v * v);
  return s;
}

void Problem::grad(std::size_t client, std::span<const double> x, std::span<double> out) const {
  check_client(client, x.size());
  if (out.size() != d_) throw InvalidArgument("gradient buffer has wrong dimension");
  if (kind_ == ProblemKind::quadratic) {
    const auto& q = quadratic_[client];
    for (std::size_t j = 0; j < d_; ++j) out[j] = q.a[j] * (x[j] - q.c[j]);
    return;
  }
  std::fill(out.begin(), out.end(), 0.0);
  const auto& rows = logistic_[client].rows;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (const auto& ex : rows) {
    const double w = -ex.label * sigmoid_neg(ex.label * ex.dot(x)) * inv;
    for (const auto& f : ex.features) out[f.index] += w * f.value;
  }
  if (kind_ == ProblemKind::l2_logistic) {
    axpy(reg_, x, out);
  } else {
    for (std::size_t j = 0; j < d_; ++j) {
      const double u = 1.0 + x[j] * x[j];
      out[j] += 2.0 * reg_ * x[j] / (u * u);
    }
  }
}

Vec Problem::grad(std::size_t client, std::span<const double> x) const {
  Vec g(d_);
  grad(client, x, g);
  return g;
}

void Problem::sample_grad(std::size_t client, std::size_t j, std::span<const double> x,
                          std::span<double> out) const {
  if (kind_ == ProblemKind::quadratic) {
    if (j != 0) throw InvalidArgument("quadratic clients have a single sample");
    grad(client, x, out);
    return;
  }
  check_client(client, x.size());
  const auto& rows = logistic_[client].rows;
  if (j >= rows.size()) throw InvalidArgument("sample index out of range");
  std::fill(out.begin(), out.end(), 0.0);
  const auto& ex = rows[j];
  const double w = -ex.label * sigmoid_neg(ex.label * ex.dot(x));
  for (const auto& f : ex.features) out[f.index] += w * f.value;
  if (kind_ == ProblemKind::l2_logistic) {
    axpy(reg_, x, out);
  } else {
    for (std::size_t k = 0; k < d_; ++k) {
      const double u = 1.0 + x[k] * x[k];
      out[k] += 2.0 * reg_ * x[k] / (u * u);
    }
  }
}

double Problem::loss_avg(std::span<const double> x) const {
  double s = 0;
  for (std::size_t i = 0; i < n_; ++i) s += loss(i, x);
  return s / static_cast<double>(n_);
}

Vec Problem::grad_avg(std::span<const double> x) const {
  Vec g(d_, 0.0), gi(d_);
  for (std::size_t i = 0; i < n_; ++i) {
    grad(i, x, gi);
    axpy(1.0, gi, g);
  }
  for (double& v : g) v /= static_cast<double>(n_);
  return g;
}

const Vec& Problem::curvature(std::size_t client) const {
  if (kind_ != ProblemKind::quadratic) throw InvalidArgument("not a quadratic problem");
  return quadratic_.at(client).a;
}

const Vec& Problem::center(std::size_t client) const {
  if (kind_ != ProblemKind::quadratic) throw InvalidArgument("not a quadratic problem");
  return quadratic_.at(client).c;
}

ProblemConstants Problem::compute_constants() const {
  ProblemConstants c;
  c.L.resize(n_);
  c.mu.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    if (kind_ == ProblemKind::quadratic) {
      const auto& a = quadratic_[i].a;
      c.L[i] = *std::max_element(a.begin(), a.end());
      c.mu[i] = *std::min_element(a.begin(), a.end());
    } else {
      const auto& rows = logistic_[i].rows;
      double s = 0;
      for (const auto& ex : rows) s += ex.norm_sq();
      const double data = s / (4.0 * static_cast<double>(rows.size()));
      if (kind_ == ProblemKind::l2_logistic) {
        c.L[i] = data + reg_;
        c.mu[i] = reg_;
      } else {
        // x^2/(1+x^2) has second derivative at most 2
        c.L[i] = data + 2.0 * reg_;
        c.mu[i] = 0.0;
      }
    }
  }
  double sq = 0, mu_sum = 0;
  c.kappa_max = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    sq += c.L[i] * c.L[i];
    mu_sum += c.mu[i];
    c.L_max = std::max(c.L_max, c.L[i]);
    c.kappa_max = std::max(c.kappa_max, c.mu[i] > 0 ? c.L[i] / c.mu[i]
                                                    : std::numeric_limits<double>::infinity());
  }
  c.L_tilde = std::sqrt(sq / static_cast<double>(n_));
  c.L_tilde_sum = std::sqrt(sq);
  c.L_global = c.L_tilde;
  c.mu_global = mu_sum / static_cast<double>(n_);
  return c;
}

const ProblemConstants& Problem::constants() const {
  std::call_once(cache_->once, [this] { cache_->value = compute_constants(); });
  return cache_->value;
}

Regularizer Regularizer::l2(double s) {
  if (!(s >= 0)) throw InvalidArgument("regularizer strength must be >= 0");
  return {Kind::l2, s};
}

double Regularizer::value(std::span<const double> x) const {
  return kind == Kind::l2 ? 0.5 * strength * norm_sq(x) : 0.0;
}

Vec prox_reg(const Regularizer& reg, double gamma, std::span<const double> x) {
  if (!(gamma > 0)) throw InvalidArgument("prox stepsize must be > 0");
  if (reg.kind == Regularizer::Kind::zero) return Vec(x.begin(), x.end());
  return scaled(1.0 / (1.0 + gamma * reg.strength), x);
}

namespace {

Vec solve_reference(const Problem& p, const Regularizer& reg, double tol,
                    std::span<const double> x0, std::size_t max_iter) {
  if (!p.convex()) throw InvalidArgument("reference solution needs a convex problem");
  if (!(tol > 0)) throw InvalidArgument("tolerance must be > 0");
  const std::size_t d = p.dim(), n = p.clients();
  const double s = reg.kind == Regularizer::Kind::l2 ? reg.strength : 0.0;

  if (p.kind() == ProblemKind::quadratic) {
    Vec x(d);
    for (std::size_t j = 0; j < d; ++j) {
      double num = 0, den = 0;
      for (std::size_t i = 0; i < n; ++i) {
        num += p.curvature(i)[j] * p.center(i)[j];
        den += p.curvature(i)[j];
      }
      num /= static_cast<double>(n);
      den /= static_cast<double>(n);
      x[j] = num / (den + s);
    }
    return x;
  }

  SmoothFn obj = [&](std::span<const double> x, std::span<double> g) {
    Vec ga = p.grad_avg(x);
    for (std::size_t j = 0; j < d; ++j) g[j] = ga[j] + s * x[j];
    return p.loss_avg(x) + reg.value(x);
  };
  Vec start = x0.empty() ? Vec(d, 0.0) : Vec(x0.begin(), x0.end());
  if (start.size() != d) throw InvalidArgument("warm start has wrong dimension");
  MinimizeOptions opts;
  opts.tol = tol;
  opts.max_evals = max_iter;
  opts.min_step = 1.0 / (p.constants().L_tilde + s);
  opts.initial_step = opts.min_step;
  auto r = gradient_descent_armijo(obj, std::move(start), opts);
  if (!r.converged)
    throw DivergenceError("reference solver: gradient norm " + std::to_string(r.grad_norm) +
                          " above tolerance after " + std::to_string(r.evaluations) +
                          " evaluations");
  return r.x;
}

}  // namespace

Vec reference_solution(const Problem& p, const Regularizer& reg, double tol,
                       std::span<const double> x0, std::size_t max_iter) {
  if (reg.kind == Regularizer::Kind::zero && tol == 1e-12 && x0.empty() && max_iter == 2'000'000)
    return p.solution();
  return solve_reference(p, reg, tol, x0, max_iter);
}

const Vec& Problem::solution() const {
  std::call_once(cache_->solution_once,
                 [this] { cache_->solution = solve_reference(*this, {}, 1e-12, {}, 2'000'000); });
  return cache_->solution;
}

LocalMinimum local_minimizer(const Problem& p, std::size_t client, double eps_loc,
                             std::size_t max_iter) {
  if (!p.convex()) throw InvalidArgument("local minimizer needs a convex problem");
  if (!(eps_loc > 0)) throw InvalidArgument("eps_loc must be > 0");
  if (client >= p.clients()) throw InvalidArgument("client index out of range");
  if (p.kind() == ProblemKind::quadratic) return {p.center(client), 1};

  SmoothFn obj = [&](std::span<const double> x, std::span<double> g) {
    p.grad(client, x, g);
    return p.loss(client, x);
  };
  MinimizeOptions opts;
  // strict inequality in the certificate
  opts.tol = std::nextafter(eps_loc, 0.0);
  opts.max_evals = max_iter;
  opts.min_step = 1.0 / p.constants().L[client];
  opts.initial_step = opts.min_step;
  auto r = gradient_descent_armijo(obj, Vec(p.dim(), 0.0), opts);
  if (!r.converged)
    throw DivergenceError("local minimizer for client " + std::to_string(client) +
                          " did not reach the gradient tolerance");
  return {std::move(r.x), r.iterations};
}

std::string constants_to_json(const ProblemConstants& c) {
  nlohmann::json j;
  j["L"] = c.L;
  j["mu"] = c.mu;
  j["L_tilde"] = c.L_tilde;
  j["L_tilde_sum"] = c.L_tilde_sum;
  j["L_max"] = c.L_max;
  j["L_global"] = c.L_global;
  j["mu_global"] = c.mu_global;
  j["kappa_max"] = std::isfinite(c.kappa_max) ? nlohmann::json(c.kappa_max) : nlohmann::json();
  return j.dump();
}

}  // namespace commopt
