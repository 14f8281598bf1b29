#include "commopt/sppm/sppm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "commopt/datasets/kmeans.hpp"
#include "commopt/errors.hpp"
#include "commopt/problems/optim.hpp"

namespace commopt {

namespace {

constexpr double kDivergenceFactor = 1e12;
constexpr double kMeanGradTol = 1e-8;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void check_blocks(std::size_t n, const Blocks& blocks) {
  if (blocks.empty()) throw ConfigError("sampling.blocks", "need at least one block");
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (const auto& b : blocks) {
    if (b.empty()) throw ConfigError("sampling.blocks", "blocks must be nonempty");
    for (std::size_t i : b) {
      if (i >= n) throw ConfigError("sampling.blocks", "client index out of range");
      if (seen[i]) throw ConfigError("sampling.blocks", "blocks overlap");
      seen[i] = 1;
      ++total;
    }
  }
  if (total != n) throw ConfigError("sampling.blocks", "blocks do not cover every client");
}

void check_probs(const Vec& p, const char* field) {
  double sum = 0;
  for (double v : p) {
    if (!(v > 0) || !std::isfinite(v)) throw ConfigError(field, "probabilities must be > 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(field, "probabilities must sum to 1");
}

std::size_t pick(const Vec& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    acc += probs[j];
    if (u < acc) return j;
  }
  return probs.size() - 1;
}

Cohort sorted_cohort(std::vector<std::pair<std::size_t, double>> m) {
  std::sort(m.begin(), m.end());
  Cohort c;
  for (auto& [i, w] : m) {
    c.members.push_back(i);
    c.weights.push_back(w);
  }
  return c;
}

Cohort whole_block(const SamplingScheme& s, std::size_t j) {
  std::vector<std::pair<std::size_t, double>> m;
  const double w = 1.0 / (static_cast<double>(s.n) * s.q[j]);
  for (std::size_t i : s.blocks[j]) m.emplace_back(i, w);
  return sorted_cohort(std::move(m));
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

void check_grads(const std::vector<Vec>& grads, std::size_t n) {
  if (grads.size() != n) throw InvalidArgument("need one gradient per client");
  const std::size_t d = grads[0].size();
  Vec m(d, 0.0);
  for (const auto& g : grads) {
    if (g.size() != d) throw InvalidArgument("gradients differ in dimension");
    axpy(1.0, g, m);
  }
  for (double& v : m) v /= static_cast<double>(n);
  if (std::sqrt(norm_sq(m)) > kMeanGradTol)
    throw InvalidArgument("gradients are not taken at an optimum: mean norm " +
                          std::to_string(std::sqrt(norm_sq(m))));
}

Vec block_mean(const std::vector<std::size_t>& b, const std::vector<Vec>& grads) {
  Vec m(grads[0].size(), 0.0);
  for (std::size_t i : b) axpy(1.0, grads[i], m);
  for (double& v : m) v /= static_cast<double>(b.size());
  return m;
}

double weighted_norm_sq(const Cohort& c, const std::vector<Vec>& grads) {
  Vec g(grads[0].size(), 0.0);
  for (std::size_t k = 0; k < c.members.size(); ++k) axpy(c.weights[k], grads[c.members[k]], g);
  return norm_sq(g);
}

void check_gamma(double gamma) {
  if (!(gamma > 0) || !std::isfinite(gamma)) throw ConfigError("gamma", "must be > 0");
}

void check_run(const Problem& p, const SamplingScheme& s, const CostModel& cost,
               const SppmOptions& opts) {
  if (!p.convex()) throw ConfigError("problem", "SPPM runs need a convex problem");
  s.validate();
  if (s.n != p.clients()) throw ConfigError("sampling.n", "does not match the client count");
  cost.validate();
  if (!opts.x0.empty() && opts.x0.size() != p.dim()) throw ConfigError("x0", "wrong dimension");
}

// Shared driver state for the SPPM family.
struct Runner {
  SppmResult res;
  double dist0 = 0;
  double cost_cum = 0;
  bool with_extra = false;

  Runner(const Problem& p, const SppmOptions& opts, std::vector<std::string> extra) {
    std::vector<std::string> cols = kSppmColumns;
    with_extra = !extra.empty();
    for (auto& c : extra) cols.push_back(std::move(c));
    res.trace = Trace(std::move(cols));
    res.x_star = reference_solution(p);
    res.x = opts.x0.empty() ? Vec(p.dim(), 0.0) : opts.x0;
    dist0 = dist_sq(res.x, res.x_star);
    std::vector<double> row = {0.0, dist0, 0.0, 0.0};
    if (with_extra) row.push_back(kNaN);
    res.trace.add_row(row);
  }

  // Returns true when the target was reached.
  bool record(std::size_t t, double k_used, const CostModel& cost, double target,
              double extra = kNaN) {
    const double d = dist_sq(res.x, res.x_star);
    if (!std::isfinite(d) || d > kDivergenceFactor * std::max(1.0, dist0))
      throw DivergenceError("iterates diverged at round " + std::to_string(t));
    cost_cum += cost.c1 * k_used + cost.c2;
    std::vector<double> row = {static_cast<double>(t), d, k_used, cost_cum};
    if (with_extra) row.push_back(extra);
    res.trace.add_row(row);
    return target > 0 && d < target;
  }
};

}  // namespace

std::string_view to_string(SamplingKind k) {
  switch (k) {
    case SamplingKind::full: return "full";
    case SamplingKind::nonuniform: return "nonuniform";
    case SamplingKind::nice: return "nice";
    case SamplingKind::block: return "block";
    case SamplingKind::stratified: return "stratified";
  }
  return "?";
}

SamplingKind parse_sampling_kind(std::string_view s) {
  for (auto k : {SamplingKind::full, SamplingKind::nonuniform, SamplingKind::nice,
                 SamplingKind::block, SamplingKind::stratified})
    if (s == to_string(k)) return k;
  throw ConfigError("sampling.kind", "unknown sampling '" + std::string(s) + "'");
}

SamplingScheme SamplingScheme::full(std::size_t n) {
  SamplingScheme s;
  s.n = n;
  return s;
}

SamplingScheme SamplingScheme::nonuniform(Vec p) {
  SamplingScheme s;
  s.kind = SamplingKind::nonuniform;
  s.n = p.size();
  s.p = std::move(p);
  return s;
}

SamplingScheme SamplingScheme::nice(std::size_t n, std::size_t tau) {
  SamplingScheme s;
  s.kind = SamplingKind::nice;
  s.n = n;
  s.tau = tau;
  return s;
}

SamplingScheme SamplingScheme::block(std::size_t n, Blocks blocks, Vec q) {
  SamplingScheme s;
  s.kind = SamplingKind::block;
  s.n = n;
  if (q.empty()) q.assign(blocks.size(), 1.0 / static_cast<double>(blocks.size()));
  s.blocks = std::move(blocks);
  s.q = std::move(q);
  return s;
}

SamplingScheme SamplingScheme::stratified(std::size_t n, Blocks blocks) {
  SamplingScheme s;
  s.kind = SamplingKind::stratified;
  s.n = n;
  s.blocks = std::move(blocks);
  return s;
}

void SamplingScheme::validate() const {
  if (n == 0) throw ConfigError("sampling.n", "need at least one client");
  switch (kind) {
    case SamplingKind::full: break;
    case SamplingKind::nonuniform:
      if (p.size() != n) throw ConfigError("sampling.p", "need one probability per client");
      check_probs(p, "sampling.p");
      break;
    case SamplingKind::nice:
      if (tau < 1 || tau > n) throw ConfigError("sampling.tau", "must lie in [1, n]");
      break;
    case SamplingKind::block:
      check_blocks(n, blocks);
      if (q.size() != blocks.size()) throw ConfigError("sampling.q", "need one probability per block");
      check_probs(q, "sampling.q");
      break;
    case SamplingKind::stratified:
      check_blocks(n, blocks);
      break;
  }
}

Vec SamplingScheme::inclusion() const {
  validate();
  Vec out(n, 1.0);
  switch (kind) {
    case SamplingKind::full: break;
    case SamplingKind::nonuniform: out = p; break;
    case SamplingKind::nice:
      std::fill(out.begin(), out.end(), static_cast<double>(tau) / static_cast<double>(n));
      break;
    case SamplingKind::block:
      for (std::size_t j = 0; j < blocks.size(); ++j)
        for (std::size_t i : blocks[j]) out[i] = q[j];
      break;
    case SamplingKind::stratified:
      for (const auto& b : blocks)
        for (std::size_t i : b) out[i] = 1.0 / static_cast<double>(b.size());
      break;
  }
  return out;
}

std::string SamplingScheme::describe() const {
  switch (kind) {
    case SamplingKind::nice: return "nice(" + std::to_string(tau) + ")";
    case SamplingKind::block: return "block(b=" + std::to_string(blocks.size()) + ")";
    case SamplingKind::stratified: return "stratified(b=" + std::to_string(blocks.size()) + ")";
    default: return std::string(to_string(kind));
  }
}

Cohort sample_cohort(const SamplingScheme& s, Rng& rng) {
  const double n = static_cast<double>(s.n);
  std::vector<std::pair<std::size_t, double>> m;
  switch (s.kind) {
    case SamplingKind::full:
      for (std::size_t i = 0; i < s.n; ++i) m.emplace_back(i, 1.0 / n);
      break;
    case SamplingKind::nonuniform: {
      const std::size_t i = pick(s.p, rng);
      m.emplace_back(i, 1.0 / (n * s.p[i]));
      break;
    }
    case SamplingKind::nice: {
      std::vector<std::size_t> idx(s.n);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t k = 0; k < s.tau; ++k) {
        const std::size_t j = k + rng.below(s.n - k);
        std::swap(idx[k], idx[j]);
      }
      for (std::size_t k = 0; k < s.tau; ++k) m.emplace_back(idx[k], 1.0 / static_cast<double>(s.tau));
      break;
    }
    case SamplingKind::block:
      return whole_block(s, pick(s.q, rng));
    case SamplingKind::stratified:
      for (const auto& b : s.blocks)
        m.emplace_back(b[rng.below(b.size())], static_cast<double>(b.size()) / n);
      break;
  }
  return sorted_cohort(std::move(m));
}

std::vector<WeightedCohort> enumerate_cohorts(const SamplingScheme& s) {
  s.validate();
  const double n = static_cast<double>(s.n);
  std::vector<WeightedCohort> out;
  const bool combinatorial = s.kind == SamplingKind::nice || s.kind == SamplingKind::stratified ||
                             s.kind == SamplingKind::nonuniform;
  if (combinatorial && s.n > kMaxEnumerationClients)
    throw EnumerationLimit("cohort enumeration is limited to n <= " +
                           std::to_string(kMaxEnumerationClients) + ", got " +
                           std::to_string(s.n));
  switch (s.kind) {
    case SamplingKind::full: {
      Cohort c;
      for (std::size_t i = 0; i < s.n; ++i) {
        c.members.push_back(i);
        c.weights.push_back(1.0 / n);
      }
      out.push_back({1.0, std::move(c)});
      break;
    }
    case SamplingKind::nonuniform:
      for (std::size_t i = 0; i < s.n; ++i) out.push_back({s.p[i], Cohort{{i}, {1.0 / (n * s.p[i])}}});
      break;
    case SamplingKind::nice: {
      const double count = binomial(s.n, s.tau);
      if (count > static_cast<double>(kMaxEnumeratedCohorts))
        throw EnumerationLimit("too many cohorts to enumerate");
      const double pc = 1.0 / count;
      const double w = 1.0 / static_cast<double>(s.tau);
      std::vector<std::size_t> idx(s.tau);
      std::iota(idx.begin(), idx.end(), 0);
      while (true) {
        out.push_back({pc, Cohort{idx, Vec(s.tau, w)}});
        std::size_t k = s.tau;
        while (k > 0 && idx[k - 1] == s.n - s.tau + k - 1) --k;
        if (k == 0) break;
        ++idx[k - 1];
        for (std::size_t j = k; j < s.tau; ++j) idx[j] = idx[j - 1] + 1;
      }
      break;
    }
    case SamplingKind::block:
      for (std::size_t j = 0; j < s.blocks.size(); ++j) out.push_back({s.q[j], whole_block(s, j)});
      break;
    case SamplingKind::stratified: {
      double count = 1;
      for (const auto& b : s.blocks) count *= static_cast<double>(b.size());
      if (count > static_cast<double>(kMaxEnumeratedCohorts))
        throw EnumerationLimit("too many cohorts to enumerate");
      const double pc = 1.0 / count;
      std::vector<std::size_t> pos(s.blocks.size(), 0);
      while (true) {
        std::vector<std::pair<std::size_t, double>> m;
        for (std::size_t j = 0; j < s.blocks.size(); ++j)
          m.emplace_back(s.blocks[j][pos[j]], static_cast<double>(s.blocks[j].size()) / n);
        out.push_back({pc, sorted_cohort(std::move(m))});
        std::size_t j = 0;
        while (j < pos.size() && ++pos[j] == s.blocks[j].size()) pos[j++] = 0;
        if (j == pos.size()) break;
      }
      break;
    }
  }
  return out;
}

CohortObjective::CohortObjective(const Problem& p, Cohort c) : p_(&p), c_(std::move(c)) {
  if (c_.members.empty()) throw InvalidArgument("empty cohort");
  if (c_.weights.size() != c_.members.size()) throw InvalidArgument("one weight per member");
  for (std::size_t k = 0; k < c_.members.size(); ++k) {
    if (c_.members[k] >= p.clients()) throw InvalidArgument("cohort member out of range");
    if (!(c_.weights[k] > 0)) throw InvalidArgument("cohort weights must be positive");
  }
}

double CohortObjective::value(std::span<const double> x) const {
  double v = 0;
  for (std::size_t k = 0; k < c_.members.size(); ++k) v += c_.weights[k] * p_->loss(c_.members[k], x);
  return v;
}

void CohortObjective::grad(std::span<const double> x, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  Vec g(x.size());
  for (std::size_t k = 0; k < c_.members.size(); ++k) {
    p_->grad(c_.members[k], x, g);
    axpy(c_.weights[k], g, out);
  }
}

double CohortObjective::mu() const {
  const auto& mu = p_->constants().mu;
  double v = 0;
  for (std::size_t k = 0; k < c_.members.size(); ++k) v += c_.weights[k] * mu[c_.members[k]];
  return v;
}

double CohortObjective::smoothness() const {
  const auto& L = p_->constants().L;
  double v = 0;
  for (std::size_t k = 0; k < c_.members.size(); ++k) v += c_.weights[k] * L[c_.members[k]];
  return v;
}

std::string_view to_string(StatsMethod m) {
  return m == StatsMethod::closed_form ? "closed_form" : "enumeration";
}

double mu_as(const SamplingScheme& s, std::span<const double> mu, StatsMethod m) {
  s.validate();
  if (mu.size() != s.n) throw InvalidArgument("need one mu per client");
  const double n = static_cast<double>(s.n);
  if (m == StatsMethod::enumeration) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& wc : enumerate_cohorts(s)) {
      double v = 0;
      for (std::size_t k = 0; k < wc.cohort.members.size(); ++k)
        v += wc.cohort.weights[k] * mu[wc.cohort.members[k]];
      best = std::min(best, v);
    }
    return best;
  }
  switch (s.kind) {
    case SamplingKind::full: return mean(mu);
    case SamplingKind::nonuniform: {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) best = std::min(best, mu[i] / (n * s.p[i]));
      return best;
    }
    case SamplingKind::nice: {
      Vec sorted(mu.begin(), mu.end());
      std::sort(sorted.begin(), sorted.end());
      return mean(std::span<const double>(sorted).first(s.tau));
    }
    case SamplingKind::block: {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.blocks.size(); ++j) {
        double v = 0;
        for (std::size_t i : s.blocks[j]) v += mu[i];
        best = std::min(best, v / (n * s.q[j]));
      }
      return best;
    }
    case SamplingKind::stratified: {
      double v = 0;
      for (const auto& b : s.blocks) {
        double lo = std::numeric_limits<double>::infinity();
        for (std::size_t i : b) lo = std::min(lo, mu[i]);
        v += static_cast<double>(b.size()) / n * lo;
      }
      return v;
    }
  }
  return 0;
}

double sigma_star_as(const SamplingScheme& s, const std::vector<Vec>& grads, StatsMethod m) {
  s.validate();
  check_grads(grads, s.n);
  const double n = static_cast<double>(s.n);
  const std::size_t d = grads[0].size();
  if (m == StatsMethod::enumeration) {
    double v = 0;
    for (const auto& wc : enumerate_cohorts(s)) v += wc.prob * weighted_norm_sq(wc.cohort, grads);
    return v;
  }
  Vec gbar(d, 0.0);
  for (const auto& g : grads) axpy(1.0, g, gbar);
  for (double& x : gbar) x /= n;
  switch (s.kind) {
    case SamplingKind::full: return norm_sq(gbar);
    case SamplingKind::nonuniform: {
      double v = 0;
      for (std::size_t i = 0; i < s.n; ++i) v += norm_sq(grads[i]) / (n * n * s.p[i]);
      return v;
    }
    case SamplingKind::nice: {
      // Sampling without replacement: mean term plus the finite-population
      // variance of a size-tau average.
      if (s.n == 1) return norm_sq(gbar);
      double spread = 0;
      for (const auto& g : grads) spread += dist_sq(g, gbar);
      const double tau = static_cast<double>(s.tau);
      return norm_sq(gbar) + (n - tau) / (tau * (n - 1)) * spread / n;
    }
    case SamplingKind::block: {
      double v = 0;
      for (std::size_t j = 0; j < s.blocks.size(); ++j) {
        Vec g(d, 0.0);
        for (std::size_t i : s.blocks[j]) axpy(1.0, grads[i], g);
        v += norm_sq(g) / (n * n * s.q[j]);
      }
      return v;
    }
    case SamplingKind::stratified: {
      // Independent draws per block: ||sum_j w_j m_j||^2 + sum_j w_j^2 Var_j.
      Vec centre(d, 0.0);
      double var = 0;
      for (const auto& b : s.blocks) {
        const double w = static_cast<double>(b.size()) / n;
        const Vec mj = block_mean(b, grads);
        axpy(w, mj, centre);
        double within = 0;
        for (std::size_t i : b) within += dist_sq(grads[i], mj);
        var += w * w * within / static_cast<double>(b.size());
      }
      return norm_sq(centre) + var;
    }
  }
  return 0;
}

SamplingStats sampling_stats(const SamplingScheme& s, std::span<const double> mu,
                             const std::vector<Vec>& grads, StatsMethod m) {
  SamplingStats st;
  st.mu_as = mu_as(s, mu, m);
  st.sigma_star_as_sq = sigma_star_as(s, grads, m);
  if (s.kind == SamplingKind::stratified) st.sigma_j_sq = cluster_dispersion(s.blocks, grads);
  st.method = m;
  return st;
}

Vec cluster_dispersion(const Blocks& blocks, const std::vector<Vec>& grads) {
  Vec out;
  for (const auto& b : blocks) {
    const Vec mj = block_mean(b, grads);
    double worst = 0;
    for (std::size_t i : b) worst = std::max(worst, dist_sq(grads[i], mj));
    out.push_back(worst);
  }
  return out;
}

double stratified_variance_bound(std::size_t n, const Blocks& blocks,
                                 const std::vector<Vec>& grads) {
  const Vec sj = cluster_dispersion(blocks, grads);
  double v = 0;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const double c = static_cast<double>(blocks[j].size());
    v += c * c * sj[j];
  }
  const double nn = static_cast<double>(n);
  return static_cast<double>(blocks.size()) / (nn * nn) * v;
}

std::vector<Vec> grads_at(const Problem& p, std::span<const double> x) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < p.clients(); ++i) out.push_back(p.grad(i, x));
  return out;
}

BoundValue convergence_bound(double gamma, double mu, double sigma_sq, double dist0_sq,
                             double t) {
  if (!(gamma > 0) || !(mu > 0) || !(sigma_sq >= 0) || !(dist0_sq >= 0) || !(t >= 0))
    throw InvalidArgument("convergence_bound needs gamma, mu > 0 and nonnegative sigma, dist0, t");
  BoundValue b;
  b.neighborhood = gamma * sigma_sq / (gamma * mu * mu + 2 * mu);
  b.value = std::pow(1.0 / (1.0 + gamma * mu), 2 * t) * dist0_sq + b.neighborhood;
  return b;
}

IterationComplexity iteration_complexity(double eps, double mu, double sigma_sq,
                                         double dist0_sq) {
  if (!(eps > 0) || !(mu > 0) || !(sigma_sq > 0) || !(dist0_sq > 0))
    throw InvalidArgument("iteration_complexity needs eps, mu, sigma, dist0 > 0");
  IterationComplexity ic;
  ic.gamma = eps * mu / sigma_sq;
  ic.in_regime = eps <= sigma_sq / (mu * mu) * (1 + 1e-12);
  ic.t_min = std::max(0.0, (sigma_sq / (2 * eps * mu * mu) + 0.5) * std::log(2 * dist0_sq / eps));
  ic.T = static_cast<std::size_t>(std::ceil(ic.t_min));
  return ic;
}

double inexact_bound(double gamma, double mu, double sigma_sq, double b, double s, double t,
                     double dist0_sq) {
  if (!(gamma > 0) || !(mu > 0) || !(sigma_sq >= 0) || !(b >= 0) || !(t >= 0) ||
      !(dist0_sq >= 0))
    throw InvalidArgument("inexact_bound needs gamma, mu > 0 and nonnegative sigma, b, t, dist0");
  const double gm = gamma * mu;
  const double smax = gm * gm + 2 * gm;
  if (!(s > 0 && s < smax))
    throw InvalidArgument("s must lie in (0, " + std::to_string(smax) + ")");
  const double q = 1 + gm;
  return std::pow((1 + s) / (q * q), t) * dist0_sq +
         (1 + s) * (gamma * gamma * sigma_sq + b * q * q / s) / (smax - s);
}

std::string_view to_string(ProxSolverKind k) {
  switch (k) {
    case ProxSolverKind::closed_form_quadratic: return "closed_form_quadratic";
    case ProxSolverKind::gradient_descent: return "gradient_descent";
    case ProxSolverKind::conjugate_gradient: return "conjugate_gradient";
    case ProxSolverKind::quasi_newton: return "quasi_newton";
  }
  return "?";
}

ProxSolverKind parse_prox_solver(std::string_view s) {
  for (auto k : {ProxSolverKind::closed_form_quadratic, ProxSolverKind::gradient_descent,
                 ProxSolverKind::conjugate_gradient, ProxSolverKind::quasi_newton})
    if (s == to_string(k)) return k;
  throw ConfigError("solver.kind", "unknown prox solver '" + std::string(s) + "'");
}

ProxResult prox_solve(const CohortObjective& f, double gamma, std::span<const double> anchor,
                      const ProxSolverSpec& solver) {
  check_gamma(gamma);
  if (solver.K < 1) throw ConfigError("solver.K", "must be >= 1");
  const Problem& p = f.problem();
  if (anchor.size() != p.dim()) throw InvalidArgument("anchor has the wrong dimension");
  const Cohort& c = f.cohort();

  if (solver.kind == ProxSolverKind::closed_form_quadratic) {
    if (p.kind() != ProblemKind::quadratic)
      throw InvalidArgument("closed-form prox needs a quadratic problem");
    ProxResult r{Vec(anchor.begin(), anchor.end()), 1};
    for (std::size_t j = 0; j < p.dim(); ++j) {
      double num = 0, den = 0;
      for (std::size_t k = 0; k < c.members.size(); ++k) {
        const double a = p.curvature(c.members[k])[j];
        num += c.weights[k] * a * p.center(c.members[k])[j];
        den += c.weights[k] * a;
      }
      r.x[j] = (anchor[j] + gamma * num) / (1.0 + gamma * den);
    }
    return r;
  }

  const Vec a(anchor.begin(), anchor.end());
  SmoothFn sub = [&](std::span<const double> z, std::span<double> g) {
    f.grad(z, g);
    double prox_term = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double dz = z[j] - a[j];
      g[j] += dz / gamma;
      prox_term += dz * dz;
    }
    return f.value(z) + prox_term / (2 * gamma);
  };

  if (solver.kind == ProxSolverKind::gradient_descent) {
    const double step = 1.0 / (f.smoothness() + 1.0 / gamma);
    ProxResult r{a, 0};
    Vec g(a.size());
    for (std::size_t k = 0; k < solver.K; ++k) {
      sub(r.x, g);
      ++r.rounds;
      if (std::sqrt(norm_sq(g)) <= solver.inner_tol) break;
      axpy(-step, g, r.x);
    }
    return r;
  }

  MinimizeOptions o;
  o.tol = solver.inner_tol;
  o.max_iter = solver.K;
  const MinimizeResult m = solver.kind == ProxSolverKind::conjugate_gradient
                               ? nonlinear_cg(sub, a, o)
                               : lbfgs(sub, a, o);
  return {m.x, std::max<std::size_t>(m.iterations, 1)};
}

Vec client_prox(const Problem& p, std::size_t i, double gamma, std::span<const double> anchor) {
  const CohortObjective f(p, Cohort{{i}, {1.0}});
  if (p.kind() == ProblemKind::quadratic)
    return prox_solve(f, gamma, anchor, {ProxSolverKind::closed_form_quadratic, 1, 0}).x;
  const ProxResult r =
      prox_solve(f, gamma, anchor, {ProxSolverKind::quasi_newton, 100000, 1e-11});
  Vec g(p.dim());
  f.grad(r.x, g);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += (r.x[j] - anchor[j]) / gamma;
  if (std::sqrt(norm_sq(g)) > 1e-8)
    throw DivergenceError("client prox did not converge: gradient norm " +
                          std::to_string(std::sqrt(norm_sq(g))));
  return r.x;
}

void CostModel::validate() const {
  if (!(c1 >= 0) || !std::isfinite(c1)) throw ConfigError("cost.c1", "must be finite and >= 0");
  if (!(c2 >= 0) || !std::isfinite(c2)) throw ConfigError("cost.c2", "must be finite and >= 0");
}

SppmResult run_sppm_as(const Problem& p, const SamplingScheme& s, double gamma, std::size_t T,
                       const ProxSolverSpec& solver, const CostModel& cost, std::uint64_t seed,
                       const SppmOptions& opts) {
  check_run(p, s, cost, opts);
  check_gamma(gamma);
  if (solver.K < 1) throw ConfigError("solver.K", "must be >= 1");
  if (solver.kind == ProxSolverKind::closed_form_quadratic && p.kind() != ProblemKind::quadratic)
    throw ConfigError("solver.kind", "closed-form prox needs a quadratic problem");

  std::vector<std::string> extra;
  if (opts.measure_prox_error) extra.push_back("prox_err_sq");
  Runner run(p, opts, extra);
  Rng rng = Rng::stream(seed, stream_tag::cohort);
  for (std::size_t t = 1; t <= T; ++t) {
    const CohortObjective f(p, sample_cohort(s, rng));
    ProxResult pr = prox_solve(f, gamma, run.res.x, solver);
    double err = kNaN;
    if (opts.measure_prox_error) {
      const ProxSolverSpec exact =
          p.kind() == ProblemKind::quadratic
              ? ProxSolverSpec{ProxSolverKind::closed_form_quadratic, 1, 0}
              : ProxSolverSpec{ProxSolverKind::quasi_newton, 100000, 1e-11};
      err = dist_sq(pr.x, prox_solve(f, gamma, run.res.x, exact).x);
    }
    run.res.x = std::move(pr.x);
    if (run.record(t, static_cast<double>(pr.rounds), cost, opts.target, err)) break;
  }
  auto& meta = run.res.trace.meta;
  meta["algorithm"] = "sppm_as";
  meta["seed"] = seed;
  meta["gamma"] = gamma;
  meta["sampling"] = s.describe();
  meta["solver"] = std::string(to_string(solver.kind));
  meta["K"] = solver.K;
  meta["c1"] = cost.c1;
  meta["c2"] = cost.c2;
  return run.res;
}

SppmResult run_localgd(const Problem& p, const SamplingScheme& s, double stepsize,
                       std::size_t local_steps, std::size_t T, const CostModel& cost,
                       std::uint64_t seed, const SppmOptions& opts) {
  check_run(p, s, cost, opts);
  if (!(stepsize > 0) || !std::isfinite(stepsize)) throw ConfigError("stepsize", "must be > 0");
  if (local_steps < 1) throw ConfigError("local_steps", "must be >= 1");

  Runner run(p, opts, {});
  Rng rng = Rng::stream(seed, stream_tag::cohort);
  const std::size_t d = p.dim();
  Vec g(d);
  for (std::size_t t = 1; t <= T; ++t) {
    const Cohort c = sample_cohort(s, rng);
    Vec delta(d, 0.0);
    for (std::size_t k = 0; k < c.members.size(); ++k) {
      Vec y = run.res.x;
      for (std::size_t l = 0; l < local_steps; ++l) {
        p.grad(c.members[k], y, g);
        axpy(-stepsize, g, y);
      }
      for (std::size_t j = 0; j < d; ++j) delta[j] += c.weights[k] * (y[j] - run.res.x[j]);
    }
    axpy(1.0, delta, run.res.x);
    if (run.record(t, 1.0, cost, opts.target)) break;
  }
  auto& meta = run.res.trace.meta;
  meta["algorithm"] = "localgd";
  meta["seed"] = seed;
  meta["stepsize"] = stepsize;
  meta["local_steps"] = local_steps;
  meta["sampling"] = s.describe();
  meta["c1"] = cost.c1;
  meta["c2"] = cost.c2;
  return run.res;
}

SppmResult run_mbgd(const Problem& p, const SamplingScheme& s, double stepsize, std::size_t T,
                    const CostModel& cost, std::uint64_t seed, const SppmOptions& opts) {
  check_run(p, s, cost, opts);
  if (!(stepsize > 0) || !std::isfinite(stepsize)) throw ConfigError("stepsize", "must be > 0");

  Runner run(p, opts, {});
  Rng rng = Rng::stream(seed, stream_tag::cohort);
  Vec g(p.dim());
  for (std::size_t t = 1; t <= T; ++t) {
    const CohortObjective f(p, sample_cohort(s, rng));
    f.grad(run.res.x, g);
    axpy(-stepsize, g, run.res.x);
    if (run.record(t, 1.0, cost, opts.target)) break;
  }
  auto& meta = run.res.trace.meta;
  meta["algorithm"] = "mbgd";
  meta["seed"] = seed;
  meta["stepsize"] = stepsize;
  meta["sampling"] = s.describe();
  meta["c1"] = cost.c1;
  meta["c2"] = cost.c2;
  return run.res;
}

FedProxConstants fedprox_constants(const SamplingScheme& s, std::span<const double> mu,
                                   const std::vector<Vec>& grads, double gamma) {
  check_gamma(gamma);
  if (mu.size() != s.n || grads.size() != s.n) throw InvalidArgument("need one entry per client");
  for (double m : mu)
    if (!(m > 0)) throw InvalidArgument("fedprox constants need mu_i > 0");
  FedProxConstants c;
  for (const auto& wc : enumerate_cohorts(s)) {
    const double size = static_cast<double>(wc.cohort.members.size());
    double a = 0, b = 0;
    for (std::size_t i : wc.cohort.members) {
      a += 1.0 / (1.0 + gamma * mu[i]);
      b += gamma * norm_sq(grads[i]) / ((1.0 + gamma * mu[i]) * mu[i]);
    }
    c.A += wc.prob * a / size;
    c.B += wc.prob * b / size;
  }
  return c;
}

double fedprox_bound(const FedProxConstants& c, double dist0_sq, double t) {
  if (!(c.A < 1)) throw InvalidArgument("fedprox bound needs A < 1");
  return std::pow(c.A, t) * dist0_sq + c.B / (1 - c.A);
}

namespace {

// y <- mean_{i in S} local(i, y), repeated K times.
template <class Local>
Vec averaged_rounds(const Cohort& c, Vec y, std::size_t K, Local local) {
  const double size = static_cast<double>(c.members.size());
  for (std::size_t k = 0; k < K; ++k) {
    Vec sum(y.size(), 0.0);
    for (std::size_t i : c.members) axpy(1.0, local(i, y), sum);
    for (double& v : sum) v /= size;
    y = std::move(sum);
  }
  return y;
}

}  // namespace

SppmResult run_fedprox_sppm(const Problem& p, const SamplingScheme& s, double gamma,
                            std::size_t K, std::size_t T, const CostModel& cost,
                            std::uint64_t seed, const SppmOptions& opts) {
  check_run(p, s, cost, opts);
  check_gamma(gamma);
  if (K < 1) throw ConfigError("K", "must be >= 1");

  Runner run(p, opts, {"bound"});
  bool have_bound = false;
  FedProxConstants fc;
  if (K == 1) {
    try {
      fc = fedprox_constants(s, p.constants().mu, grads_at(p, run.res.x_star), gamma);
      have_bound = fc.A < 1;
    } catch (const EnumerationLimit&) {
    } catch (const InvalidArgument&) {
    }
  }
  if (have_bound) {
    run.res.trace.meta["bound_A"] = fc.A;
    run.res.trace.meta["bound_B"] = fc.B;
  }

  Rng rng = Rng::stream(seed, stream_tag::cohort);
  for (std::size_t t = 1; t <= T; ++t) {
    const Cohort c = sample_cohort(s, rng);
    run.res.x = averaged_rounds(c, std::move(run.res.x), K, [&](std::size_t i, const Vec& y) {
      return client_prox(p, i, gamma, y);
    });
    const double bound = have_bound ? fedprox_bound(fc, run.dist0, static_cast<double>(t)) : kNaN;
    if (run.record(t, static_cast<double>(K), cost, opts.target, bound)) break;
  }
  auto& meta = run.res.trace.meta;
  meta["algorithm"] = "fedprox_sppm";
  meta["seed"] = seed;
  meta["gamma"] = gamma;
  meta["K"] = K;
  meta["sampling"] = s.describe();
  meta["c1"] = cost.c1;
  meta["c2"] = cost.c2;
  return run.res;
}

Vec fedavg_local_prox(const Problem& p, std::size_t i, double gamma, double alpha,
                      std::span<const double> x_t, std::span<const double> y) {
  const double g = gamma * alpha / (gamma + alpha);
  Vec point(x_t.size());
  for (std::size_t j = 0; j < point.size(); ++j) point[j] = g * (x_t[j] / gamma + y[j] / alpha);
  return client_prox(p, i, g, point);
}

SppmResult run_fedavg_sppm(const Problem& p, const SamplingScheme& s, double gamma,
                           double alpha_loc, std::size_t K, std::size_t T, const CostModel& cost,
                           std::uint64_t seed, const SppmOptions& opts) {
  check_run(p, s, cost, opts);
  check_gamma(gamma);
  if (!(alpha_loc > 0) || !std::isfinite(alpha_loc)) throw ConfigError("alpha_loc", "must be > 0");
  if (K < 1) throw ConfigError("K", "must be >= 1");

  Runner run(p, opts, {});
  Rng rng = Rng::stream(seed, stream_tag::cohort);
  for (std::size_t t = 1; t <= T; ++t) {
    const Cohort c = sample_cohort(s, rng);
    const Vec xt = run.res.x;
    run.res.x = averaged_rounds(c, xt, K, [&](std::size_t i, const Vec& y) {
      return fedavg_local_prox(p, i, gamma, alpha_loc, xt, y);
    });
    if (run.record(t, static_cast<double>(K), cost, opts.target)) break;
  }
  auto& meta = run.res.trace.meta;
  meta["algorithm"] = "fedavg_sppm";
  meta["seed"] = seed;
  meta["gamma"] = gamma;
  meta["alpha_loc"] = alpha_loc;
  meta["K"] = K;
  meta["sampling"] = s.describe();
  meta["c1"] = cost.c1;
  meta["c2"] = cost.c2;
  return run.res;
}

ClusteringMode parse_clustering_mode(std::string_view s) {
  if (s == "brute_force") return ClusteringMode::brute_force;
  if (s == "kmeans") return ClusteringMode::kmeans;
  throw ConfigError("clustering", "expected 'brute_force' or 'kmeans', got '" + std::string(s) +
                                      "'");
}

namespace {

// Partitions of the unused indices into blocks of size m; the smallest unused
// index always opens the next block so each partition appears once.
template <class Visit>
void equal_partitions(std::size_t n, std::size_t m, std::vector<char>& used, Blocks& cur,
                      Visit& visit) {
  std::size_t first = 0;
  while (first < n && used[first]) ++first;
  if (first == n) {
    visit(cur);
    return;
  }
  used[first] = 1;
  std::vector<std::size_t> block = {first};
  auto extend = [&](auto& self, std::size_t from) -> void {
    if (block.size() == m) {
      cur.push_back(block);
      equal_partitions(n, m, used, cur, visit);
      cur.pop_back();
      return;
    }
    for (std::size_t i = from; i < n; ++i) {
      if (used[i]) continue;
      used[i] = 1;
      block.push_back(i);
      self(self, i + 1);
      block.pop_back();
      used[i] = 0;
    }
  };
  extend(extend, first + 1);
  used[first] = 0;
}

}  // namespace

Clustering optimal_stratified_clustering(const std::vector<Vec>& grads, std::size_t b,
                                         ClusteringMode mode, std::uint64_t seed) {
  const std::size_t n = grads.size();
  if (n == 0) throw InvalidArgument("no gradients");
  if (b < 1 || b > n) throw InvalidArgument("need 1 <= b <= n");
  Clustering best;
  if (mode == ClusteringMode::kmeans) {
    const KMeansResult km = kmeans(grads, b, seed);
    Blocks blocks(b);
    for (std::size_t i = 0; i < n; ++i) blocks[km.labels[i]].push_back(i);
    std::erase_if(blocks, [](const auto& blk) { return blk.empty(); });
    best.blocks = std::move(blocks);
    best.sigma_sq = sigma_star_as(SamplingScheme::stratified(n, best.blocks), grads);
    return best;
  }
  if (n > kMaxBruteForceClients)
    throw EnumerationLimit("brute-force clustering is limited to n <= " +
                           std::to_string(kMaxBruteForceClients));
  if (n % b != 0) throw InvalidArgument("brute-force clustering needs b to divide n");
  check_grads(grads, n);
  best.sigma_sq = std::numeric_limits<double>::infinity();
  std::vector<char> used(n, 0);
  Blocks cur;
  auto visit = [&](const Blocks& blocks) {
    const double v = sigma_star_as(SamplingScheme::stratified(n, blocks), grads);
    if (v < best.sigma_sq) {
      best.sigma_sq = v;
      best.blocks = blocks;
    }
  };
  equal_partitions(n, n / b, used, cur, visit);
  return best;
}

double comm_cost(const Trace& t, const CostModel& cost) {
  cost.validate();
  const std::size_t k = t.column_index("K_used");
  double total = 0;
  for (std::size_t r = 1; r < t.rows(); ++r) total += cost.c1 * t.row(r)[k] + cost.c2;
  return total;
}

}  // namespace commopt
