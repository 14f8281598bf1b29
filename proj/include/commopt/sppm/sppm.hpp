#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "commopt/harness/trace.hpp"
#include "commopt/linalg.hpp"
#include "commopt/problems/problem.hpp"
#include "commopt/rng.hpp"

namespace commopt {

using Blocks = std::vector<std::vector<std::size_t>>;

enum class SamplingKind { full, nonuniform, nice, block, stratified };

std::string_view to_string(SamplingKind k);
SamplingKind parse_sampling_kind(std::string_view s);

// Distribution of the cohort S over subsets of [n].
//  full:       S = [n]
//  nonuniform: S = {i} with probability p_i
//  nice:       uniform subset of size tau
//  block:      S = blocks[j] with probability q_j
//  stratified: one uniformly drawn member of every block
struct SamplingScheme {
  SamplingKind kind = SamplingKind::full;
  std::size_t n = 0;
  Vec p;
  std::size_t tau = 0;
  Blocks blocks;
  Vec q;

  static SamplingScheme full(std::size_t n);
  static SamplingScheme nonuniform(Vec p);
  static SamplingScheme nice(std::size_t n, std::size_t tau);
  // Uniform q_j = 1/b when q is empty.
  static SamplingScheme block(std::size_t n, Blocks blocks, Vec q = {});
  static SamplingScheme stratified(std::size_t n, Blocks blocks);

  // Throws ConfigError naming the offending field.
  void validate() const;
  // p_i = Prob(i in S)
  Vec inclusion() const;
  std::string describe() const;
};

// Members in increasing order with weights v_i = 1/(n p_i).
struct Cohort {
  std::vector<std::size_t> members;
  Vec weights;
};

Cohort sample_cohort(const SamplingScheme& s, Rng& rng);

struct WeightedCohort {
  double prob = 0;
  Cohort cohort;
};

inline constexpr std::size_t kMaxEnumerationClients = 20;
inline constexpr std::size_t kMaxEnumeratedCohorts = 2'000'000;

// Support of S with probabilities. Throws EnumerationLimit past the guards.
std::vector<WeightedCohort> enumerate_cohorts(const SamplingScheme& s);

// f_C(x) = sum_{i in C} v_i f_i(x). Keeps a pointer to the problem.
class CohortObjective {
 public:
  CohortObjective(const Problem& p, Cohort c);

  const Problem& problem() const { return *p_; }
  const Cohort& cohort() const { return c_; }
  double value(std::span<const double> x) const;
  void grad(std::span<const double> x, std::span<double> out) const;
  // sum v_i mu_i and sum v_i L_i
  double mu() const;
  double smoothness() const;

 private:
  const Problem* p_;
  Cohort c_;
};

enum class StatsMethod { closed_form, enumeration };
std::string_view to_string(StatsMethod m);

struct SamplingStats {
  double mu_as = 0;
  double sigma_star_as_sq = 0;
  Vec sigma_j_sq;  // stratified only
  StatsMethod method = StatsMethod::closed_form;
};

// min over supported C of sum_{i in C} mu_i/(n p_i)
double mu_as(const SamplingScheme& s, std::span<const double> mu,
             StatsMethod m = StatsMethod::closed_form);
// sum_C p_C ||grad f_C(x*)||^2. grads are grad f_i(x*); their mean must be
// below 1e-8 in norm (InvalidArgument otherwise).
double sigma_star_as(const SamplingScheme& s, const std::vector<Vec>& grads,
                     StatsMethod m = StatsMethod::closed_form);
SamplingStats sampling_stats(const SamplingScheme& s, std::span<const double> mu,
                             const std::vector<Vec>& grads,
                             StatsMethod m = StatsMethod::closed_form);

// sigma_j^2 = max_{i in C_j} ||g_i - mean_{C_j} g||^2
Vec cluster_dispersion(const Blocks& blocks, const std::vector<Vec>& grads);
// (b/n^2) sum_j |C_j|^2 sigma_j^2, an upper bound on the stratified variance
double stratified_variance_bound(std::size_t n, const Blocks& blocks,
                                 const std::vector<Vec>& grads);

std::vector<Vec> grads_at(const Problem& p, std::span<const double> x);

struct BoundValue {
  double value = 0;
  double neighborhood = 0;
};

// (1/(1+g mu))^{2t} dist0 + g sigma/(g mu^2 + 2 mu)
BoundValue convergence_bound(double gamma, double mu, double sigma_sq, double dist0_sq,
                             double t);

struct IterationComplexity {
  double gamma = 0;
  double t_min = 0;  // real-valued lower bound on the iteration count
  std::size_t T = 0;
  bool in_regime = true;  // eps <= sigma/mu^2
};

// gamma = eps mu/sigma, t >= (sigma/(2 eps mu^2) + 1/2) log(2 dist0/eps)
IterationComplexity iteration_complexity(double eps, double mu, double sigma_sq,
                                         double dist0_sq);

// Prox bound when every prox is within squared distance b of the exact one.
// Requires 0 < s < g^2 mu^2 + 2 g mu.
double inexact_bound(double gamma, double mu, double sigma_sq, double b, double s, double t,
                     double dist0_sq);

enum class ProxSolverKind { closed_form_quadratic, gradient_descent, conjugate_gradient,
                            quasi_newton };
std::string_view to_string(ProxSolverKind k);
ProxSolverKind parse_prox_solver(std::string_view s);

struct ProxSolverSpec {
  ProxSolverKind kind = ProxSolverKind::closed_form_quadratic;
  std::size_t K = 1;       // local rounds: GD steps, or CG / L-BFGS iterations
  double inner_tol = 0;    // early stop on the subproblem gradient norm
};

struct ProxResult {
  Vec x;
  std::size_t rounds = 0;
};

// argmin_z f_C(z) + ||z - anchor||^2/(2 gamma). The closed form counts as one
// round and needs a quadratic problem (InvalidArgument otherwise).
ProxResult prox_solve(const CohortObjective& f, double gamma, std::span<const double> anchor,
                      const ProxSolverSpec& solver);

// prox_{gamma f_i}(anchor) to full precision.
Vec client_prox(const Problem& p, std::size_t i, double gamma, std::span<const double> anchor);

struct CostModel {
  double c1 = 1.0;  // per local (intra-cohort) round
  double c2 = 0.0;  // per global round

  void validate() const;
};

inline const std::vector<std::string> kSppmColumns = {"round", "dist_sq", "K_used",
                                                      "cost_cum"};

struct SppmOptions {
  Vec x0;             // zeros when empty
  double target = 0;  // stop once dist_sq < target
  // Adds a prox_err_sq column: squared distance of each computed prox to
  // the exact one.
  bool measure_prox_error = false;
};

struct SppmResult {
  Trace trace;
  Vec x;
  Vec x_star;
};

// x_{t+1} = prox_{gamma f_S}(x_t). Each round costs c1 K_t + c2.
SppmResult run_sppm_as(const Problem& p, const SamplingScheme& s, double gamma, std::size_t T,
                       const ProxSolverSpec& solver, const CostModel& cost, std::uint64_t seed,
                       const SppmOptions& opts = {});

// Members run local_steps gradient steps from x_t; the server sets
// x_{t+1} = x_t + sum v_i (x_i - x_t). Each round costs c1 + c2.
SppmResult run_localgd(const Problem& p, const SamplingScheme& s, double stepsize,
                       std::size_t local_steps, std::size_t T, const CostModel& cost,
                       std::uint64_t seed, const SppmOptions& opts = {});

// x_{t+1} = x_t - stepsize grad f_S(x_t)
SppmResult run_mbgd(const Problem& p, const SamplingScheme& s, double stepsize, std::size_t T,
                    const CostModel& cost, std::uint64_t seed, const SppmOptions& opts = {});

struct FedProxConstants {
  double A = 0;  // E[(1/|S|) sum 1/(1 + g mu_i)]
  double B = 0;  // E[(1/|S|) sum g ||grad f_i(x*)||^2 / ((1 + g mu_i) mu_i)]
};

FedProxConstants fedprox_constants(const SamplingScheme& s, std::span<const double> mu,
                                   const std::vector<Vec>& grads, double gamma);

// A^t dist0 + B/(1-A)
double fedprox_bound(const FedProxConstants& c, double dist0_sq, double t);

// K repetitions of x <- mean_{i in S} prox_{gamma f_i}(x) per round. The
// trace gains a bound column, filled when K = 1 and the support can be
// enumerated (NaN otherwise).
SppmResult run_fedprox_sppm(const Problem& p, const SamplingScheme& s, double gamma,
                            std::size_t K, std::size_t T, const CostModel& cost,
                            std::uint64_t seed, const SppmOptions& opts = {});

// K inner rounds of y <- mean_{i in S} prox_{alpha h_i}(y), starting at x_t,
// with h_i = f_i + ||. - x_t||^2/(2 gamma).
SppmResult run_fedavg_sppm(const Problem& p, const SamplingScheme& s, double gamma,
                           double alpha_loc, std::size_t K, std::size_t T, const CostModel& cost,
                           std::uint64_t seed, const SppmOptions& opts = {});

// prox_{alpha h_i}(y) for h_i = f_i + ||. - x_t||^2/(2 gamma), computed as
// prox_{g' f_i}(g'(x_t/gamma + y/alpha)) with g' = gamma alpha/(gamma + alpha).
Vec fedavg_local_prox(const Problem& p, std::size_t i, double gamma, double alpha,
                      std::span<const double> x_t, std::span<const double> y);

enum class ClusteringMode { brute_force, kmeans };
ClusteringMode parse_clustering_mode(std::string_view s);

inline constexpr std::size_t kMaxBruteForceClients = 10;

struct Clustering {
  Blocks blocks;
  double sigma_sq = 0;  // stratified variance under these blocks
};

// brute_force: all partitions into b blocks of size n/b, the stratified
// variance minimizer (first in enumeration order on ties).
// kmeans: k-means on the gradient vectors; empty clusters are dropped.
Clustering optimal_stratified_clustering(const std::vector<Vec>& grads, std::size_t b,
                                         ClusteringMode mode, std::uint64_t seed = 0);

// sum over rounds of c1 K_used + c2
double comm_cost(const Trace& t, const CostModel& cost);

}  // namespace commopt
