#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "commopt/harness/trace.hpp"
#include "commopt/linalg.hpp"
#include "commopt/problems/problem.hpp"

namespace commopt {

// f~(x) = (1/n) sum_i f_i(alpha_i x + (1 - alpha_i) x_i*).
struct FlixInstance {
  Problem base;
  Vec alpha;
  std::vector<Vec> x_loc;  // empty where alpha_i = 1
  double eps_loc = 0;
  std::vector<std::size_t> local_iterations;  // 0 where no solve was needed

  std::size_t clients() const { return alpha.size(); }
  std::size_t dim() const { return base.dim(); }
  // alpha_i x + (1 - alpha_i) x_i*, or x itself when alpha_i = 1
  Vec personalize(std::size_t i, std::span<const double> x) const;
};

// Local minimizers are solved (to ||grad f_i|| < eps_loc) only where alpha_i < 1.
FlixInstance build_flix(const Problem& p, Vec alpha, double eps_loc = kDefaultLocalTolerance);

struct FlixValue {
  double value = 0;
  std::vector<Vec> personalized;
};

FlixValue flix_eval(const FlixInstance& inst, std::span<const double> x);
// (1/n) sum_i alpha_i grad f_i(x~_i)
Vec flix_grad(const FlixInstance& inst, std::span<const double> x);

struct FlixSolution {
  Vec x;
  double value = 0;
  std::vector<Vec> x_tilde;     // personalized optima
  std::vector<Vec> grad_tilde;  // grad f_i at the personalized optima
};

// Closed form for quadratics, Armijo gradient descent otherwise.
FlixSolution flix_reference(const FlixInstance& inst, double tol = 1e-12);

enum class GradMode { exact, single_sample };
GradMode parse_grad_mode(std::string_view s);

struct ScafflixConfig {
  Vec gamma_i;
  double p = 1.0;
  std::size_t T = 100;
  GradMode grad_mode = GradMode::exact;
  std::uint64_t seed = 0;
  Vec x0;               // common start of all clients; zeros when empty
  // Initial control variates, zeros when empty. Must satisfy
  // sum alpha_i h_i = 0, the quantity the updates conserve.
  std::vector<Vec> h0;
  double stop_gap = 0;  // stop at the first aggregation with f_gap <= stop_gap
};

// gamma_i = 1/A_i with A_i = L_i (exact) or 2 L_i (single sample).
Vec default_stepsizes(const Problem& p, GradMode mode);
// (1/n sum alpha_i^2 / gamma_i)^{-1}
double server_stepsize(const Vec& alpha, const Vec& gamma_i);

struct ScafflixState {
  std::vector<Vec> x;
  std::vector<Vec> h;
  Vec server;  // last aggregate, x0 before the first communication
  std::size_t round = 0;
  std::size_t comm_rounds = 0;
};

struct ScafflixResult {
  Trace trace;
  ScafflixState state;
  FlixSolution solution;
  double gamma = 0;
};

inline const std::vector<std::string> kScafflixColumns = {
    "round", "comm_rounds", "f_gap", "lyapunov", "dist_sq", "alpha_summary"};

// Trace rows carry f~ - f~* and ||x - x*||^2 at the server model, the
// Lyapunov function of the client states, and the mean alpha. Requires
// alpha_i > 0 (ConfigError otherwise).
ScafflixResult run_scafflix(const FlixInstance& inst, const ScafflixConfig& cfg);

// The alpha = 1 special case on the plain objective.
ScafflixResult run_iscaffnew(const Problem& p, const Vec& gamma_i, double p_comm, std::size_t T,
                             std::uint64_t seed);

// x <- x - gamma grad f~(x); every round communicates.
ScafflixResult run_flix_gd(const FlixInstance& inst, double gamma, std::size_t T,
                           double stop_gap = 0, Vec x0 = {});

// (1/n) sum (g_min/g_i)||x~_i - x~_i*||^2 + (g_min/p^2)(1/n) sum g_i ||h_i - grad f_i(x~_i*)||^2
double lyapunov_scafflix(const FlixInstance& inst, const ScafflixState& state,
                         const Vec& gamma_i, double p, const FlixSolution& target);

}  // namespace commopt
