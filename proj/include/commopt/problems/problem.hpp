#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <string_view>
#include <vector>

#include "commopt/datasets/dataset.hpp"
#include "commopt/datasets/partition.hpp"
#include "commopt/linalg.hpp"

namespace commopt {

enum class ProblemKind { l2_logistic, nonconvex_logistic, quadratic };

std::string_view to_string(ProblemKind k);

// Default weight of the sum_j x_j^2/(1+x_j^2) regularizer.
inline constexpr double kDefaultNonconvexLambda = 0.1;

struct ProblemConstants {
  std::vector<double> L;   // per-client smoothness
  std::vector<double> mu;  // per-client strong convexity (0 for nonconvex)
  double L_tilde = 0;      // sqrt((1/n) sum L_i^2)
  double L_tilde_sum = 0;  // sqrt(sum L_i^2), the no-1/n convention
  double L_max = 0;
  double L_global = 0;     // smoothness used for f; defaults to L_tilde
  double mu_global = 0;    // (1/n) sum mu_i, a strong convexity bound for f
  double kappa_max = 0;    // max_i L_i / mu_i (inf when some mu_i = 0)
};

// Finite sum f(x) = (1/n) sum_i f_i(x) with per-client oracles.
//  l2_logistic:        f_i = (1/n_i) sum log(1+exp(-b a.x)) + (mu/2)||x||^2
//  nonconvex_logistic: f_i = (1/n_i) sum log(1+exp(-b a.x)) + lambda sum x_j^2/(1+x_j^2)
//  quadratic:          f_i = 1/2 sum_j a_ij (x_j - c_ij)^2
// Immutable after construction; constants are computed once on first use.
class Problem {
 public:
  static Problem logistic(const Dataset& ds, const ClientPartition& part, double mu);
  static Problem nonconvex_logistic(const Dataset& ds, const ClientPartition& part,
                                    double lambda = kDefaultNonconvexLambda);
  static Problem quadratic(std::vector<Vec> curvature, std::vector<Vec> centers);

  ProblemKind kind() const { return kind_; }
  bool convex() const { return kind_ != ProblemKind::nonconvex_logistic; }
  std::size_t clients() const { return n_; }
  std::size_t dim() const { return d_; }
  // mu for l2_logistic, lambda for nonconvex_logistic, 0 for quadratic.
  double reg() const { return reg_; }

  // Number of local data points (1 for a quadratic client).
  std::size_t samples(std::size_t client) const;

  double loss(std::size_t client, std::span<const double> x) const;
  void grad(std::size_t client, std::span<const double> x, std::span<double> out) const;
  Vec grad(std::size_t client, std::span<const double> x) const;

  // Loss and gradient of the single-datum component f_{i,j}, including the
  // regularizer, so that f_i is the average of the f_{i,j}.
  void sample_grad(std::size_t client, std::size_t j, std::span<const double> x,
                   std::span<double> out) const;

  double loss_avg(std::span<const double> x) const;
  Vec grad_avg(std::span<const double> x) const;

  const ProblemConstants& constants() const;
  // reference_solution(*this) with default arguments, computed once.
  const Vec& solution() const;

  // Quadratic clients only.
  const Vec& curvature(std::size_t client) const;
  const Vec& center(std::size_t client) const;

 private:
  struct LogisticClient {
    std::vector<Example> rows;
  };
  struct QuadraticClient {
    Vec a;
    Vec c;
  };
  struct ConstantsCache {
    std::once_flag once;
    ProblemConstants value;
    std::once_flag solution_once;
    Vec solution;
  };

  Problem() = default;
  void check_client(std::size_t client, std::size_t xdim) const;
  ProblemConstants compute_constants() const;

  ProblemKind kind_ = ProblemKind::quadratic;
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  double reg_ = 0;
  std::vector<LogisticClient> logistic_;
  std::vector<QuadraticClient> quadratic_;
  std::shared_ptr<ConstantsCache> cache_;
};

struct Regularizer {
  enum class Kind { zero, l2 };
  Kind kind = Kind::zero;
  double strength = 0;  // R(x) = (strength/2)||x||^2 for l2

  static Regularizer zero() { return {}; }
  static Regularizer l2(double s);

  double value(std::span<const double> x) const;
};

// prox_{gamma R}(x): identity for zero, x/(1+gamma*s) for l2(s).
Vec prox_reg(const Regularizer& reg, double gamma, std::span<const double> x);

// Minimizer of f + R with ||grad (f+R)|| <= tol. Closed form for quadratics,
// otherwise deterministic gradient descent with Armijo backtracking starting
// from `x0` (zero when empty). Throws InvalidArgument for nonconvex kinds and
// DivergenceError when max_iter is exhausted.
Vec reference_solution(const Problem& p, const Regularizer& reg = {}, double tol = 1e-12,
                       std::span<const double> x0 = {}, std::size_t max_iter = 2'000'000);

inline constexpr double kDefaultLocalTolerance = 1e-6;

struct LocalMinimum {
  Vec x;
  std::size_t iterations = 0;
};

// argmin f_i certified by ||grad f_i(x)|| < eps_loc.
LocalMinimum local_minimizer(const Problem& p, std::size_t client,
                             double eps_loc = kDefaultLocalTolerance,
                             std::size_t max_iter = 2'000'000);

// Constants as a JSON object for experiment logs.
std::string constants_to_json(const ProblemConstants& c);

}  // namespace commopt
