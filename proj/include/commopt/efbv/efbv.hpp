#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "commopt/compressors/compressor.hpp"
#include "commopt/harness/trace.hpp"
#include "commopt/linalg.hpp"
#include "commopt/problems/problem.hpp"

namespace commopt {

enum class EfbvMode { efbv, ef21, diana, custom };
enum class StepsizeRegime { PL, KL, nonconvex };
// Which L-tilde feeds the stepsize: sqrt(mean L_i^2) or sqrt(sum L_i^2).
enum class SmoothnessConvention { mean, sum };

std::string_view to_string(EfbvMode m);
EfbvMode parse_efbv_mode(std::string_view s);
SmoothnessConvention parse_smoothness_convention(std::string_view s);

struct DerivedParams {
  double r = 0;
  double r_av = 0;
  double s_star = 0;      // +inf when r = 0
  double theta_star = 0;  // +inf when r = 0 or r_av = 0
  double s_ncvx = 0;
  double theta_ncvx = 0;
};

// Throws RateError when r >= 1.
DerivedParams derived_params(double eta, double omega, double omega_ran, double lambda,
                             double nu);

double stepsize_bound(double L, double L_tilde, const DerivedParams& dp, StepsizeRegime regime);

struct EfbvConfig {
  EnsembleSpec ensemble;
  // Unset values take the theory defaults: lambda*, nu* (lambda for ef21,
  // 1 for diana) and the largest admissible stepsize.
  std::optional<double> lambda;
  std::optional<double> nu;
  std::optional<double> gamma;
  Regularizer regularizer;
  std::size_t T = 100;
  std::uint64_t seed = 0;
  EfbvMode mode = EfbvMode::efbv;
  SmoothnessConvention smoothness = SmoothnessConvention::mean;
  Vec x0;                    // zeros when empty
  double stop_gap = 0;       // stop once f_gap <= stop_gap; 0 runs all T rounds
  bool record_iterates = false;
};

struct EfbvParams {
  double eta = 0, omega = 0, omega_ran = 0;
  double lambda = 0, nu = 0, gamma = 0;
  double L = 0, L_tilde = 0;
  StepsizeRegime regime = StepsizeRegime::PL;
  DerivedParams dp;
  // theta of the Lyapunov function for this regime
  double theta = 0;
};

// Validates the config against the problem and fills in defaults.
// For ef21 the stepsize uses omega_ran = omega, i.e. no benefit from
// independent compressors is assumed.
EfbvParams resolve_efbv(const Problem& p, const EfbvConfig& cfg);

struct EfbvState {
  Vec x;
  std::vector<Vec> h;
  Vec h_bar;
  std::size_t round = 0;
  std::uint64_t scalars_sent = 0;
};

struct EfbvResult {
  Trace trace;
  EfbvState state;
  EfbvParams params;
  double f_star = 0;
  std::vector<Vec> iterates;  // x^0..x^T when record_iterates
};

inline const std::vector<std::string> kEfbvColumns = {"round",        "f_gap",  "lyapunov",
                                                      "dist_sq",      "scalars_sent",
                                                      "grad_sq"};

// f_gap is (f+R)(x) - (f+R)(x*) for convex problems. For nonconvex ones x*
// is unknown: f_star is 0 (a lower bound of the logistic losses) and dist_sq
// is NaN. scalars_sent is cumulative; grad_sq is ||grad f(x)||^2.
// Throws DivergenceError when f_gap exceeds 1e12 or stops being finite.
EfbvResult run_efbv(const Problem& p, const EfbvConfig& cfg);

// f(x)+R(x) - f_star + gamma/(2 theta) * (1/n) sum ||grad f_i(x) - h_i||^2.
double lyapunov_efbv(const Problem& p, const EfbvState& state, double gamma, double theta,
                     double f_star, const Regularizer& reg = {});

}  // namespace commopt
