#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "commopt/linalg.hpp"
#include "commopt/rng.hpp"

namespace commopt {

enum class CompressorKind { identity, rand_k, top_k, mix, comp, participation_nice, scaled };

std::string_view to_string(CompressorKind k);

// Relative bias eta and relative variance omega:
//   ||E[C(x)] - x|| <= eta ||x||,  E||C(x) - E[C(x)]||^2 <= omega ||x||^2.
struct CompressorParams {
  double eta = 0;
  double omega = 0;
};

class CompressorSpec {
 public:
  static CompressorSpec identity(std::size_t d);
  static CompressorSpec rand_k(std::size_t d, std::size_t k);
  static CompressorSpec top_k(std::size_t d, std::size_t k);
  // top-k kept as is plus k' of the remaining coordinates drawn uniformly,
  // also kept as is.
  static CompressorSpec mix(std::size_t d, std::size_t k, std::size_t kp);
  // top-k' followed by rand-k on the k' survivors, rescaled by k'/k.
  static CompressorSpec comp(std::size_t d, std::size_t k, std::size_t kp);
  // Sends (n/m) x when the client is in the m-subset of n, 0 otherwise.
  static CompressorSpec participation_nice(std::size_t d, std::size_t m, std::size_t n);

  CompressorKind kind() const { return kind_; }
  std::size_t dim() const { return d_; }
  std::size_t k() const { return k_; }
  std::size_t kp() const { return kp_; }
  std::size_t m() const { return k_; }
  std::size_t n() const { return kp_; }
  double lambda() const { return lambda_; }
  const CompressorSpec& inner() const { return *inner_; }

  CompressorParams certified() const;
  bool deterministic() const;

  // Round-trips through parse_compressor.
  std::string to_string() const;

  bool operator==(const CompressorSpec& o) const;

 private:
  friend CompressorSpec scale_spec(const CompressorSpec&, double);
  CompressorSpec(CompressorKind kind, std::size_t d) : kind_(kind), d_(d) {}

  CompressorKind kind_;
  std::size_t d_;
  std::size_t k_ = 0;   // k, or m for participation
  std::size_t kp_ = 0;  // k', or n for participation
  double lambda_ = 1.0;
  std::shared_ptr<const CompressorSpec> inner_;
};

// Closed-form certificate for a kind at dimension d (k, kp as in the factories).
CompressorParams certified_params(CompressorKind kind, std::size_t d, std::size_t k = 0,
                                  std::size_t kp = 0);

// lambda * C; certificate (lambda*eta + 1 - lambda, lambda^2 omega).
// lambda = 1 returns the spec unchanged.
CompressorSpec scale_spec(const CompressorSpec& spec, double lambda);

// argmin over (0,1] of (1 - l + l*eta)^2 + l^2 v, i.e.
// min((1 - eta)/((1 - eta)^2 + v), 1).
double optimal_scaling(double eta, double variance);

// Transmitted scalars for one application (index overhead ignored).
struct Compressed {
  Vec value;
  std::size_t scalars = 0;
};

Compressed apply(const CompressorSpec& spec, std::span<const double> x, Rng& rng);

// Participation compressor with the membership decided by a joint draw.
Compressed apply_participation(const CompressorSpec& spec, std::span<const double> x,
                               bool member);

// Uniform m-subset of [n] as a membership mask.
std::vector<bool> nice_mask(std::size_t n, std::size_t m, Rng& rng);

// Indices of the k largest |x_j|, ties to the lower index, in that order.
std::vector<std::size_t> top_indices(std::span<const double> x, std::size_t k);

// Config strings: "identity", "rand_k:k=2", "top_k:k=3", "mix:k=1,kp=2",
// "comp:k=1,kp=56", "nice:m=5,n=10"; any of them may add ",lambda=0.5".
CompressorSpec parse_compressor(std::string_view text, std::size_t d);

enum class Dependence { independent, m_nice_joint };

struct EnsembleSpec {
  std::vector<CompressorSpec> per_client;
  Dependence dependence = Dependence::independent;

  static EnsembleSpec independent(const CompressorSpec& spec, std::size_t n);
  static EnsembleSpec m_nice(std::size_t d, std::size_t m, std::size_t n);

  std::size_t clients() const { return per_client.size(); }
  // Largest per-client certificate.
  CompressorParams params() const;
  double omega_ran() const;
};

double omega_ran(const EnsembleSpec& e);

// Compresses one vector per client for a given round. Client i draws from
// the stream (seed, i, round, compressor); the joint m-nice membership comes
// from (seed, joint_draw, round).
std::size_t apply_ensemble(const EnsembleSpec& e, const std::vector<Vec>& inputs,
                           std::uint64_t seed, std::uint64_t round, std::vector<Vec>& out);

struct CertificateViolation {
  std::size_t input = 0;
  double bias = 0;      // relative
  double variance = 0;  // relative
};

struct CertificateEstimate {
  double eta_hat = 0;
  double omega_hat = 0;
  std::size_t inputs = 0;
  std::vector<CertificateViolation> violations;
};

// Monte-Carlo audit over a fixed battery of unit-norm inputs (random
// directions, a basis vector, the flat vector, a two-level vector). For each
// input the bias and variance of `trials` draws are compared with the
// certificate plus a slack of 3/sqrt(trials) times max(1, empirical spread).
CertificateEstimate estimate_params(const CompressorSpec& spec, std::size_t trials, Rng& rng);

}  // namespace commopt
