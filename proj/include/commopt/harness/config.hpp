#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "commopt/datasets/partition.hpp"
#include "commopt/datasets/synthetic.hpp"
#include "commopt/efbv/efbv.hpp"
#include "commopt/linalg.hpp"
#include "commopt/problems/problem.hpp"
#include "commopt/scafflix/scafflix.hpp"
#include "commopt/sppm/sppm.hpp"

namespace commopt {

inline constexpr std::string_view kVersion = "commopt 0.1.0";

enum class Algorithm {
  efbv, ef21, diana,
  scafflix, iscaffnew, flix_gd,
  sppm_as, localgd, mbgd, fedprox_sppm, fedavg_sppm
};

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view s);
// Table holding the algorithm's knobs: "efbv", "scafflix" or "sppm".
std::string_view section_of(Algorithm a);

struct ProblemConfig {
  ProblemKind kind = ProblemKind::quadratic;
  // quadratic
  std::string fixture = "random";  // random | unit_cross
  std::size_t clients = 10;
  std::size_t dim = 5;
  std::uint64_t seed = 0;
  double mu_min = 0.5, mu_max = 2.0, l_max = 2.0, center_scale = 1.0;
  bool interpolation = false;
  // logistic kinds: a LibSVM file, or synthetic data when `data` is empty
  std::string data;
  SyntheticLogisticOptions synthetic;
  std::uint64_t data_seed = 0;
  PartitionScheme partition = PartitionScheme::iid;
  std::uint64_t partition_seed = 0;
  double dirichlet_alpha = 0.5;
  double mu = 0.1;  // l2 weight (logistic) or regularizer weight (nonconvex)
};

struct EfbvSection {
  std::string compressor = "identity";
  Dependence dependence = Dependence::independent;
  std::size_t nice_m = 1;
  std::optional<double> lambda, nu, gamma;
  std::size_t T = 100;
  double l2 = 0;  // R(x) = (l2/2)||x||^2, 0 for none
  SmoothnessConvention smoothness = SmoothnessConvention::mean;
  double stop_gap = 0;
};

struct ScafflixSection {
  Vec alpha = {1.0};  // one value broadcast to every client, or one per client
  double p = 0.2;
  std::size_t T = 1000;
  GradMode grad_mode = GradMode::exact;
  double gamma_scale = 1.0;  // multiplies the default client stepsizes
  std::optional<double> gamma;  // flix_gd stepsize; 1/L of the FLIX objective when unset
  double eps_loc = kDefaultLocalTolerance;
  double stop_gap = 0;
};

struct SppmSection {
  double gamma = 1.0;
  std::size_t T = 100;
  double target = 0;
  SamplingKind sampling = SamplingKind::full;
  std::size_t tau = 1;
  Vec p;
  Blocks blocks;
  Vec q;
  // Derive blocks by clustering grad f_i(x*) into this many groups when
  // `blocks` is empty (block and stratified sampling).
  std::size_t clusters = 0;
  ClusteringMode cluster_mode = ClusteringMode::kmeans;
  ProxSolverKind solver = ProxSolverKind::closed_form_quadratic;
  std::size_t K = 1;
  double inner_tol = 0;
  bool measure_prox_error = false;  // sppm_as: adds a prox_err_sq column
  CostModel cost;
  double stepsize = 0.1;  // localgd, mbgd
  std::size_t local_steps = 1;
  double alpha_loc = 1.0;  // fedavg_sppm
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::efbv;
  std::vector<std::uint64_t> seeds = {0};
  std::string output;    // trace directory, relative to the working directory
  ProblemConfig problem;
  EfbvSection efbv;
  ScafflixSection scafflix;
  SppmSection sppm;
  double sweep_eps = 1e-6;
  // Canonical TOML of the whole document and the directory that relative
  // data paths resolve against.
  std::string canonical;
  std::string base_dir = ".";
};

// Strict parse: unknown tables or keys, wrong types and out-of-range values
// throw ConfigError with the dotted field path; TOML syntax errors throw
// ParseError.
ExperimentConfig parse_config(std::string_view text, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

// Copy with one key replaced, e.g. ("sppm.K", "4"). A bare key refers to the
// algorithm's own table. Values parse as integer, then float, then string.
ExperimentConfig with_param(const ExperimentConfig& cfg, std::string_view key,
                            std::string_view value);

// FNV-1a 64 of the canonical document without `seeds` and `output`.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// Memoized per [problem] table and base_dir.
Problem build_problem(const ExperimentConfig& cfg);
void clear_problem_cache();
// The configured sampling scheme; clustered blocks need the problem's optimum.
SamplingScheme build_scheme(const ExperimentConfig& cfg, const Problem& p);

}  // namespace commopt
