#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "commopt/datasets/dataset.hpp"
#include "commopt/problems/problem.hpp"

namespace commopt {

// f_i(x) = (mu_i/2)||x - c_i||^2. x* and grad f_i(x*) are known in closed
// form.
Problem synth_quadratic(const std::vector<double>& mu, const std::vector<Vec>& centers);

// Diagonal variant f_i(x) = 1/2 sum_j a_ij (x_j - c_ij)^2, used for fixtures
// with L_i != mu_i.
Problem synth_diag_quadratic(const std::vector<Vec>& curvature,
                             const std::vector<Vec>& centers);

// The four unit-cross vectors (0,1), (1,0), (0,-1), (-1,0) as gradients at
// the optimum of four equal quadratics centred at their negatives.
Problem unit_cross_fixture();

struct SyntheticLogisticOptions {
  std::size_t samples = 1000;
  std::size_t dim = 20;
  // Number of well-separated feature clusters; 1 gives a homogeneous cloud.
  std::size_t clusters = 1;
  double separation = 3.0;
  double label_noise = 0.1;
  // Each cluster labels its points with its own random linear model, which
  // makes a per-cluster split heterogeneous.
  bool per_cluster_model = false;
  bool normalize = true;
};

// Dense-as-sparse binary classification data with labels from a random
// linear model. Deterministic per seed.
Dataset synth_logistic_dataset(const SyntheticLogisticOptions& opts, std::uint64_t seed);

struct RandomQuadraticOptions {
  std::size_t clients = 10;
  std::size_t dim = 5;
  double mu_min = 0.5;
  double mu_max = 2.0;
  // Largest curvature; curvatures are drawn in [mu_i, L_i] with L_i <= l_max.
  double l_max = 2.0;
  double center_scale = 1.0;
  // All clients share the same center (sigma_* = 0).
  bool interpolation = false;
};

Problem random_quadratic(const RandomQuadraticOptions& opts, std::uint64_t seed);

}  // namespace commopt
