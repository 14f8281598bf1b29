#include "commopt/datasets/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "commopt/errors.hpp"
#include "commopt/rng.hpp"

namespace commopt {

Problem synth_quadratic(const std::vector<double>& mu, const std::vector<Vec>& centers) {
  if (mu.size() != centers.size() || mu.empty())
    throw InvalidArgument("synth_quadratic: need one mu per center");
  std::vector<Vec> curv;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(mu[i] > 0)) throw InvalidArgument("synth_quadratic: mu_i must be > 0");
    curv.emplace_back(centers[i].size(), mu[i]);
  }
  return Problem::quadratic(std::move(curv), centers);
}

Problem synth_diag_quadratic(const std::vector<Vec>& curvature, const std::vector<Vec>& centers) {
  return Problem::quadratic(curvature, centers);
}

Problem unit_cross_fixture() {
  // x* = 0 and grad f_i(x*) = -c_i
  std::vector<Vec> centers{{0, -1}, {-1, 0}, {0, 1}, {1, 0}};
  return synth_quadratic({1, 1, 1, 1}, centers);
}

Dataset synth_logistic_dataset(const SyntheticLogisticOptions& o, std::uint64_t seed) {
  if (o.samples == 0 || o.dim == 0 || o.clusters == 0)
    throw InvalidArgument("synthetic logistic: samples, dim and clusters must be positive");
  Rng rng = Rng::stream(seed, stream_tag::init, 0x10);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Vec> centers(o.clusters, Vec(o.dim, 0.0));
  if (o.clusters > 1)
    for (auto& c : centers)
      for (auto& v : c) v = o.separation * normal(rng);
  const std::size_t models = o.per_cluster_model ? o.clusters : 1;
  std::vector<Vec> w(models, Vec(o.dim));
  for (auto& m : w)
    for (auto& v : m) v = normal(rng);

  std::vector<Example> ex;
  ex.reserve(o.samples);
  Vec a(o.dim);
  for (std::size_t s = 0; s < o.samples; ++s) {
    const std::size_t c = s % o.clusters;
    for (std::size_t j = 0; j < o.dim; ++j) a[j] = centers[c][j] + normal(rng);
    if (o.normalize) {
      const double nrm = std::sqrt(norm_sq(a));
      if (nrm > 0)
        for (auto& v : a) v /= nrm;
    }
    const Vec& model = w[o.per_cluster_model ? c : 0];
    int label = dot(model, a) >= 0 ? 1 : -1;
    if (rng.bernoulli(o.label_noise)) label = -label;
    Example e{label, {}};
    for (std::size_t j = 0; j < o.dim; ++j)
      if (a[j] != 0.0) e.features.push_back({static_cast<std::uint32_t>(j), a[j]});
    ex.push_back(std::move(e));
  }
  return Dataset(std::move(ex), o.dim);
}

Problem random_quadratic(const RandomQuadraticOptions& o, std::uint64_t seed) {
  if (o.clients == 0 || o.dim == 0) throw InvalidArgument("random_quadratic: empty shape");
  if (!(o.mu_min > 0) || o.mu_max < o.mu_min)
    throw InvalidArgument("random_quadratic: need 0 < mu_min <= mu_max");
  Rng rng = Rng::stream(seed, stream_tag::init, 0x20);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto unif = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  std::vector<Vec> curv(o.clients, Vec(o.dim)), centers(o.clients, Vec(o.dim));
  Vec shared(o.dim);
  for (auto& v : shared) v = o.center_scale * normal(rng);
  for (std::size_t i = 0; i < o.clients; ++i) {
    const double mu = unif(o.mu_min, o.mu_max);
    const double L = unif(mu, std::max(mu, o.l_max));
    for (std::size_t j = 0; j < o.dim; ++j)
      curv[i][j] = j == 0 ? mu : j == 1 ? L : unif(mu, L);
    if (o.interpolation) {
      centers[i] = shared;
    } else {
      for (auto& v : centers[i]) v = o.center_scale * normal(rng);
    }
  }
  return Problem::quadratic(std::move(curv), std::move(centers));
}

}  // namespace commopt
