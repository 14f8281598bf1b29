#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "commopt/datasets/partition.hpp"
#include "commopt/datasets/synthetic.hpp"
#include "commopt/errors.hpp"
#include "commopt/problems/optim.hpp"
#include "commopt/rng.hpp"
#include "commopt/sppm/sppm.hpp"
#include "common/oracles.hpp"

using namespace commopt;

namespace {

Problem quad6(bool interpolation = false, double mu_min = 0.5) {
  RandomQuadraticOptions o;
  o.clients = 6;
  o.dim = 4;
  o.mu_min = mu_min;
  o.mu_max = 1.0;
  o.l_max = 3.0;
  o.interpolation = interpolation;
  return random_quadratic(o, 5);
}

const Blocks kPairs = {{0, 1}, {2, 3}, {4, 5}};

std::vector<SamplingScheme> schemes6() {
  return {SamplingScheme::full(6),
          SamplingScheme::nonuniform({0.1, 0.2, 0.1, 0.25, 0.15, 0.2}),
          SamplingScheme::nice(6, 1),
          SamplingScheme::nice(6, 2),
          SamplingScheme::nice(6, 4),
          SamplingScheme::block(6, kPairs, {0.5, 0.2, 0.3}),
          SamplingScheme::stratified(6, {{0, 1, 2}, {3}, {4, 5}})};
}

// n centred random gradients.
std::vector<Vec> centred(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> g(n, Vec(d));
  Vec m(d, 0.0);
  for (auto& v : g)
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = 2 * rng.uniform() - 1;
      m[j] += v[j] / double(n);
    }
  for (auto& v : g)
    for (std::size_t j = 0; j < d; ++j) v[j] -= m[j];
  return g;
}

std::vector<Vec> cross() { return {{0, 1}, {1, 0}, {0, -1}, {-1, 0}}; }

using oracle::over_seeds;
using oracle::ss_by_tuples;

const ProxSolverSpec kExact{ProxSolverKind::closed_form_quadratic, 1, 0};

}  // namespace

TEST_SUITE("sppm") {

TEST_CASE("cohort sampling extremes") {
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const Cohort a = sample_cohort(SamplingScheme::nice(5, 5), rng);
    CHECK(a.members == std::vector<std::size_t>{0, 1, 2, 3, 4});
    const Cohort b = sample_cohort(SamplingScheme::stratified(4, {{2}, {0}, {3}, {1}}), rng);
    CHECK(b.members == std::vector<std::size_t>{0, 1, 2, 3});
    for (double w : b.weights) CHECK(w == 0.25);
    const Cohort c = sample_cohort(SamplingScheme::block(4, {{3, 1, 0, 2}}), rng);
    CHECK(c.members == std::vector<std::size_t>{0, 1, 2, 3});
    for (double w : c.weights) CHECK(w == 0.25);
  }
  // NICE inclusion frequency tau/n.
  std::vector<double> hits(6, 0);
  const int draws = 60000;
  for (int k = 0; k < draws; ++k)
    for (std::size_t i : sample_cohort(SamplingScheme::nice(6, 2), rng).members) hits[i] += 1;
  for (double h : hits) CHECK(h / draws == doctest::Approx(1.0 / 3).epsilon(0.03));
}

TEST_CASE("scheme validation") {
  CHECK_THROWS_AS(SamplingScheme::nice(4, 0).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::nice(4, 5).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::nonuniform({0.5, 0.4}).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::nonuniform({1.0, 0.0}).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::block(4, {{0, 1}, {1, 2, 3}}).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::stratified(4, {{0, 1}, {2}}).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::stratified(3, {{0, 1}, {}, {2}}).validate(), ConfigError);
  CHECK_THROWS_AS(SamplingScheme::block(2, {{0}, {1}}, {0.3, 0.3}).validate(), ConfigError);
  try {
    SamplingScheme::nice(4, 9).validate();
  } catch (const ConfigError& e) {
    CHECK(e.field() == "sampling.tau");
  }
  CHECK_THROWS_AS(parse_sampling_kind("importance"), ConfigError);
  CHECK(parse_sampling_kind("stratified") == SamplingKind::stratified);
}

TEST_CASE("enumerated cohorts are unbiased for f") {
  const Problem p = quad6();
  Rng rng(4);
  for (const auto& s : schemes6()) {
    const auto support = enumerate_cohorts(s);
    double total = 0;
    for (const auto& wc : support) total += wc.prob;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (int trial = 0; trial < 5; ++trial) {
      Vec x(4);
      for (double& v : x) v = 4 * rng.uniform() - 2;
      double ef = 0;
      for (const auto& wc : support) ef += wc.prob * CohortObjective(p, wc.cohort).value(x);
      const double f = p.loss_avg(x);
      CHECK(std::abs(ef - f) <= 1e-12 * std::max(1.0, std::abs(f)));
    }
  }
  // Full cohort is f itself.
  const Vec x = {0.3, -1, 2, 0.5};
  CHECK(CohortObjective(p, enumerate_cohorts(SamplingScheme::full(6))[0].cohort).value(x) ==
        doctest::Approx(p.loss_avg(x)).epsilon(1e-14));
}

TEST_CASE("cohort objective") {
  const Problem p = quad6();
  CHECK_THROWS_AS(CohortObjective(p, Cohort{}), InvalidArgument);
  CHECK_THROWS_AS(CohortObjective(p, Cohort{{1}, {0.0}}), InvalidArgument);
  const CohortObjective f(p, Cohort{{1, 4}, {0.5, 2.0}});
  const auto& mu = p.constants().mu;
  CHECK(f.mu() == doctest::Approx(0.5 * mu[1] + 2 * mu[4]));
  // Gradient against central differences.
  const Vec x = {0.2, -0.4, 1.0, 0.7};
  Vec g(4);
  f.grad(x, g);
  for (std::size_t j = 0; j < 4; ++j) {
    Vec a = x, b = x;
    a[j] += 1e-6;
    b[j] -= 1e-6;
    CHECK(g[j] == doctest::Approx((f.value(a) - f.value(b)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("mu_AS values") {
  const Vec mu = {1, 2, 3, 4};
  for (auto m : {StatsMethod::closed_form, StatsMethod::enumeration}) {
    CHECK(mu_as(SamplingScheme::nice(4, 1), mu, m) == doctest::Approx(1.0));
    CHECK(mu_as(SamplingScheme::nice(4, 2), mu, m) == doctest::Approx(1.5));
    CHECK(mu_as(SamplingScheme::nice(4, 4), mu, m) == doctest::Approx(2.5));
    CHECK(mu_as(SamplingScheme::full(4), mu, m) == doctest::Approx(2.5));
  }
  // Closed forms against enumeration on random mu.
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Vec m6(6);
    for (double& v : m6) v = 0.1 + rng.uniform();
    for (const auto& s : schemes6())
      CHECK(mu_as(s, m6) ==
            doctest::Approx(mu_as(s, m6, StatsMethod::enumeration)).epsilon(1e-12));
  }
}

TEST_CASE("mu_NICE is nondecreasing in tau") {
  Rng rng(12);
  for (std::size_t n = 2; n <= 8; ++n) {
    Vec mu(n);
    for (double& v : mu) v = rng.uniform() * 5;
    double prev = 0;
    for (std::size_t tau = 1; tau <= n; ++tau) {
      const double v = mu_as(SamplingScheme::nice(n, tau), mu, StatsMethod::enumeration);
      CHECK(v >= prev - 1e-15);
      prev = v;
    }
  }
}

TEST_CASE("sigma_star_AS closed forms match enumeration") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto g = centred(6, 3, seed);
    for (const auto& s : schemes6()) {
      const double e = sigma_star_as(s, g, StatsMethod::enumeration);
      CHECK(std::abs(sigma_star_as(s, g) - e) <= 1e-12 * std::max(1.0, e));
    }
  }
  // Gradients taken away from the optimum are rejected.
  auto g = centred(4, 2, 1);
  g[0][0] += 1e-3;
  CHECK_THROWS_AS(sigma_star_as(SamplingScheme::nice(4, 2), g), InvalidArgument);
}

TEST_CASE("NICE variance identity") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto g = centred(6, 4, seed);
    double s1 = 0;
    for (const auto& v : g) s1 += norm_sq(v);
    s1 /= 6;
    for (std::size_t tau = 1; tau <= 6; ++tau) {
      const double e = sigma_star_as(SamplingScheme::nice(6, tau), g, StatsMethod::enumeration);
      const double formula = (6.0 / tau - 1) / 5.0 * s1;
      CHECK(std::abs(e - formula) <= 1e-12);
    }
    CHECK(std::abs(sigma_star_as(SamplingScheme::nice(6, 6), g, StatsMethod::enumeration)) <=
          1e-28);
  }
}

TEST_CASE("full sampling has no variance at the optimum") {
  const Problem p = quad6();
  const Vec xs = reference_solution(p);
  const auto g = grads_at(p, xs);
  CHECK(sigma_star_as(SamplingScheme::full(6), g) <= 1e-28);
  CHECK(sigma_star_as(SamplingScheme::full(6), g, StatsMethod::enumeration) <= 1e-28);
  CHECK(sigma_star_as(SamplingScheme::block(6, {{0, 1, 2, 3, 4, 5}}), g) <= 1e-28);
}

TEST_CASE("unit-cross counterexample") {
  const auto g = cross();
  const Blocks odd_even = {{0, 2}, {1, 3}};
  for (auto m : {StatsMethod::closed_form, StatsMethod::enumeration}) {
    CHECK(sigma_star_as(SamplingScheme::stratified(4, odd_even), g, m) == 0.5);
    CHECK(std::abs(sigma_star_as(SamplingScheme::nice(4, 2), g, m) - 1.0 / 3) <= 1e-16);
    // Block sampling over the same clusters has zero-centroid blocks.
    CHECK(sigma_star_as(SamplingScheme::block(4, odd_even), g, m) == 0.0);
  }
  CHECK(ss_by_tuples(odd_even, g, 4) == 0.5);

  // The three pairings by hand: 1/4, 1/2, 1/4.
  CHECK(ss_by_tuples({{0, 1}, {2, 3}}, g, 4) == 0.25);
  CHECK(ss_by_tuples({{0, 3}, {1, 2}}, g, 4) == 0.25);
  const Clustering best = optimal_stratified_clustering(g, 2, ClusteringMode::brute_force);
  CHECK(best.sigma_sq == 0.25);
  CHECK(best.blocks == Blocks{{0, 1}, {2, 3}});
}

TEST_CASE("stratified variance bound") {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = centred(7, 3, seed);
    const Blocks bl = {{0, 4}, {1, 2, 6}, {3, 5}};
    const double v = sigma_star_as(SamplingScheme::stratified(7, bl), g);
    CHECK(std::abs(v - ss_by_tuples(bl, g, 7)) <= 1e-14);
    const double bound = stratified_variance_bound(7, bl, g);
    const Vec sj = cluster_dispersion(bl, g);
    CHECK(v <= bound + 1e-15);
    CHECK(bound <= 3 * *std::max_element(sj.begin(), sj.end()) + 1e-15);
  }
  // Homogeneous clusters reach zero.
  std::vector<Vec> g = {{1, 0}, {-1, 0}, {1, 0}, {-1, 0}};
  const SamplingStats st = sampling_stats(SamplingScheme::stratified(4, {{0, 2}, {1, 3}}),
                                          Vec{1, 1, 1, 1}, g);
  CHECK(st.sigma_star_as_sq == 0.0);
  CHECK(st.sigma_j_sq == Vec{0, 0});
  CHECK(sigma_star_as(SamplingScheme::block(4, {{0, 2}, {1, 3}}), g) >= 0.0);
}

TEST_CASE("optimal stratified clustering") {
  // Homogeneous clusters are found.
  std::vector<Vec> g = {{2, 0}, {-1, 1}, {-1, -1}, {2, 0}, {-1, 1}, {-1, -1}};
  const Clustering c = optimal_stratified_clustering(g, 3, ClusteringMode::brute_force);
  CHECK(c.sigma_sq <= 1e-30);
  // b = n gives singletons.
  const auto r = centred(6, 2, 4);
  const Clustering s = optimal_stratified_clustering(r, 6, ClusteringMode::brute_force);
  CHECK(s.blocks.size() == 6);
  CHECK(s.sigma_sq <= 1e-30);
  CHECK_THROWS_AS(optimal_stratified_clustering(centred(12, 2, 1), 3, ClusteringMode::brute_force),
                  EnumerationLimit);
  CHECK_THROWS_AS(optimal_stratified_clustering(r, 4, ClusteringMode::brute_force),
                  InvalidArgument);
  // k-means recovers the homogeneous clusters as well.
  const Clustering k = optimal_stratified_clustering(g, 3, ClusteringMode::kmeans, 1);
  CHECK(k.sigma_sq <= 1e-30);
  CHECK(k.blocks.size() == 3);
}

TEST_CASE("optimal stratified beats NICE under equal clusters") {
  for (std::size_t b : {2u, 3u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto g = centred(b * b, 3, 100 + seed);
      const Clustering c = optimal_stratified_clustering(g, b, ClusteringMode::brute_force);
      CHECK(c.sigma_sq <= sigma_star_as(SamplingScheme::nice(b * b, b), g) + 1e-15);
    }
  }
}

TEST_CASE("optimal stratified beats block for b = 2") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g = centred(4, 3, 200 + seed);
    const Clustering c = optimal_stratified_clustering(g, 2, ClusteringMode::brute_force);
    CHECK(c.sigma_sq <= sigma_star_as(SamplingScheme::block(4, c.blocks), g) + 1e-15);
  }
}

TEST_CASE("convergence bound") {
  const BoundValue b0 = convergence_bound(0.5, 2.0, 3.0, 7.0, 0);
  CHECK(b0.value == doctest::Approx(7.0 + b0.neighborhood));
  CHECK(convergence_bound(3.0, 0.5, 0.0, 10.0, 400).value < 1e-100);
  const double mu = 0.7, sigma = 2.3;
  CHECK(convergence_bound(1 / mu, mu, sigma, 1, 1).neighborhood ==
        doctest::Approx(sigma / (3 * mu * mu)));
  CHECK_THROWS_AS(convergence_bound(0, 1, 1, 1, 1), InvalidArgument);
}

TEST_CASE("iteration complexity") {
  const double mu = 0.8, sigma = 2.0, d0 = 5.0;
  const double eps = sigma / (mu * mu);
  const IterationComplexity ic = iteration_complexity(eps, mu, sigma, d0);
  CHECK(ic.in_regime);
  CHECK(ic.t_min == doctest::Approx(std::log(2 * d0 / eps)));
  CHECK(ic.gamma == doctest::Approx(eps * mu / sigma));
  // Leading term is linear in sigma.
  const double e = 0.1;
  const double l = std::log(2 * d0 / e);
  const double t1 = iteration_complexity(e, mu, sigma, d0).t_min - 0.5 * l;
  const double t2 = iteration_complexity(e, mu, 2 * sigma, d0).t_min - 0.5 * l;
  CHECK(t2 == doctest::Approx(2 * t1));
  CHECK_FALSE(iteration_complexity(10 * eps, mu, sigma, d0).in_regime);
}

TEST_CASE("recommended stepsize and horizon reach eps") {
  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::nice(6, 2);
  const Vec xs = reference_solution(p);
  const double mu = mu_as(s, p.constants().mu);
  const double sigma = sigma_star_as(s, grads_at(p, xs));
  const double d0 = norm_sq(xs);
  const double eps = 0.05 * sigma / (mu * mu);
  const IterationComplexity ic = iteration_complexity(eps, mu, sigma, d0);
  REQUIRE(ic.in_regime);
  double sum = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    sum += run_sppm_as(p, s, ic.gamma, ic.T, kExact, {}, seed).trace.back()[1];
  CHECK(sum / 100 <= eps);
}

TEST_CASE("inexact bound") {
  const double g = 0.5, mu = 1.0, sig = 2.0, d0 = 3.0;
  const double smax = g * g * mu * mu + 2 * g * mu;
  CHECK_THROWS_AS(inexact_bound(g, mu, sig, 0.1, 0, 1, d0), InvalidArgument);
  CHECK_THROWS_AS(inexact_bound(g, mu, sig, 0.1, smax, 1, d0), InvalidArgument);
  for (double t : {0.0, 1.0, 10.0})
    CHECK(inexact_bound(g, mu, sig, 0, 1e-9, t, d0) ==
          doctest::Approx(convergence_bound(g, mu, sig, d0, t).value).epsilon(1e-7));
  double prev = 0;
  for (double b : {0.0, 0.01, 0.1, 1.0}) {
    const double v = inexact_bound(g, mu, sig, b, 0.3, 5, d0);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("prox solvers") {
  // f = 1/2 ||z - c||^2 as a single client with unit curvature.
  const Problem one = synth_quadratic({1.0}, {{1.0, -2.0}});
  const CohortObjective f(one, Cohort{{0}, {1.0}});
  const Vec a = {3.0, 0.5};
  const ProxResult r = prox_solve(f, 0.7, a, kExact);
  CHECK(r.rounds == 1);
  CHECK(r.x[0] == doctest::Approx((3.0 + 0.7 * 1.0) / 1.7));
  CHECK(r.x[1] == doctest::Approx((0.5 + 0.7 * -2.0) / 1.7));
  const Vec far = prox_solve(f, 1e12, a, kExact).x;
  CHECK(far[0] == doctest::Approx(1.0));
  CHECK(far[1] == doctest::Approx(-2.0));

  const Problem p = quad6();
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const CohortObjective fc(p, sample_cohort(SamplingScheme::nice(6, 3), rng));
    const Vec x0 = {1, -1, 2, 0.5};
    const Vec exact = prox_solve(fc, 2.0, x0, kExact).x;
    for (auto k : {ProxSolverKind::gradient_descent, ProxSolverKind::conjugate_gradient,
                   ProxSolverKind::quasi_newton}) {
      const ProxResult it = prox_solve(fc, 2.0, x0, {k, 200, 1e-10});
      CHECK(it.rounds <= 200);
      CHECK(std::sqrt(dist_sq(it.x, exact)) <= 1e-8);
    }
    // Exactly K rounds without a tolerance.
    CHECK(prox_solve(fc, 2.0, x0, {ProxSolverKind::gradient_descent, 3, 0}).rounds == 3);
  }

  SyntheticLogisticOptions o;
  o.samples = 200;
  o.dim = 4;
  Dataset ds = synth_logistic_dataset(o, 1);
  const Problem lg = Problem::logistic(ds, partition(ds, PartitionScheme::iid, 3, 1), 0.1);
  const CohortObjective fl(lg, Cohort{{0, 2}, {0.5, 0.5}});
  CHECK_THROWS_AS(prox_solve(fl, 1.0, Vec(4, 0.0), kExact), InvalidArgument);
  const Vec q = prox_solve(fl, 1.0, Vec(4, 0.3), {ProxSolverKind::quasi_newton, 500, 1e-12}).x;
  Vec gq(4);
  fl.grad(q, gq);
  for (std::size_t j = 0; j < 4; ++j) gq[j] += q[j] - 0.3;
  CHECK(std::sqrt(norm_sq(gq)) <= 1e-11);
}

TEST_CASE("exact prox step contracts towards the optimum") {
  const Problem p = quad6();
  const Vec xs = reference_solution(p);
  Rng rng(6);
  for (const auto& s : schemes6())
    for (int trial = 0; trial < 10; ++trial) {
      const CohortObjective f(p, sample_cohort(s, rng));
      Vec x(4), gs(4);
      for (double& v : x) v = 6 * rng.uniform() - 3;
      const double gamma = 0.1 + 3 * rng.uniform();
      f.grad(xs, gs);
      Vec shifted = xs;
      axpy(gamma, gs, shifted);
      const Vec a = prox_solve(f, gamma, x, kExact).x;
      const Vec b = prox_solve(f, gamma, shifted, kExact).x;
      // Every point is a fixed point of its shifted prox.
      CHECK(std::sqrt(dist_sq(b, xs)) <= 1e-12);
      CHECK(std::sqrt(dist_sq(a, b)) <=
            std::sqrt(dist_sq(x, shifted)) / (1 + gamma * f.mu()) * (1 + 1e-12));
    }
}

TEST_CASE("SPPM with full sampling is monotone PPM") {
  const Problem p = quad6();
  const SppmResult r = run_sppm_as(p, SamplingScheme::full(6), 0.5, 30, kExact, {}, 0);
  const auto d = r.trace.column("dist_sq");
  for (std::size_t t = 1; t < d.size(); ++t) CHECK(d[t] < d[t - 1]);
  CHECK(r.trace.columns() == kSppmColumns);
}

TEST_CASE("interpolation regime converges in one large step") {
  // Cohort weights sum to 1 for these schemes, so mu_C >= min mu_i = 1 and
  // the squared contraction (1/(1 + gamma mu_C))^2 is below 1e-6.
  const Problem p = quad6(true, 1.0);
  for (const auto& s : {SamplingScheme::full(6), SamplingScheme::nice(6, 1),
                        SamplingScheme::nice(6, 2), SamplingScheme::stratified(6, kPairs)}) {
    const SppmResult r = run_sppm_as(p, s, 1e3, 1, kExact, {}, 3);
    CHECK(r.trace.at(1, "dist_sq") <= 1e-6 * r.trace.at(0, "dist_sq"));
  }
}

TEST_CASE("SPPM mean error below the convergence bound") {
  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::nice(6, 2);
  const Vec xs = reference_solution(p);
  const double mu = mu_as(s, p.constants().mu, StatsMethod::enumeration);
  const double sig = sigma_star_as(s, grads_at(p, xs), StatsMethod::enumeration);
  const double gamma = 0.5;
  const auto st = over_seeds(100, 51, "dist_sq", [&](std::size_t k) {
    return run_sppm_as(p, s, gamma, 50, kExact, {}, k).trace;
  });
  for (std::size_t t = 0; t <= 50; ++t)
    CHECK(st.mean[t] <= convergence_bound(gamma, mu, sig, norm_sq(xs), double(t)).value +
                            3 * st.se[t]);
}

TEST_CASE("SPPM traces are deterministic and cost-consistent") {
  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::stratified(6, kPairs);
  const CostModel cost{0.1, 1.0};
  const ProxSolverSpec gd{ProxSolverKind::gradient_descent, 5, 1e-6};
  const SppmResult a = run_sppm_as(p, s, 2.0, 40, gd, cost, 9);
  const SppmResult b = run_sppm_as(p, s, 2.0, 40, gd, cost, 9);
  CHECK(a.trace == b.trace);
  CHECK(trace_to_csv(a.trace) == trace_to_csv(b.trace));
  CHECK(!(a.trace == run_sppm_as(p, s, 2.0, 40, gd, cost, 10).trace));
  const double recomputed = comm_cost(a.trace, cost);
  CHECK(std::memcmp(&recomputed, &a.trace.back()[3], sizeof(double)) == 0);
  // Early stop at the target.
  SppmOptions o;
  o.target = 1e-3;
  const SppmResult c = run_sppm_as(p, SamplingScheme::full(6), 1.0, 1000, kExact, {}, 0, o);
  CHECK(c.trace.back()[1] < 1e-3);
  CHECK(c.trace.at(c.trace.rows() - 2, "dist_sq") >= 1e-3);
}

TEST_CASE("comm_cost accounting") {
  Trace t(kSppmColumns);
  t.add_row({0, 1, 0, 0});
  for (int r = 1; r <= 4; ++r) t.add_row({double(r), 1, 3, 0});
  CHECK(comm_cost(t, {1, 0}) == 12.0);
  CHECK(comm_cost(t, {0, 1}) == 4.0);
  CHECK_THROWS_AS(comm_cost(t, {-1, 0}), ConfigError);
}

TEST_CASE("run validation") {
  const Problem p = quad6();
  CHECK_THROWS_AS(run_sppm_as(p, SamplingScheme::nice(5, 2), 1, 1, kExact, {}, 0), ConfigError);
  CHECK_THROWS_AS(run_sppm_as(p, SamplingScheme::nice(6, 2), -1, 1, kExact, {}, 0), ConfigError);
  CHECK_THROWS_AS(run_sppm_as(p, SamplingScheme::nice(6, 2), 1, 1,
                              {ProxSolverKind::gradient_descent, 0, 0}, {}, 0),
                  ConfigError);
  CHECK_THROWS_AS(run_localgd(p, SamplingScheme::full(6), 0.1, 0, 5, {}, 0), ConfigError);
  CHECK_THROWS_AS(run_fedavg_sppm(p, SamplingScheme::full(6), 1, 0, 1, 5, {}, 0), ConfigError);
  CHECK_THROWS_AS(run_fedprox_sppm(p, SamplingScheme::full(6), 1, 0, 5, {}, 0), ConfigError);
  CHECK_THROWS_AS(parse_prox_solver("adam"), ConfigError);
}

TEST_CASE("divergence guard") {
  const Problem p = quad6();
  CHECK_THROWS_AS(run_mbgd(p, SamplingScheme::full(6), 50.0, 200, {}, 0), DivergenceError);
}

TEST_CASE("LocalGD with one step and full participation is GD") {
  const Problem p = quad6();
  const double eta = 0.2;
  const SppmResult r = run_localgd(p, SamplingScheme::full(6), eta, 1, 25, {}, 0);
  Vec x(4, 0.0);
  for (int t = 0; t < 25; ++t) axpy(-eta, p.grad_avg(x), x);
  CHECK(std::sqrt(dist_sq(r.x, x)) <= 1e-12);
  CHECK(r.trace.back()[2] == 1.0);
  CHECK(comm_cost(r.trace, {1, 1}) == 50.0);
  const SppmResult m = run_mbgd(p, SamplingScheme::full(6), eta, 25, {}, 0);
  CHECK(std::sqrt(dist_sq(m.x, x)) <= 1e-12);
}

TEST_CASE("LocalGD settles in a larger neighbourhood than stratified SPPM") {
  // Three groups of identical clients: stratified sampling has sigma = 0,
  // local steps still drift.
  std::vector<Vec> a, c;
  Rng rng(21);
  for (std::size_t g = 0; g < 3; ++g) {
    Vec ag(3), cg(3);
    for (std::size_t j = 0; j < 3; ++j) {
      ag[j] = 0.5 + 2 * rng.uniform();
      cg[j] = 4 * rng.uniform() - 2;
    }
    for (int k = 0; k < 3; ++k) {
      a.push_back(ag);
      c.push_back(cg);
    }
  }
  const Problem p = synth_diag_quadratic(a, c);
  const SamplingScheme s = SamplingScheme::stratified(9, {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}});
  const CostModel cost{1, 0};
  const ProxSolverSpec cg{ProxSolverKind::conjugate_gradient, 4, 0};
  double sppm = 0, lgd = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SppmResult r = run_sppm_as(p, s, 10.0, 100, cg, cost, seed);
    const SppmResult l = run_localgd(p, s, 0.1, 10, 400, cost, seed);
    CHECK(r.trace.back()[3] == l.trace.back()[3]);
    sppm += r.trace.back()[1];
    lgd += l.trace.back()[1];
  }
  CHECK(sppm < lgd);
}

TEST_CASE("FedProx-SPPM with singleton cohorts and K = 1 is SPPM") {
  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::nice(6, 1);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const SppmResult a = run_sppm_as(p, s, 0.8, 60, kExact, {1, 0}, seed);
    const SppmResult b = run_fedprox_sppm(p, s, 0.8, 1, 60, {1, 0}, seed);
    for (std::size_t r = 0; r < a.trace.rows(); ++r)
      CHECK(std::memcmp(a.trace.row(r).data(), b.trace.row(r).data(), 4 * sizeof(double)) == 0);
    CHECK(std::memcmp(a.x.data(), b.x.data(), 4 * sizeof(double)) == 0);
  }
}

TEST_CASE("FedProx constants and bound") {
  const std::vector<Vec> g = centred(4, 2, 3);
  const FedProxConstants c = fedprox_constants(SamplingScheme::nice(4, 2), Vec(4, 0.5), g, 2.0);
  CHECK(c.A == doctest::Approx(1.0 / 2.0).epsilon(1e-15));

  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::nice(6, 2);
  const auto st = over_seeds(100, 41, "dist_sq", [&](std::size_t k) {
    return run_fedprox_sppm(p, s, 0.5, 1, 40, {}, k).trace;
  });
  const Trace one = run_fedprox_sppm(p, s, 0.5, 1, 40, {}, 0).trace;
  for (std::size_t t = 1; t <= 40; ++t) {
    const double bound = one.at(t, "bound");
    CHECK(std::isfinite(bound));
    CHECK(st.mean[t] <= bound + 3 * st.se[t]);
  }
  CHECK(std::isnan(run_fedprox_sppm(p, s, 0.5, 2, 3, {}, 0).trace.at(2, "bound")));
}

TEST_CASE("FedAvg-SPPM local prox") {
  SyntheticLogisticOptions o;
  o.samples = 200;
  o.dim = 4;
  Dataset ds = synth_logistic_dataset(o, 1);
  const Problem lg = Problem::logistic(ds, partition(ds, PartitionScheme::iid, 3, 1), 0.1);
  const Vec xt = {0.5, -0.2, 0.1, 1.0}, y = {-0.3, 0.4, 0.0, 0.2};
  const double gamma = 2.0, alpha = 0.7;
  // Direct minimization of f_i + ||z - x_t||^2/(2 gamma) + ||z - y||^2/(2 alpha).
  SmoothFn direct = [&](std::span<const double> z, std::span<double> g) {
    lg.grad(1, z, g);
    double v = lg.loss(1, z);
    for (std::size_t j = 0; j < z.size(); ++j) {
      g[j] += (z[j] - xt[j]) / gamma + (z[j] - y[j]) / alpha;
      v += (z[j] - xt[j]) * (z[j] - xt[j]) / (2 * gamma) + (z[j] - y[j]) * (z[j] - y[j]) / (2 * alpha);
    }
    return v;
  };
  MinimizeOptions mo;
  mo.tol = 1e-12;
  const Vec ref = lbfgs(direct, y, mo).x;
  CHECK(std::sqrt(dist_sq(fedavg_local_prox(lg, 1, gamma, alpha, xt, y), ref)) <= 1e-9);

  // alpha -> infinity leaves the exact prox of f_i + ||. - x_t||^2/(2 gamma).
  const Problem p = quad6();
  const Vec inf = fedavg_local_prox(p, 2, gamma, 1e14, xt, y);
  CHECK(std::sqrt(dist_sq(inf, client_prox(p, 2, gamma, xt))) <= 1e-10);
}

TEST_CASE("FedAvg-SPPM with K = 1 and singletons is FedProx with the combined stepsize") {
  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::nice(6, 1);
  const double gamma = 1.5, alpha = 0.5;
  const double gc = gamma * alpha / (gamma + alpha);
  const SppmResult a = run_fedavg_sppm(p, s, gamma, alpha, 1, 50, {}, 4);
  const SppmResult b = run_fedprox_sppm(p, s, gc, 1, 50, {}, 4);
  for (std::size_t r = 0; r < a.trace.rows(); ++r)
    CHECK(a.trace.at(r, "dist_sq") == doctest::Approx(b.trace.at(r, "dist_sq")).epsilon(1e-10));
}

TEST_CASE("FedAvg-SPPM keeps a shared optimum fixed") {
  const Problem p = quad6(true);
  const Vec xs = reference_solution(p);
  SppmOptions o;
  o.x0 = xs;
  const SppmResult r = run_fedavg_sppm(p, SamplingScheme::nice(6, 3), 1.0, 0.3, 3, 10, {}, 0, o);
  for (std::size_t t = 0; t < r.trace.rows(); ++t) CHECK(r.trace.at(t, "dist_sq") <= 1e-28);
}

TEST_CASE("inexact prox runs stay below the inexact bound") {
  const Problem p = quad6();
  const SamplingScheme s = SamplingScheme::nice(6, 2);
  const Vec xs = reference_solution(p);
  const double mu = mu_as(s, p.constants().mu, StatsMethod::enumeration);
  const double sig = sigma_star_as(s, grads_at(p, xs), StatsMethod::enumeration);
  const double gamma = 0.5;
  SppmOptions o;
  o.measure_prox_error = true;
  const ProxSolverSpec gd{ProxSolverKind::gradient_descent, 3, 0};
  std::vector<Trace> runs;
  double b = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    runs.push_back(run_sppm_as(p, s, gamma, 30, gd, {}, seed, o).trace);
    for (double e : runs.back().column("prox_err_sq"))
      if (!std::isnan(e)) b = std::max(b, e);
  }
  CHECK(b > 0);
  const auto st = over_seeds(100, 31, "dist_sq", [&](std::size_t k) { return runs[k]; });
  const double smax = gamma * gamma * mu * mu + 2 * gamma * mu;
  for (std::size_t t = 0; t <= 30; ++t)
    CHECK(st.mean[t] <= inexact_bound(gamma, mu, sig, b, smax / 2, double(t), norm_sq(xs)) +
                            3 * st.se[t]);
}

}  // TEST_SUITE
