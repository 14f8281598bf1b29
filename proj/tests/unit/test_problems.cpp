#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "commopt/datasets/partition.hpp"
#include "commopt/datasets/synthetic.hpp"
#include "commopt/errors.hpp"
#include "commopt/problems/optim.hpp"
#include "commopt/problems/problem.hpp"
#include "commopt/rng.hpp"

using namespace commopt;

namespace {

Problem small_logistic(ProblemKind kind, std::uint64_t seed = 1) {
  SyntheticLogisticOptions o;
  o.samples = 120;
  o.dim = 6;
  o.clusters = 2;
  o.normalize = false;
  auto ds = synth_logistic_dataset(o, seed);
  auto part = partition(ds, PartitionScheme::iid, 4, seed);
  if (kind == ProblemKind::nonconvex_logistic) return Problem::nonconvex_logistic(ds, part);
  return Problem::logistic(ds, part, 0.1);
}

Vec random_vec(Rng& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> n(0, scale);
  Vec v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

std::vector<Problem> all_kinds() {
  RandomQuadraticOptions q;
  q.dim = 6;
  q.l_max = 5;
  return {small_logistic(ProblemKind::l2_logistic), small_logistic(ProblemKind::nonconvex_logistic),
          random_quadratic(q, 3)};
}

// Newton's method on f + (s/2)||x||^2 with a dense Hessian assembled from
// logistic curvature, solved by Gaussian elimination.
Vec newton_logistic(const Dataset& ds, const ClientPartition& part, double mu) {
  const std::size_t d = ds.dim(), n = part.clients();
  Vec x(d, 0.0);
  for (int it = 0; it < 50; ++it) {
    std::vector<Vec> H(d, Vec(d, 0.0));
    Vec g(d, 0.0);
    for (const auto& a : part.assignments) {
      const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(a.size()));
      for (auto j : a) {
        Vec row = ds.dense_row(j);
        const double b = ds[j].label;
        const double z = b * dot(row, x);
        const double s = 1.0 / (1.0 + std::exp(z));
        for (std::size_t k = 0; k < d; ++k) {
          g[k] += -w * b * s * row[k];
          for (std::size_t l = 0; l < d; ++l) H[k][l] += w * s * (1 - s) * row[k] * row[l];
        }
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      g[k] += mu * x[k];
      H[k][k] += mu;
    }
    // solve H dx = g
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < d; ++r)
        if (std::abs(H[r][c]) > std::abs(H[piv][c])) piv = r;
      std::swap(H[c], H[piv]);
      std::swap(g[c], g[piv]);
      for (std::size_t r = c + 1; r < d; ++r) {
        const double f = H[r][c] / H[c][c];
        for (std::size_t l = c; l < d; ++l) H[r][l] -= f * H[c][l];
        g[r] -= f * g[c];
      }
    }
    Vec dx(d);
    for (std::size_t c = d; c-- > 0;) {
      double s = g[c];
      for (std::size_t l = c + 1; l < d; ++l) s -= H[c][l] * dx[l];
      dx[c] = s / H[c][c];
    }
    for (std::size_t k = 0; k < d; ++k) x[k] -= dx[k];
  }
  return x;
}

}  // namespace

TEST_SUITE("problems") {

TEST_CASE("loss at zero and at the center") {
  auto p = small_logistic(ProblemKind::l2_logistic);
  Vec z(p.dim(), 0.0);
  for (std::size_t i = 0; i < p.clients(); ++i) CHECK(p.loss(i, z) == doctest::Approx(std::log(2.0)));
  auto q = synth_quadratic({2, 3}, {{1, 2}, {-1, 0}});
  CHECK(q.loss(0, Vec{1, 2}) == 0.0);
  CHECK(q.grad(1, Vec{1, 1}) == Vec{6, 3});
  CHECK_THROWS_AS(q.loss(0, Vec{1}), InvalidArgument);
  CHECK_THROWS_AS(q.loss(2, Vec{1, 1}), InvalidArgument);
}

TEST_CASE("loss matches the line integral of the gradient") {
  // f(x) - f(y) = int_0^1 <grad f(y + t(x-y)), x-y> dt, Gauss-Legendre 5 points
  const double nodes[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                           0.9061798459386640};
  const double weights[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                             0.4786286704993665, 0.2369268850561891};
  Rng rng(5);
  for (const auto& p : all_kinds()) {
    for (int trial = 0; trial < 20; ++trial) {
      // ray of length 0.2 from a random point
      Vec y = random_vec(rng, p.dim());
      Vec dxy = random_vec(rng, p.dim());
      dxy = scaled(0.2 / std::sqrt(norm_sq(dxy)), dxy);
      Vec x = y;
      axpy(1.0, dxy, x);
      std::size_t i = trial % p.clients();
      double integral = 0;
      for (int k = 0; k < 5; ++k) {
        const double t = 0.5 * (nodes[k] + 1);
        Vec z = y;
        axpy(t, dxy, z);
        integral += 0.5 * weights[k] * dot(p.grad(i, z), dxy);
      }
      CHECK(std::abs(p.loss(i, x) - p.loss(i, y) - integral) < 1e-6);
    }
  }
}

TEST_CASE("gradients match central differences") {
  Rng rng(7);
  for (const auto& p : all_kinds()) {
    for (int trial = 0; trial < 100; ++trial) {
      Vec x = random_vec(rng, p.dim());
      std::size_t i = trial % p.clients();
      Vec g = p.grad(i, x);
      for (std::size_t j = 0; j < p.dim(); ++j) {
        const double h = 1e-6;
        Vec a = x, b = x;
        a[j] += h;
        b[j] -= h;
        const double fd = (p.loss(i, a) - p.loss(i, b)) / (2 * h);
        CHECK(std::abs(fd - g[j]) <= 1e-4 * std::max(1.0, std::abs(g[j])));
      }
    }
  }
}

TEST_CASE("sample gradients average to the client gradient") {
  auto p = small_logistic(ProblemKind::l2_logistic);
  Rng rng(2);
  Vec x = random_vec(rng, p.dim());
  for (std::size_t i = 0; i < p.clients(); ++i) {
    Vec acc(p.dim(), 0.0), gs(p.dim());
    for (std::size_t j = 0; j < p.samples(i); ++j) {
      p.sample_grad(i, j, x, gs);
      axpy(1.0 / p.samples(i), gs, acc);
    }
    Vec g = p.grad(i, x);
    for (std::size_t k = 0; k < p.dim(); ++k) CHECK(acc[k] == doctest::Approx(g[k]).epsilon(1e-12));
  }
}

TEST_CASE("strong convexity and smoothness witnesses") {
  Rng rng(11);
  for (const auto& p : all_kinds()) {
    const auto& c = p.constants();
    for (int trial = 0; trial < 200; ++trial) {
      Vec x = random_vec(rng, p.dim()), y = random_vec(rng, p.dim());
      std::size_t i = trial % p.clients();
      Vec gx = p.grad(i, x), gy = p.grad(i, y);
      const double dxy = dist_sq(x, y);
      CHECK(std::sqrt(dist_sq(gx, gy)) <= c.L[i] * std::sqrt(dxy) * (1 + 1e-12));
      if (p.convex()) {
        const double lower = p.loss(i, y) + dot(gy, sub(x, y)) + 0.5 * c.mu[i] * dxy;
        CHECK(p.loss(i, x) >= lower - 1e-10);
      }
    }
  }
}

TEST_CASE("constants") {
  Dataset one({{1, {{0, 2.0}}}}, 1);
  ClientPartition part{{{0}}, PartitionScheme::iid};
  auto p = Problem::logistic(one, part, 0.1);
  CHECK(p.constants().L[0] == doctest::Approx(1.1));

  auto eq = synth_quadratic({2, 2, 2}, {{0}, {1}, {2}});
  const auto& c = eq.constants();
  CHECK(c.L_tilde == doctest::Approx(2.0));
  CHECK(c.L_max == 2.0);
  CHECK(c.L_tilde_sum == doctest::Approx(2.0 * std::sqrt(3.0)));
  CHECK(c.kappa_max == 1.0);

  auto lg = small_logistic(ProblemKind::l2_logistic);
  const auto& k = lg.constants();
  CHECK(k.L_global == k.L_tilde);
  CHECK(k.L_tilde <= k.L_max);
  CHECK(k.mu_global == doctest::Approx(0.1));
  CHECK(small_logistic(ProblemKind::l2_logistic).constants().L == k.L);
  CHECK(constants_to_json(c).find("\"L_tilde\"") != std::string::npos);
  CHECK_THROWS_AS(Problem::logistic(one, part, 0.0), InvalidArgument);
}

TEST_CASE("constants cached once under concurrent first use") {
  auto p = small_logistic(ProblemKind::l2_logistic, 4);
  std::vector<const ProblemConstants*> seen(8);
  std::vector<std::thread> ts;
  for (int t = 0; t < 8; ++t) ts.emplace_back([&, t] { seen[t] = &p.constants(); });
  for (auto& t : ts) t.join();
  for (auto* s : seen) CHECK(s == seen[0]);
}

TEST_CASE("reference solution") {
  SyntheticLogisticOptions o;
  o.samples = 150;
  o.dim = 5;
  o.normalize = false;
  auto ds = synth_logistic_dataset(o, 21);
  auto part = partition(ds, PartitionScheme::iid, 3, 21);
  auto p = Problem::logistic(ds, part, 0.05);
  Vec xs = reference_solution(p);
  CHECK(std::sqrt(norm_sq(p.grad_avg(xs))) <= 1e-12);
  Vec xn = newton_logistic(ds, part, 0.05);
  for (std::size_t j = 0; j < p.dim(); ++j) CHECK(std::abs(xs[j] - xn[j]) < 1e-8);
  CHECK(reference_solution(p, {}, 1e-12, xs) == xs);

  auto reg = Regularizer::l2(0.5);
  Vec xr = reference_solution(p, reg);
  Vec gr = p.grad_avg(xr);
  axpy(0.5, xr, gr);
  CHECK(std::sqrt(norm_sq(gr)) <= 1e-12);

  auto q = synth_quadratic({1, 3}, {{0}, {4}});
  CHECK(reference_solution(q)[0] == doctest::Approx(3.0));
  CHECK(reference_solution(q, Regularizer::l2(2))[0] == doctest::Approx(1.5));
  CHECK_THROWS_AS(reference_solution(small_logistic(ProblemKind::nonconvex_logistic)),
                  InvalidArgument);
  CHECK_THROWS_AS(reference_solution(p, {}, 1e-12, {}, 3), DivergenceError);
}

TEST_CASE("local minimizer") {
  auto q = synth_quadratic({1, 3}, {{0, 1}, {4, 5}});
  auto lm = local_minimizer(q, 1);
  CHECK(lm.x == Vec{4, 5});
  CHECK(lm.iterations == 1);

  auto p = small_logistic(ProblemKind::l2_logistic);
  auto tight = local_minimizer(p, 2, 1e-6);
  auto loose = local_minimizer(p, 2, 1e-1);
  CHECK(std::sqrt(norm_sq(p.grad(2, tight.x))) < 1e-6);
  CHECK(std::sqrt(norm_sq(p.grad(2, loose.x))) < 1e-1);
  CHECK(loose.iterations < tight.iterations);
  CHECK_THROWS_AS(local_minimizer(p, 0, 0.0), InvalidArgument);
}

TEST_CASE("prox of the regularizer") {
  Vec x{2.0, -3.0};
  CHECK(prox_reg(Regularizer::zero(), 0.7, x) == x);
  CHECK(prox_reg(Regularizer::l2(1), 1.0, Vec{2}) == Vec{1});
  CHECK_THROWS_AS(Regularizer::l2(-1), InvalidArgument);
  Rng rng(3);
  auto reg = Regularizer::l2(0.8);
  for (int t = 0; t < 200; ++t) {
    Vec a = random_vec(rng, 4), b = random_vec(rng, 4);
    CHECK(dist_sq(prox_reg(reg, 0.3, a), prox_reg(reg, 0.3, b)) <= dist_sq(a, b));
  }
}

TEST_CASE("smooth minimizers agree") {
  auto p = small_logistic(ProblemKind::l2_logistic, 8);
  SmoothFn f = [&](std::span<const double> x, std::span<double> g) {
    p.grad(0, x, g);
    return p.loss(0, x);
  };
  MinimizeOptions o;
  o.tol = 1e-9;
  o.max_evals = 200000;
  Vec x0(p.dim(), 0.0);
  auto a = gradient_descent_armijo(f, x0, o);
  auto b = nonlinear_cg(f, x0, o);
  auto c = lbfgs(f, x0, o);
  auto d = gradient_descent_fixed(f, x0, 1.0 / p.constants().L[0], o);
  for (const auto* r : {&a, &b, &c, &d}) {
    INFO(r->grad_norm, " ", r->evaluations);
    CHECK(r->converged);
    for (std::size_t j = 0; j < p.dim(); ++j) CHECK(std::abs(r->x[j] - a.x[j]) < 1e-7);
  }
  CHECK(c.evaluations < a.evaluations);
  o.max_evals = 3;
  CHECK(gradient_descent_fixed(f, x0, 0.1, o).evaluations == 3);
}

}  // TEST_SUITE
