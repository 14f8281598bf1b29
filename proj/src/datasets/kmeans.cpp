#include "commopt/datasets/kmeans.hpp"

#include <limits>

#include "commopt/errors.hpp"
#include "commopt/rng.hpp"

namespace commopt {

namespace {

std::size_t nearest(const std::vector<Vec>& centers, const Vec& p, double* best_d = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    double d = dist_sq(centers[c], p);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  if (best_d) *best_d = bd;
  return best;
}

}  // namespace

KMeansResult kmeans(const std::vector<Vec>& points, std::size_t k, std::uint64_t seed,
                    int max_iter) {
  const std::size_t n = points.size();
  if (k == 0 || k > n) throw InvalidArgument("kmeans: need 1 <= k <= number of points");
  Rng rng(seed);

  // k-means++ seeding
  KMeansResult res;
  res.centers.push_back(points[rng.below(n)]);
  std::vector<double> d2(n);
  while (res.centers.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest(res.centers, points[i], &d2[i]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0) {
      pick = rng.below(n);
    } else {
      double u = rng.uniform() * total;
      double acc = 0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc && d2[i] > 0) {
          pick = i;
          break;
        }
      }
    }
    res.centers.push_back(points[pick]);
  }

  const std::size_t dim = points.front().size();
  res.labels.assign(n, 0);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = nearest(res.centers, points[i]);
      if (c != res.labels[i]) {
        res.labels[i] = c;
        changed = true;
      }
    }
    res.iterations = it + 1;
    if (!changed) break;
    std::vector<Vec> sums(k, Vec(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, points[i], sums[res.labels[i]]);
      ++counts[res.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0) res.centers[c] = scaled(1.0 / static_cast<double>(counts[c]), sums[c]);
  }
  return res;
}

}  // namespace commopt
