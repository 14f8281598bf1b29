#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "commopt/linalg.hpp"

namespace commopt {

struct KMeansResult {
  std::vector<std::size_t> labels;
  std::vector<Vec> centers;
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding on dense points, Euclidean
// distance, ties broken towards the lowest cluster index. A cluster that
// loses all its points keeps its previous center.
KMeansResult kmeans(const std::vector<Vec>& points, std::size_t k,
                    std::uint64_t seed, int max_iter = 50);

}  // namespace commopt
