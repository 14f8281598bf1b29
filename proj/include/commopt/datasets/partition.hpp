#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "commopt/datasets/dataset.hpp"

namespace commopt {

enum class PartitionScheme { iid, labelwise, feature_kmeans, dirichlet_quantity };

std::string_view to_string(PartitionScheme s);
PartitionScheme parse_partition_scheme(std::string_view s);

struct ClientPartition {
  std::vector<std::vector<std::size_t>> assignments;
  PartitionScheme scheme = PartitionScheme::iid;

  std::size_t clients() const { return assignments.size(); }
  std::size_t assigned() const;
};

struct PartitionOptions {
  double dirichlet_alpha = 0.5;
  // Re-draws allowed when a scheme leaves some client empty.
  int max_retries = 100;
};

// Splits `ds` across n clients. Deterministic for a fixed seed.
//  iid:                shuffle, then n-1 equal blocks with the remainder on
//                      the last client
//  labelwise:          client i (0-based) gets positive fraction (i+1)/n
//  feature_kmeans:     one k-means cluster (k = n) of feature vectors per client
//  dirichlet_quantity: client sizes from Dirichlet(alpha)
ClientPartition partition(const Dataset& ds, PartitionScheme scheme,
                          std::size_t n, std::uint64_t seed,
                          const PartitionOptions& opts = {});

// JSON array of index arrays, e.g. [[0,3],[1,2]].
std::string partition_to_json(const ClientPartition& p);
ClientPartition partition_from_json(std::string_view json, PartitionScheme scheme);

}  // namespace commopt
