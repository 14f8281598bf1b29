#include "commopt/datasets/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "commopt/datasets/kmeans.hpp"
#include "commopt/errors.hpp"
#include "commopt/rng.hpp"

namespace commopt {

std::string_view to_string(PartitionScheme s) {
  switch (s) {
    case PartitionScheme::iid: return "iid";
    case PartitionScheme::labelwise: return "labelwise";
    case PartitionScheme::feature_kmeans: return "feature_kmeans";
    case PartitionScheme::dirichlet_quantity: return "dirichlet_quantity";
  }
  return "?";
}

PartitionScheme parse_partition_scheme(std::string_view s) {
  for (auto k : {PartitionScheme::iid, PartitionScheme::labelwise,
                 PartitionScheme::feature_kmeans, PartitionScheme::dirichlet_quantity})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown partition scheme '" + std::string(s) + "'");
}

std::size_t ClientPartition::assigned() const {
  std::size_t c = 0;
  for (const auto& a : assignments) c += a.size();
  return c;
}

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

ClientPartition split_iid(std::size_t N, std::size_t n, Rng& rng) {
  auto idx = iota_n(N);
  shuffle(idx, rng);
  ClientPartition p;
  const std::size_t m = N / n;
  for (std::size_t i = 0; i < n; ++i) {
    auto b = idx.begin() + static_cast<std::ptrdiff_t>(i * m);
    auto e = i + 1 == n ? idx.end() : b + static_cast<std::ptrdiff_t>(m);
    p.assignments.emplace_back(b, e);
  }
  return p;
}

ClientPartition split_labelwise(const Dataset& ds, std::size_t n, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t j = 0; j < ds.count(); ++j) (ds[j].label > 0 ? pos : neg).push_back(j);
  shuffle(pos, rng);
  shuffle(neg, rng);
  const std::size_t m = ds.count() / n;
  ClientPartition p;
  std::size_t ip = 0, in = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t want_pos = static_cast<std::size_t>(
        std::llround(static_cast<double>(m) * static_cast<double>(i + 1) / static_cast<double>(n)));
    std::vector<std::size_t> mine;
    for (std::size_t t = 0; t < m; ++t) {
      bool take_pos = t < want_pos;
      if (take_pos && ip == pos.size()) take_pos = false;
      if (!take_pos && in == neg.size()) take_pos = true;
      mine.push_back(take_pos ? pos[ip++] : neg[in++]);
    }
    std::sort(mine.begin(), mine.end());
    p.assignments.push_back(std::move(mine));
  }
  return p;
}

ClientPartition split_kmeans(const Dataset& ds, std::size_t n, std::uint64_t seed, int attempt) {
  std::vector<Vec> rows;
  rows.reserve(ds.count());
  for (std::size_t j = 0; j < ds.count(); ++j) rows.push_back(ds.dense_row(j));
  auto km = kmeans(rows, n, detail::splitmix64(seed ^ static_cast<std::uint64_t>(attempt)));
  ClientPartition p;
  p.assignments.resize(n);
  for (std::size_t j = 0; j < rows.size(); ++j) p.assignments[km.labels[j]].push_back(j);
  return p;
}

// One example per client is reserved up front; the remaining N - n are
// split by Dirichlet(alpha) proportions with largest-remainder rounding.
ClientPartition split_dirichlet(std::size_t N, std::size_t n, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> w(n);
  double total = 0;
  while (total <= 0) {
    total = 0;
    for (auto& v : w) total += (v = gamma(rng));
  }
  const std::size_t spare = N - n;
  std::vector<std::size_t> sizes(n, 1);
  std::vector<std::pair<double, std::size_t>> rem(n);
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double share = static_cast<double>(spare) * w[i] / total;
    auto fl = static_cast<std::size_t>(std::floor(share));
    sizes[i] += fl;
    used += fl;
    rem[i] = {share - static_cast<double>(fl), i};
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t t = 0; used < spare; ++t, ++used) ++sizes[rem[t % n].second];

  auto idx = iota_n(N);
  shuffle(idx, rng);
  ClientPartition p;
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto b = idx.begin() + static_cast<std::ptrdiff_t>(off);
    p.assignments.emplace_back(b, b + static_cast<std::ptrdiff_t>(sizes[i]));
    off += sizes[i];
  }
  return p;
}

bool any_empty(const ClientPartition& p) {
  return std::any_of(p.assignments.begin(), p.assignments.end(),
                     [](const auto& a) { return a.empty(); });
}

}  // namespace

ClientPartition partition(const Dataset& ds, PartitionScheme scheme, std::size_t n,
                          std::uint64_t seed, const PartitionOptions& opts) {
  if (n == 0) throw InvalidArgument("partition: n must be >= 1");
  if (n > ds.count()) throw InvalidArgument("partition: more clients than examples");
  if (scheme == PartitionScheme::dirichlet_quantity && !(opts.dirichlet_alpha > 0))
    throw InvalidArgument("partition: dirichlet alpha must be > 0");

  for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
    Rng rng = Rng::stream(seed, stream_tag::partition, static_cast<std::uint64_t>(attempt));
    ClientPartition p;
    switch (scheme) {
      case PartitionScheme::iid: p = split_iid(ds.count(), n, rng); break;
      case PartitionScheme::labelwise: p = split_labelwise(ds, n, rng); break;
      case PartitionScheme::feature_kmeans: p = split_kmeans(ds, n, seed, attempt); break;
      case PartitionScheme::dirichlet_quantity:
        p = split_dirichlet(ds.count(), n, opts.dirichlet_alpha, rng);
        break;
    }
    p.scheme = scheme;
    if (!any_empty(p)) return p;
  }
  throw InvalidArgument("partition: a client stayed empty after " +
                        std::to_string(opts.max_retries) + " re-draws");
}

std::string partition_to_json(const ClientPartition& p) {
  return nlohmann::json(p.assignments).dump();
}

ClientPartition partition_from_json(std::string_view json, PartitionScheme scheme) {
  ClientPartition p;
  p.scheme = scheme;
  try {
    p.assignments = nlohmann::json::parse(json).get<std::vector<std::vector<std::size_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("partition json: ") + e.what());
  }
  return p;
}

}  // namespace commopt
