#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "commopt/harness/config.hpp"
#include "commopt/harness/trace.hpp"

namespace commopt {

// One run of the configured algorithm. meta carries version, algorithm,
// config_hash and seed.
Trace run_single(const ExperimentConfig& cfg, std::uint64_t seed);

// <output>/<algorithm>_seed<k>.csv for every configured seed; returns the
// paths in seed order. The output directory is created when missing.
std::vector<std::string> run_experiment(const ExperimentConfig& cfg);

// Column names a sweep reads from the traces of an algorithm family.
struct SweepMetric {
  std::string metric;  // compared against eps
  std::string rounds;  // counts rounds
  std::string cost;    // cumulative cost
};
SweepMetric sweep_metric(Algorithm a);

struct ParamGrid {
  std::string key;
  std::vector<std::string> values;
};

// "K=1..16" (inclusive integer range) or "alpha=0.1,0.5,0.9".
ParamGrid parse_grid(std::string_view text);

struct SweepRow {
  std::string value;
  std::size_t seeds = 0;
  std::size_t reached = 0;  // seeds that hit eps
  // Rounds and cost at the first row with metric <= eps; inf when a seed
  // never gets there.
  double rounds_mean = 0, rounds_se = 0, rounds_median = 0;
  double cost_mean = 0, cost_se = 0;
  double final_mean = 0, final_se = 0;  // metric at the last row
};

struct SweepTable {
  std::string key;
  SweepMetric metric;
  double eps = 0;
  std::vector<SweepRow> rows;
};

// Grid points run concurrently (threads = 0 uses the hardware count). A
// failing point rethrows with its coordinate prefixed, keeping the type.
SweepTable sweep(const ExperimentConfig& cfg, const ParamGrid& grid, unsigned threads = 0);

std::string sweep_to_csv(const SweepTable& t);

}  // namespace commopt
