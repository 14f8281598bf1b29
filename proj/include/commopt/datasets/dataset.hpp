#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "commopt/linalg.hpp"

namespace commopt {

// One nonzero entry; `index` is 0-based (the file format is 1-based).
struct Feature {
  std::uint32_t index;
  double value;

  bool operator==(const Feature&) const = default;
};

struct Example {
  int label;  // -1 or +1
  std::vector<Feature> features;  // strictly increasing index

  bool operator==(const Example&) const = default;

  double dot(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& f : features) s += f.value * x[f.index];
    return s;
  }
  double norm_sq() const {
    double s = 0.0;
    for (const auto& f : features) s += f.value * f.value;
    return s;
  }
};

class Dataset {
 public:
  Dataset() = default;
  // `dim` must cover every feature index; throws InvalidArgument otherwise.
  Dataset(std::vector<Example> examples, std::size_t dim);

  const std::vector<Example>& examples() const { return examples_; }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return examples_.size(); }

  Vec dense_row(std::size_t i) const;
  std::size_t positives() const;

  bool operator==(const Dataset&) const = default;

 private:
  std::vector<Example> examples_;
  std::size_t dim_ = 0;
};

// LibSVM text: `<label> <idx>:<val> ...` per nonempty line, indices 1-based
// and strictly increasing. Labels 0/1 are mapped to -1/+1. Errors carry the
// 1-based line number.
Dataset parse_libsvm(std::istream& in);
Dataset parse_libsvm(std::string_view text);
Dataset load_libsvm(const std::string& path);

// Inverse of parse_libsvm at full precision (17 significant digits).
std::string to_libsvm(const Dataset& ds);

}  // namespace commopt
