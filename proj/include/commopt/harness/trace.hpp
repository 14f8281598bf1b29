#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace commopt {

inline constexpr int kTraceVersion = 1;

// Per-round records as named double columns. Row 0 is the initial state.
// The first column is always "round" and must strictly increase; a
// "cost_cum" column, when present, must not decrease.
class Trace {
 public:
  Trace() = default;
  explicit Trace(std::vector<std::string> columns);

  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t rows() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool has_column(std::string_view name) const;
  std::size_t column_index(std::string_view name) const;

  void add_row(std::vector<double> row);
  const std::vector<double>& row(std::size_t r) const { return data_.at(r); }
  const std::vector<double>& back() const { return data_.back(); }
  double at(std::size_t r, std::string_view col) const;
  std::vector<double> column(std::string_view col) const;

  // version, algorithm, config_hash, seed, ... (free-form JSON object)
  nlohmann::json meta = nlohmann::json::object();

  // Equality is bitwise on the values (NaN equals NaN).
  bool operator==(const Trace& o) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> data_;
  std::size_t cost_col_ = static_cast<std::size_t>(-1);
};

// CSV with a leading `#meta {json}` line, values at 17 significant digits.
std::string trace_to_csv(const Trace& t);
// `required` columns must be present (SchemaError naming the first missing
// one). VersionError on a different format version, ParseError on a
// truncated or malformed body.
Trace trace_from_csv(std::string_view text, const std::vector<std::string>& required = {});

void write_trace(const std::string& path, const Trace& t);
Trace read_trace(const std::string& path, const std::vector<std::string>& required = {});

}  // namespace commopt
