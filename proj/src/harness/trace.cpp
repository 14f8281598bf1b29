#include "commopt/harness/trace.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "commopt/errors.hpp"

namespace commopt {

Trace::Trace(std::vector<std::string> columns) : columns_(std::move(columns)) {
  if (columns_.empty() || columns_.front() != "round")
    throw InvalidArgument("trace: first column must be 'round'");
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j)
      if (columns_[i] == columns_[j]) throw InvalidArgument("trace: duplicate column " + columns_[i]);
    if (columns_[i] == "cost_cum") cost_col_ = i;
  }
  meta["version"] = kTraceVersion;
}

bool Trace::has_column(std::string_view name) const {
  for (const auto& c : columns_)
    if (c == name) return true;
  return false;
}

std::size_t Trace::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i] == name) return i;
  throw SchemaError("trace has no column '" + std::string(name) + "'");
}

void Trace::add_row(std::vector<double> row) {
  if (row.size() != columns_.size())
    throw InvalidArgument("trace row has " + std::to_string(row.size()) + " values, expected " +
                          std::to_string(columns_.size()));
  if (!data_.empty()) {
    if (!(row[0] > data_.back()[0])) throw InvalidArgument("trace rounds must strictly increase");
    if (cost_col_ < row.size() && row[cost_col_] < data_.back()[cost_col_])
      throw InvalidArgument("trace cost_cum must not decrease");
  }
  data_.push_back(std::move(row));
}

double Trace::at(std::size_t r, std::string_view col) const {
  return data_.at(r)[column_index(col)];
}

std::vector<double> Trace::column(std::string_view col) const {
  const std::size_t c = column_index(col);
  std::vector<double> out;
  out.reserve(data_.size());
  for (const auto& r : data_) out.push_back(r[c]);
  return out;
}

bool Trace::operator==(const Trace& o) const {
  if (columns_ != o.columns_ || meta != o.meta || data_.size() != o.data_.size()) return false;
  for (std::size_t r = 0; r < data_.size(); ++r)
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      const double a = data_[r][c], b = o.data_[r][c];
      if (std::isnan(a) && std::isnan(b)) continue;
      if (std::memcmp(&a, &b, sizeof a) != 0) return false;
    }
  return true;
}

std::string trace_to_csv(const Trace& t) {
  std::string out = "#meta " + t.meta.dump() + "\n";
  for (std::size_t c = 0; c < t.columns().size(); ++c) {
    if (c) out += ',';
    out += t.columns()[c];
  }
  out += '\n';
  char buf[40];
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto& row = t.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      int len = std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      out.append(buf, static_cast<std::size_t>(len));
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t b = 0;
  while (true) {
    auto e = line.find(',', b);
    out.push_back(line.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
    if (e == std::string_view::npos) break;
    b = e + 1;
  }
  return out;
}

double parse_value(std::string_view s, std::size_t line) {
  double v;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError(line, "malformed value '" + std::string(s) + "'");
  return v;
}

}  // namespace

Trace trace_from_csv(std::string_view text, const std::vector<std::string>& required) {
  std::vector<std::string_view> lines;
  std::size_t b = 0;
  while (b < text.size()) {
    auto e = text.find('\n', b);
    if (e == std::string_view::npos)
      throw ParseError(lines.size() + 1, "truncated trace: last line has no newline");
    lines.push_back(text.substr(b, e - b));
    b = e + 1;
  }
  if (lines.empty() || lines[0].rfind("#meta ", 0) != 0)
    throw SchemaError("trace: missing #meta header line");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(lines[0].substr(6));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("trace meta: ") + e.what());
  }
  if (!meta.is_object() || !meta.contains("version") || !meta["version"].is_number_integer())
    throw SchemaError("trace: meta has no integer version");
  if (meta["version"].get<int>() != kTraceVersion)
    throw VersionError("trace format version " + meta["version"].dump() + ", expected " +
                       std::to_string(kTraceVersion));
  if (lines.size() < 2) throw ParseError(2, "truncated trace: no column header");
  std::vector<std::string> cols;
  for (auto c : split(lines[1])) cols.emplace_back(c);
  for (const auto& r : required) {
    bool found = false;
    for (const auto& c : cols) found = found || c == r;
    if (!found) throw SchemaError("trace is missing column '" + r + "'");
  }
  Trace t;
  try {
    t = Trace(cols);
  } catch (const InvalidArgument& e) {
    throw SchemaError(e.what());
  }
  for (std::size_t i = 2; i < lines.size(); ++i) {
    auto fields = split(lines[i]);
    if (fields.size() != cols.size())
      throw ParseError(i + 1, "expected " + std::to_string(cols.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_value(f, i + 1));
    try {
      t.add_row(std::move(row));
    } catch (const InvalidArgument& e) {
      throw ParseError(i + 1, e.what());
    }
  }
  t.meta = std::move(meta);
  return t;
}

void write_trace(const std::string& path, const Trace& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path);
  const std::string s = trace_to_csv(t);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw InvalidArgument("write failed for " + path);
}

Trace read_trace(const std::string& path, const std::vector<std::string>& required) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return trace_from_csv(ss.str(), required);
}

}  // namespace commopt
