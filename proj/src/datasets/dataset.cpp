#include "commopt/datasets/dataset.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "commopt/errors.hpp"

namespace commopt {

Dataset::Dataset(std::vector<Example> examples, std::size_t dim)
    : examples_(std::move(examples)), dim_(dim) {
  for (const auto& ex : examples_) {
    if (ex.label != 1 && ex.label != -1) throw InvalidArgument("label must be -1 or +1");
    for (std::size_t j = 0; j < ex.features.size(); ++j) {
      if (ex.features[j].index >= dim_) throw InvalidArgument("feature index exceeds dim");
      if (j > 0 && ex.features[j].index <= ex.features[j - 1].index)
        throw InvalidArgument("feature indices must be strictly increasing");
    }
  }
}

Vec Dataset::dense_row(std::size_t i) const {
  Vec row(dim_, 0.0);
  for (const auto& f : examples_.at(i).features) row[f.index] = f.value;
  return row;
}

std::size_t Dataset::positives() const {
  std::size_t c = 0;
  for (const auto& ex : examples_) c += ex.label > 0;
  return c;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

std::string_view next_token(std::string_view& s) {
  std::size_t b = 0;
  while (b < s.size() && is_space(s[b])) ++b;
  std::size_t e = b;
  while (e < s.size() && !is_space(s[e])) ++e;
  auto tok = s.substr(b, e - b);
  s.remove_prefix(e);
  return tok;
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const char* end = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(tok.data(), end, out);
  return ec == std::errc() && p == end;
}

int map_label(std::string_view tok, std::size_t line) {
  double v;
  if (!parse_double(tok, v)) throw ParseError(line, "malformed label '" + std::string(tok) + "'");
  if (v == 1.0) return 1;
  if (v == -1.0 || v == 0.0) return -1;
  throw ParseError(line, "unmappable label '" + std::string(tok) + "'");
}

}  // namespace

Dataset parse_libsvm(std::istream& in) {
  std::vector<Example> examples;
  std::size_t dim = 0;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view rest(raw);
    if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
    auto tok = next_token(rest);
    if (tok.empty()) continue;
    Example ex{map_label(tok, line), {}};
    std::uint64_t prev = 0;
    while (!(tok = next_token(rest)).empty()) {
      auto colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw ParseError(line, "malformed token '" + std::string(tok) + "'");
      auto idx_s = tok.substr(0, colon);
      auto val_s = tok.substr(colon + 1);
      std::uint64_t idx = 0;
      auto [p, ec] = std::from_chars(idx_s.data(), idx_s.data() + idx_s.size(), idx);
      if (ec != std::errc() || p != idx_s.data() + idx_s.size() || idx == 0 ||
          idx > 0xffffffffULL)
        throw ParseError(line, "malformed index '" + std::string(idx_s) + "'");
      if (idx <= prev)
        throw ParseError(line, "nonincreasing index " + std::to_string(idx) + " after " +
                                   std::to_string(prev));
      double v;
      if (!parse_double(val_s, v))
        throw ParseError(line, "malformed value '" + std::string(val_s) + "'");
      ex.features.push_back({static_cast<std::uint32_t>(idx - 1), v});
      prev = idx;
    }
    if (prev > dim) dim = prev;
    examples.push_back(std::move(ex));
  }
  return Dataset(std::move(examples), dim);
}

Dataset parse_libsvm(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_libsvm(in);
}

Dataset load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  return parse_libsvm(in);
}

std::string to_libsvm(const Dataset& ds) {
  std::string out;
  char buf[64];
  for (const auto& ex : ds.examples()) {
    out += ex.label > 0 ? "+1" : "-1";
    for (const auto& f : ex.features) {
      int len = std::snprintf(buf, sizeof buf, " %u:%.17g", f.index + 1, f.value);
      out.append(buf, static_cast<std::size_t>(len));
    }
    out += '\n';
  }
  return out;
}

}  // namespace commopt
