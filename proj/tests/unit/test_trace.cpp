#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "commopt/errors.hpp"
#include "commopt/harness/trace.hpp"

using namespace commopt;

namespace {

Trace sample() {
  Trace t({"round", "dist_sq", "K_used", "cost_cum"});
  t.meta["algorithm"] = "sppm_as";
  t.meta["seed"] = 7;
  t.add_row({0, 1.0 / 3.0, 0, 0});
  t.add_row({1, 0.1, 4, 4});
  t.add_row({2, std::numeric_limits<double>::quiet_NaN(), 2, 6});
  t.add_row({3, 5e-300, 2, 8});
  return t;
}

}  // namespace

TEST_SUITE("trace") {

TEST_CASE("csv round trip is exact") {
  Trace t = sample();
  Trace u = trace_from_csv(trace_to_csv(t));
  CHECK(u == t);
  CHECK(u.at(0, "dist_sq") == 1.0 / 3.0);
  CHECK(trace_to_csv(u) == trace_to_csv(t));

  auto path = std::filesystem::temp_directory_path() / "commopt_trace_test.csv";
  write_trace(path.string(), t);
  CHECK(read_trace(path.string(), {"round", "cost_cum"}) == t);
  std::filesystem::remove(path);
}

TEST_CASE("row invariants") {
  Trace t({"round", "cost_cum"});
  t.add_row({0, 1});
  CHECK_THROWS_AS(t.add_row({0, 2}), InvalidArgument);
  CHECK_THROWS_AS(t.add_row({1, 0.5}), InvalidArgument);
  CHECK_THROWS_AS(t.add_row({1}), InvalidArgument);
  CHECK_THROWS_AS(Trace({"x", "round"}), InvalidArgument);
  CHECK_THROWS_AS(t.column("missing"), SchemaError);
}

TEST_CASE("reader errors") {
  const std::string good = trace_to_csv(sample());
  try {
    trace_from_csv(good, {"round", "lyapunov"});
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("lyapunov") != std::string::npos);
  }
  std::string other = good;
  other.replace(other.find("\"version\":1"), 11, "\"version\":2");
  CHECK_THROWS_AS(trace_from_csv(other), VersionError);
  CHECK_THROWS_AS(trace_from_csv(good.substr(0, good.size() - 3)), ParseError);
  CHECK_THROWS_AS(trace_from_csv("round,x\n0,1\n"), SchemaError);
  std::string bad = good;
  bad.insert(bad.size(), "4,1,x,9\n");
  try {
    trace_from_csv(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
  }
}

}
