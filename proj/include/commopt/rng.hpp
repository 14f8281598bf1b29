#pragma once

#include <cstdint>
#include <limits>

namespace commopt {

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based generator: the n-th output is a bijective mix of
// (key, n), so a stream is fully determined by the tuple used to key it and
// independent of how other streams were consumed. Satisfies
// UniformRandomBitGenerator, so the <random> distributions work on top.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : key_(detail::splitmix64(seed)) {}

  // Stream keyed by (seed, a, b, c); used as (seed, client, round, purpose).
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t k = detail::splitmix64(seed);
    k = detail::splitmix64(k ^ (a + 0x632be59bd9b4e019ULL));
    k = detail::splitmix64(k ^ (b + 0x8cb92ba72f3d8dd7ULL));
    k = detail::splitmix64(k ^ (c + 0xd6e8feb86659fd93ULL));
    return Rng(k, tag{});
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    return detail::splitmix64(key_ ^ detail::splitmix64(counter_++));
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t v;
    do {
      v = (*this)();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  struct tag {};
  Rng(std::uint64_t key, tag) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Well-known stream purposes, so call sites never collide by accident.
namespace stream_tag {
inline constexpr std::uint64_t compressor = 1;
inline constexpr std::uint64_t joint_draw = 2;
inline constexpr std::uint64_t coin = 3;
inline constexpr std::uint64_t sample = 4;
inline constexpr std::uint64_t cohort = 5;
inline constexpr std::uint64_t partition = 6;
inline constexpr std::uint64_t init = 7;
}  // namespace stream_tag

}  // namespace commopt
