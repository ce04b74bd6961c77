#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace milcount {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Every random draw in the toolkit comes from a stream named by purpose
// ("init", "dropout", "shuffle", "split", "synthgen") and derived from the
// run seed plus optional indices. Streams are independent of one another
// and of scheduling, so parallel work stays reproducible.
//
// mt19937_64 is used because its output sequence is fixed by the standard;
// distributions are implemented here for the same reason.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream,
      std::initializer_list<std::uint64_t> indices = {})
      : engine_(derive(seed, stream, indices)) {}

  static std::uint64_t derive(std::uint64_t seed, std::string_view stream,
                              std::initializer_list<std::uint64_t> indices) {
    std::uint64_t h = detail::splitmix64(seed ^ detail::fnv1a(stream));
    for (std::uint64_t i : indices) h = detail::splitmix64(h ^ detail::splitmix64(i + 1));
    return h;
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform integer in [lo, hi].
  long long between(long long lo, long long hi) {
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace milcount
