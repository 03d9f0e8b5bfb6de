#pragma once

// Deterministic randomness. Every random draw in the library flows from a
// single user seed through named sub-streams, so any component can be
// re-simulated in isolation (e.g. the noise a given robot sees at a given
// timestep) without replaying the rest of the run.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace madp {

// splitmix64: cheap to construct per key, passes the usual test batteries.
struct Rng {
  std::uint64_t state = 0;

  Rng() = default;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0,1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // inclusive bounds; modulo bias is ~range/2^64, irrelevant here
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Box-Muller; the spare keeps paired draws cheap and stays deterministic
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  double spare_ = 0.0;
  bool have_spare_ = false;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Key = hash(seed, stream name, up to three indices). Distinct names or
// indices give statistically independent streams.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ detail::mix64(seed);
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ull;  // FNV-1a
  }
  h = detail::mix64(h + 0x9e3779b97f4a7c15ull * (a + 1));
  h = detail::mix64(h + 0x9e3779b97f4a7c15ull * (b + 2));
  h = detail::mix64(h + 0x9e3779b97f4a7c15ull * (c + 3));
  return h;
}

inline Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
                  std::uint64_t b = 0, std::uint64_t c = 0) {
  return Rng(stream_key(seed, name, a, b, c));
}

}  // namespace madp
