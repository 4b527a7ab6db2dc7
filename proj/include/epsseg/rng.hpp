#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

#include "epsseg/tensor.hpp"

namespace epsseg {

/// splitmix64 step, used to derive well-separated seeds for sub-streams.
inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t s = 0x6a09e667f3bcc909ULL;
  for (uint64_t p : parts) {
    s ^= splitmix64(p);
    (void)splitmix64(s);
  }
  return s;
}

/// Deterministic RNG. All distributions are implemented here (not via
/// std::*_distribution) so sequences are identical across standard libraries
/// and serialization captures the complete state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform in (0,1].
  double uniform_pos() { return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(gen_() % static_cast<uint64_t>(n));
  }

  /// Standard normal via Box-Muller (cosine branch only, no cached state).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Gumbel(0,1).
  double gumbel() { return -std::log(-std::log(uniform_pos())); }

  void fill_normal(Tensor& t, double mean = 0.0, double std = 1.0) {
    double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = mean + std * normal();
  }

  void fill_uniform(Tensor& t, double lo = 0.0, double hi = 1.0) {
    double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = lo + (hi - lo) * uniform();
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = gen_() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace epsseg
