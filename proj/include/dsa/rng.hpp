#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dsa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for replicate/task `index`; independent of scheduling.
inline std::uint64_t split_seed(std::uint64_t root, std::uint64_t index) {
  return splitmix64(splitmix64(root) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::uint64_t index) { return Rng(split_seed(root, index)); }

// Box-Muller on the raw engine output, so draws do not depend on the
// standard library's distribution implementation.
class NormalSampler {
 public:
  double operator()(Rng& g) {
    if (has_) {
      has_ = false;
      return spare_;
    }
    double u1 = uniform(g), u2 = uniform(g);
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(6.283185307179586 * u2);
    has_ = true;
    return r * std::cos(6.283185307179586 * u2);
  }
  static double uniform(Rng& g) {
    // (0,1), 53 bits
    return (static_cast<double>(g() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

 private:
  double spare_ = 0.0;
  bool has_ = false;
};

inline double uniform01(Rng& g) { return NormalSampler::uniform(g); }

inline std::size_t uniform_index(Rng& g, std::size_t n) {
  return static_cast<std::size_t>(uniform01(g) * static_cast<double>(n)) % n;
}

template <class It>
void shuffle(It first, It last, Rng& g) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(g, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace dsa
