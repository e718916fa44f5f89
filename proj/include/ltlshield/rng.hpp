#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace ltlshield {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named substream of a master seed, optionally indexed by up to
/// two integers (e.g. a (state, action) pair or an episode number).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t i = 0,
                                 std::uint64_t j = 0)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = splitmix64(master ^ h);
  s = splitmix64(s ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  s = splitmix64(s ^ splitmix64(j + 0x85157af5ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t i = 0, std::uint64_t j = 0)
{
  return Rng(derive_seed(master, stream, i, j));
}

// The distributions below are written out by hand because libstdc++'s
// std::uniform_real_distribution / std::normal_distribution are not
// guaranteed to produce the same sequence across standard libraries.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi)
{
  return lo + (hi - lo) * uniform01(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive)
{
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

/// Standard normal via Box-Muller.
inline double standard_normal(Rng& rng)
{
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Zero-mean Gaussian with standard deviation `sigma`, truncated to +-3 sigma
/// by rejection.
inline double truncated_normal(Rng& rng, double sigma)
{
  if (sigma <= 0.0) return 0.0;
  for (;;) {
    const double z = standard_normal(rng);
    if (std::abs(z) <= 3.0) return sigma * z;
  }
}

}  // namespace ltlshield
