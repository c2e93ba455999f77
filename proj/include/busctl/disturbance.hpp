#pragma once

// Seeded travel-delay and demand-rate perturbations. Every sample is a pure
// function of (seed, coordinates), so parallel workers never share generator
// state and any single draw can be replayed.

#include <algorithm>
#include <cstdint>
#include <random>

#include "busctl/errors.hpp"

namespace busctl {

struct TruncatedNormalSpec {
  double mean = 10.0;
  double stddev = 10.0;
  double lower = -5.0;
  double upper = 30.0;

  void validate() const {
    if (!(lower < upper)) throw ConfigError("truncated normal: lower must be < upper");
    if (!(stddev > 0.0)) throw ConfigError("truncated normal: stddev must be positive");
  }
};

struct UniformSpec {
  double lower = -0.02;
  double upper = 0.02;

  void validate() const {
    if (!(lower <= upper)) throw ConfigError("uniform: lower must be <= upper");
  }
};

enum class NoiseChannel : std::uint32_t { kTravelDelay = 1, kDemand = 2, kPolicy = 3, kShuffle = 4 };

/// Counter-based stream address.
struct NoiseStream {
  std::uint64_t seed = 0;
  std::uint32_t worker = 0;
  std::uint32_t episode = 0;
  std::uint32_t bus = 0;
  std::uint32_t position = 0;
  NoiseChannel channel = NoiseChannel::kTravelDelay;
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

constexpr std::uint64_t stream_key(const NoiseStream& s) {
  std::uint64_t h = detail::splitmix64(s.seed);
  h = detail::splitmix64(h ^ (static_cast<std::uint64_t>(s.worker) << 32 | s.episode));
  h = detail::splitmix64(h ^ (static_cast<std::uint64_t>(s.bus) << 32 | s.position));
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(s.channel));
  return h;
}

inline std::mt19937_64 make_engine(const NoiseStream& stream) { return std::mt19937_64(stream_key(stream)); }

/// Rejection sampling: redraw from N(mean, stddev) until inside [lower, upper].
inline double sample_travel_delay(const TruncatedNormalSpec& spec, const NoiseStream& stream) {
  spec.validate();
  auto rng = make_engine(stream);
  std::normal_distribution<double> normal(spec.mean, spec.stddev);
  constexpr int kMaxDraws = 1'000'000;
  for (int i = 0; i < kMaxDraws; ++i) {
    const double x = normal(rng);
    if (x >= spec.lower && x <= spec.upper) return x;
  }
  throw NumericalFault("sample_travel_delay: rejection sampling did not terminate");
}

inline double sample_demand_perturbation(const UniformSpec& spec, const NoiseStream& stream) {
  spec.validate();
  if (spec.lower == spec.upper) return spec.lower;
  auto rng = make_engine(stream);
  std::uniform_real_distribution<double> uniform(spec.lower, spec.upper);
  return std::clamp(uniform(rng), spec.lower, spec.upper);
}

/// beta~ = beta + delta, floored at zero (dwell time is never negative).
constexpr double effective_demand_rate(double nominal, double perturbation) {
  return std::max(0.0, nominal + perturbation);
}

}  // namespace busctl
