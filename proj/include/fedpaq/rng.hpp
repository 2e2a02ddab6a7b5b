#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace fedpaq {

/// What a random stream is used for. Part of the derivation key so that
/// streams for different purposes never overlap.
enum class StreamPurpose : std::uint64_t {
  kParticipants = 1,
  kLocalSgd = 2,
  kQuantize = 3,
  kCompute = 4,
  kData = 5,
  kPartition = 6,
  kInit = 7,
  kSweep = 8,
  kEstimate = 9,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Folds a sequence of words into a 64-bit stream key. Order matters.
constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = mix64(seed ^ 0x6A09E667F3BCC908ULL);
  for (std::uint64_t w : words) {
    h = mix64(h ^ mix64(w + 0x9E3779B97F4A7C15ULL));
  }
  return h;
}

/// Key for the stream of one (node, round) pair.
constexpr std::uint64_t node_round_key(std::uint64_t master_seed, StreamPurpose purpose, std::uint64_t node,
                                       std::uint64_t round) noexcept {
  return derive_key(master_seed, {static_cast<std::uint64_t>(purpose), node, round});
}

/// Counter-based generator: the i-th output is a keyed hash of i, so a
/// stream is fully identified by its key and any two keys give independent
/// sequences. Satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Stream(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound) noexcept {
    // Lemire's multiply-shift with rejection of the biased low range.
    std::uint64_t x = (*this)();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        x = (*this)();
        m = static_cast<__uint128_t>(x) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via the Marsaglia polar method (no cached second value).
  double normal() noexcept {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  /// Exponential draw with the given mean, by inversion.
  double exponential(double mean) noexcept { return -mean * std::log1p(-uniform()); }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Stream node_round_stream(std::uint64_t master_seed, StreamPurpose purpose, std::uint64_t node,
                                std::uint64_t round) noexcept {
  return Stream(node_round_key(master_seed, purpose, node, round));
}

}  // namespace fedpaq
