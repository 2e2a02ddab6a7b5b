#pragma once

// Low-precision stochastic quantizer, its fixed-width wire format, and
// empirical checks of the unbiasedness / variance assumption.
//
// A vector x in R^p is sent as (||x||, sign(x_i), level_i) where level_i is a
// randomized rounding of s * |x_i| / ||x|| to one of the two neighbouring
// integers, so that E[norm * sign_i * level_i / s] = x_i.

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "fedpaq/rng.hpp"

namespace fedpaq {

struct QuantizedVector {
  double norm = 0.0;
  std::vector<std::int8_t> signs;     // each in {-1, 0, +1}
  std::vector<std::uint32_t> levels;  // each in [0, level_count]
  std::uint32_t level_count = 1;

  std::size_t dim() const noexcept { return levels.size(); }

  friend bool operator==(const QuantizedVector&, const QuantizedVector&) = default;
};

/// s-level quantizer from the low-precision family.
struct LowPrecision {
  std::uint32_t levels = 1;
};

/// No quantization; variance parameter q = 0.
struct Identity {};

using QuantizerMode = std::variant<Identity, LowPrecision>;

inline constexpr unsigned kDefaultFloatBits = 32;
inline constexpr std::uint64_t kHeaderBits = 64;

/// Quantizes x with s levels. Throws InvalidInput on empty x, s == 0 or a
/// non-finite coordinate.
QuantizedVector quantize(std::span<const double> x, std::uint32_t s, Stream& rng);

/// norm * sign_i * level_i / s, coordinate-wise.
std::vector<double> dequantize(const QuantizedVector& q);

/// Throws InvalidInput if q breaks a QuantizedVector invariant.
void validate(const QuantizedVector& q);

/// Form in which q travels on the wire: norm narrowed to float_bits and the
/// sign of every zero-level coordinate cleared. Dequantizes to the same
/// vector up to the narrowing of the norm.
QuantizedVector canonical(const QuantizedVector& q, unsigned float_bits = kDefaultFloatBits);

/// Bits per level field, ceil(log2(s + 1)).
unsigned level_field_bits(std::uint32_t s) noexcept;

/// F + p * (1 + ceil(log2(s + 1))): norm, sign bits and level fields.
std::uint64_t payload_bits(std::size_t p, std::uint32_t s, unsigned float_bits = kDefaultFloatBits) noexcept;

/// p * F, the cost of an unquantized vector.
std::uint64_t identity_bits(std::size_t p, unsigned float_bits = kDefaultFloatBits) noexcept;

/// Uplink bits of one message under the given mode (header excluded).
std::uint64_t message_bits(const QuantizerMode& mode, std::size_t p,
                           unsigned float_bits = kDefaultFloatBits) noexcept;

/// Wire layout, big-endian and MSB-first:
///   dim:u32 | s:u32 | norm:F bits | p sign bits (1 = negative) |
///   p levels of ceil(log2(s+1)) bits | zero padding to a byte boundary.
/// float_bits must be 32 or 64.
std::vector<std::uint8_t> encode(const QuantizedVector& q, unsigned float_bits = kDefaultFloatBits);

/// Inverse of encode. Throws FormatError on truncated, oversized or
/// inconsistent buffers. Always returns a canonical vector.
QuantizedVector decode(std::span<const std::uint8_t> bytes, unsigned float_bits = kDefaultFloatBits);

/// p consecutive F-bit IEEE values, big-endian. F = 32 narrows each value.
std::vector<std::uint8_t> encode_identity(std::span<const double> x, unsigned float_bits = kDefaultFloatBits);
std::vector<double> decode_identity(std::span<const std::uint8_t> bytes, std::size_t p,
                                    unsigned float_bits = kDefaultFloatBits);

/// min(p / s^2, sqrt(p) / s), the variance parameter used for LowPrecision.
double default_variance_parameter(std::size_t p, std::uint32_t s);

/// q for the mode: 0 for Identity, the default formula otherwise.
double variance_parameter(const QuantizerMode& mode, std::size_t p);

/// Applies the mode to x and returns the reconstruction seen by a receiver.
std::vector<double> apply(const QuantizerMode& mode, std::span<const double> x, Stream& rng);

/// Empirical E||Q(x) - x||^2 / ||x||^2 for one fixed nonzero x.
double empirical_variance_ratio(std::span<const double> x, const QuantizerMode& mode, std::size_t trials,
                                Stream& rng);

/// Maximum of empirical_variance_ratio over `directions` random unit vectors
/// of dimension p. trials must be at least 10^4.
double estimate_variance_ratio(const QuantizerMode& mode, std::size_t p, std::size_t trials, Stream& rng,
                               std::size_t directions = 8);

}  // namespace fedpaq
