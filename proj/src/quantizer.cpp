#include "fedpaq/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "fedpaq/error.hpp"

namespace fedpaq {
namespace {

class BitWriter {
 public:
  void write(std::uint64_t value, unsigned bits) {
    for (unsigned i = bits; i-- > 0;) {
      push((value >> i) & 1U);
    }
  }

  std::vector<std::uint8_t> finish() && { return std::move(bytes_); }

 private:
  void push(std::uint64_t bit) {
    if (used_ == 0) {
      bytes_.push_back(0);
    }
    bytes_.back() |= static_cast<std::uint8_t>(bit << (7 - used_));
    used_ = (used_ + 1) % 8;
  }

  std::vector<std::uint8_t> bytes_;
  unsigned used_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t read(unsigned bits) {
    if (position_ + bits > bytes_.size() * 8) {
      throw FormatError("quantized vector: buffer truncated");
    }
    std::uint64_t value = 0;
    for (unsigned i = 0; i < bits; ++i, ++position_) {
      const auto bit = (bytes_[position_ / 8] >> (7 - position_ % 8)) & 1U;
      value = (value << 1) | bit;
    }
    return value;
  }

  std::size_t position() const noexcept { return position_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t position_ = 0;
};

void check_float_bits(unsigned float_bits) {
  if (float_bits != 32 && float_bits != 64) {
    throw InvalidInput("float_bits must be 32 or 64, got " + std::to_string(float_bits));
  }
}

double narrow(double value, unsigned float_bits) {
  return float_bits == 32 ? static_cast<double>(static_cast<float>(value)) : value;
}

std::uint64_t float_to_bits(double value, unsigned float_bits) {
  if (float_bits == 32) {
    return std::bit_cast<std::uint32_t>(static_cast<float>(value));
  }
  return std::bit_cast<std::uint64_t>(value);
}

double bits_to_float(std::uint64_t bits, unsigned float_bits) {
  if (float_bits == 32) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
  }
  return std::bit_cast<double>(bits);
}

// Overflow-safe Euclidean norm.
double l2_norm(std::span<const double> x) {
  double scale = 0.0;
  for (double v : x) {
    scale = std::max(scale, std::abs(v));
  }
  if (scale == 0.0) {
    return 0.0;
  }
  double sum = 0.0;
  for (double v : x) {
    const double t = v / scale;
    sum += t * t;
  }
  return scale * std::sqrt(sum);
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

QuantizedVector quantize(std::span<const double> x, std::uint32_t s, Stream& rng) {
  if (x.empty()) {
    throw InvalidInput("quantize: empty vector");
  }
  if (s == 0) {
    throw InvalidInput("quantize: level count must be positive");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw InvalidInput("quantize: coordinate " + std::to_string(i) + " is not finite");
    }
  }

  QuantizedVector q;
  q.level_count = s;
  q.signs.assign(x.size(), 0);
  q.levels.assign(x.size(), 0);
  q.norm = l2_norm(x);
  if (q.norm == 0.0) {
    return q;
  }

  const double levels = static_cast<double>(s);
  for (std::size_t i = 0; i < x.size(); ++i) {
    q.signs[i] = static_cast<std::int8_t>((x[i] > 0.0) - (x[i] < 0.0));
    const double scaled = std::min(std::abs(x[i]) / q.norm, 1.0) * levels;
    // A ratio of exactly 1 falls outside every [l/s, (l+1)/s); it is rounded
    // from l = s - 1 with probability 1.
    const double lower = std::min(std::floor(scaled), levels - 1.0);
    const double p_up = scaled - lower;
    const bool up = rng.uniform() < p_up;
    q.levels[i] = static_cast<std::uint32_t>(lower) + (up ? 1U : 0U);
  }
  return q;
}

std::vector<double> dequantize(const QuantizedVector& q) {
  std::vector<double> out(q.dim());
  const double s = static_cast<double>(q.level_count);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = q.norm * q.signs[i] * static_cast<double>(q.levels[i]) / s;
  }
  return out;
}

void validate(const QuantizedVector& q) {
  if (q.level_count == 0) {
    throw InvalidInput("quantized vector: level_count must be positive");
  }
  if (q.dim() == 0 || q.signs.size() != q.levels.size()) {
    throw InvalidInput("quantized vector: signs and levels must be nonempty and of equal length");
  }
  if (!(q.norm >= 0.0) || !std::isfinite(q.norm)) {
    throw InvalidInput("quantized vector: norm must be finite and nonnegative");
  }
  for (std::size_t i = 0; i < q.dim(); ++i) {
    if (q.levels[i] > q.level_count) {
      throw InvalidInput("quantized vector: level " + std::to_string(q.levels[i]) + " exceeds s = " +
                         std::to_string(q.level_count));
    }
    if (q.signs[i] < -1 || q.signs[i] > 1) {
      throw InvalidInput("quantized vector: sign out of {-1, 0, 1}");
    }
    if (q.norm == 0.0 && q.levels[i] != 0) {
      throw InvalidInput("quantized vector: zero norm with a nonzero level");
    }
    if (q.signs[i] == 0 && q.levels[i] != 0) {
      throw InvalidInput("quantized vector: zero sign with a nonzero level");
    }
  }
}

QuantizedVector canonical(const QuantizedVector& q, unsigned float_bits) {
  check_float_bits(float_bits);
  validate(q);
  QuantizedVector c = q;
  c.norm = narrow(q.norm, float_bits);
  if (!std::isfinite(c.norm)) {
    throw InvalidInput("quantized vector: norm does not fit in " + std::to_string(float_bits) + " bits");
  }
  for (std::size_t i = 0; i < c.dim(); ++i) {
    if (c.norm == 0.0) {
      c.levels[i] = 0;
    }
    if (c.levels[i] == 0) {
      c.signs[i] = 0;
    }
  }
  return c;
}

unsigned level_field_bits(std::uint32_t s) noexcept { return static_cast<unsigned>(std::bit_width(s)); }

std::uint64_t payload_bits(std::size_t p, std::uint32_t s, unsigned float_bits) noexcept {
  return float_bits + static_cast<std::uint64_t>(p) * (1 + level_field_bits(s));
}

std::uint64_t identity_bits(std::size_t p, unsigned float_bits) noexcept {
  return static_cast<std::uint64_t>(p) * float_bits;
}

std::uint64_t message_bits(const QuantizerMode& mode, std::size_t p, unsigned float_bits) noexcept {
  if (const auto* lp = std::get_if<LowPrecision>(&mode)) {
    return payload_bits(p, lp->levels, float_bits);
  }
  return identity_bits(p, float_bits);
}

std::vector<std::uint8_t> encode(const QuantizedVector& q, unsigned float_bits) {
  const QuantizedVector c = canonical(q, float_bits);
  if (c.dim() > UINT32_MAX) {
    throw InvalidInput("quantized vector: dimension does not fit in 32 bits");
  }
  BitWriter writer;
  writer.write(c.dim(), 32);
  writer.write(c.level_count, 32);
  writer.write(float_to_bits(c.norm, float_bits), float_bits);
  for (std::int8_t sign : c.signs) {
    writer.write(sign < 0 ? 1U : 0U, 1);
  }
  const unsigned width = level_field_bits(c.level_count);
  for (std::uint32_t level : c.levels) {
    writer.write(level, width);
  }
  return std::move(writer).finish();
}

QuantizedVector decode(std::span<const std::uint8_t> bytes, unsigned float_bits) {
  check_float_bits(float_bits);
  if (bytes.size() < kHeaderBits / 8) {
    throw FormatError("quantized vector: buffer shorter than the header");
  }
  const std::uint32_t dim = read_u32(bytes, 0);
  const std::uint32_t s = read_u32(bytes, 4);
  if (dim == 0 || s == 0) {
    throw FormatError("quantized vector: header has zero dim or zero level count");
  }
  const std::uint64_t total_bits = kHeaderBits + payload_bits(dim, s, float_bits);
  const std::uint64_t expected_bytes = (total_bits + 7) / 8;
  if (bytes.size() != expected_bytes) {
    throw FormatError("quantized vector: expected " + std::to_string(expected_bytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }

  BitReader reader(bytes);
  reader.read(static_cast<unsigned>(kHeaderBits));
  QuantizedVector q;
  q.level_count = s;
  q.norm = bits_to_float(reader.read(float_bits), float_bits);
  if (!std::isfinite(q.norm) || std::signbit(q.norm)) {
    throw FormatError("quantized vector: norm is negative or not finite");
  }
  q.signs.resize(dim);
  for (auto& sign : q.signs) {
    sign = reader.read(1) != 0 ? -1 : 1;
  }
  q.levels.resize(dim);
  const unsigned width = level_field_bits(s);
  for (std::uint32_t i = 0; i < dim; ++i) {
    const auto level = static_cast<std::uint32_t>(reader.read(width));
    if (level > s) {
      throw FormatError("quantized vector: level exceeds level count");
    }
    if (level == 0) {
      if (q.signs[i] < 0) {
        throw FormatError("quantized vector: sign bit set on a zero level");
      }
      q.signs[i] = 0;
    } else if (q.norm == 0.0) {
      throw FormatError("quantized vector: nonzero level with zero norm");
    }
    q.levels[i] = level;
  }
  const auto padding = static_cast<unsigned>(expected_bytes * 8 - reader.position());
  if (padding > 0 && reader.read(padding) != 0) {
    throw FormatError("quantized vector: nonzero padding bits");
  }
  return q;
}

std::vector<std::uint8_t> encode_identity(std::span<const double> x, unsigned float_bits) {
  check_float_bits(float_bits);
  BitWriter writer;
  for (double v : x) {
    writer.write(float_to_bits(v, float_bits), float_bits);
  }
  return std::move(writer).finish();
}

std::vector<double> decode_identity(std::span<const std::uint8_t> bytes, std::size_t p, unsigned float_bits) {
  check_float_bits(float_bits);
  if (bytes.size() * 8 != identity_bits(p, float_bits)) {
    throw FormatError("identity vector: expected " + std::to_string(identity_bits(p, float_bits) / 8) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  BitReader reader(bytes);
  std::vector<double> out(p);
  for (auto& v : out) {
    v = bits_to_float(reader.read(float_bits), float_bits);
  }
  return out;
}

double default_variance_parameter(std::size_t p, std::uint32_t s) {
  if (p == 0 || s == 0) {
    throw InvalidInput("variance parameter: p and s must be positive");
  }
  const double dp = static_cast<double>(p);
  const double ds = static_cast<double>(s);
  return std::min(dp / (ds * ds), std::sqrt(dp) / ds);
}

double variance_parameter(const QuantizerMode& mode, std::size_t p) {
  if (const auto* lp = std::get_if<LowPrecision>(&mode)) {
    return default_variance_parameter(p, lp->levels);
  }
  return 0.0;
}

std::vector<double> apply(const QuantizerMode& mode, std::span<const double> x, Stream& rng) {
  if (const auto* lp = std::get_if<LowPrecision>(&mode)) {
    return dequantize(quantize(x, lp->levels, rng));
  }
  return {x.begin(), x.end()};
}

double empirical_variance_ratio(std::span<const double> x, const QuantizerMode& mode, std::size_t trials,
                                Stream& rng) {
  const double norm = l2_norm(x);
  if (norm == 0.0) {
    throw InvalidInput("variance ratio: x must be nonzero");
  }
  if (trials == 0) {
    throw InvalidInput("variance ratio: trials must be positive");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto y = apply(mode, x, rng);
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      err += (y[i] - x[i]) * (y[i] - x[i]);
    }
    total += err;
  }
  return total / static_cast<double>(trials) / (norm * norm);
}

double estimate_variance_ratio(const QuantizerMode& mode, std::size_t p, std::size_t trials, Stream& rng,
                               std::size_t directions) {
  if (trials < 10000) {
    throw InvalidInput("estimate_variance_ratio: trials must be at least 10^4");
  }
  if (p == 0 || directions == 0) {
    throw InvalidInput("estimate_variance_ratio: p and directions must be positive");
  }
  if (std::holds_alternative<Identity>(mode)) {
    return 0.0;
  }
  double worst = 0.0;
  std::vector<double> x(p);
  for (std::size_t d = 0; d < directions; ++d) {
    double norm = 0.0;
    do {
      for (auto& v : x) {
        v = rng.normal();
      }
      norm = l2_norm(x);
    } while (norm == 0.0);
    for (auto& v : x) {
      v /= norm;
    }
    worst = std::max(worst, empirical_variance_ratio(x, mode, trials, rng));
  }
  return worst;
}

}  // namespace fedpaq
