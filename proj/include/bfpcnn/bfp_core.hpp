/**
 * Block floating point formatting of a single block of numbers.
 *
 * A block shares one exponent (the largest element exponent); every element
 * keeps a signed integer mantissa aligned to it:
 *
 *     x_i ~= q_i * 2^(eps - (L - 1)),   |q_i| <= 2^L - 1
 *
 * where L is the mantissa magnitude width (sign excluded). eps is the largest
 * element exponent, or one more when rounding that element carries out of L
 * bits.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfpcnn {

/// Mantissa magnitude bits, sign excluded: one integer bit plus
/// (bits - 1) fraction bits relative to the block exponent.
class MantissaWidth {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 52;

  constexpr explicit MantissaWidth(int bits) : bits_(bits) {
    if (bits < kMin || bits > kMax) {
      throw std::domain_error("mantissa width must be in [1, 52], got " +
                              std::to_string(bits));
    }
  }

  constexpr int bits() const noexcept { return bits_; }

  /// Largest representable mantissa magnitude.
  constexpr std::int64_t max_mantissa() const noexcept {
    return (std::int64_t{1} << bits_) - 1;
  }

  friend constexpr bool operator==(MantissaWidth, MantissaWidth) = default;

 private:
  int bits_;
};

enum class RoundingMode { Truncate, RoundHalfAwayFromZero };

/// Bit length of a stored block exponent (signed).
inline constexpr int kDefaultExponentBits = 8;

/// Exponent assigned to an all-zero block: the minimum signed exponent.
constexpr int zero_block_exponent(int exponent_bits = kDefaultExponentBits) {
  return -(1 << (exponent_bits - 1));
}

/// SNR reported when the error energy is exactly zero.
inline constexpr double kNoiselessSnrDb = std::numeric_limits<double>::infinity();

struct BfpBlock {
  std::vector<std::int64_t> mantissas;
  int block_exponent = 0;
  MantissaWidth width{1};

  std::size_t size() const noexcept { return mantissas.size(); }

  /// Exponent of one mantissa unit.
  int lsb_exponent() const noexcept { return block_exponent - (width.bits() - 1); }

  bool is_zero() const noexcept {
    return std::all_of(mantissas.begin(), mantissas.end(),
                       [](std::int64_t q) { return q == 0; });
  }

  double value(std::size_t i) const {
    return std::ldexp(static_cast<double>(mantissas[i]), lsb_exponent());
  }
};

struct QuantStats {
  double error_mean = 0.0;
  double error_variance = 0.0;
  double signal_energy = 0.0;  // mean square of the original values
  double error_energy = 0.0;   // mean square of the reconstruction error
  double snr_db = kNoiselessSnrDb;
};

/// 10*log10(signal / error); +inf when error is zero.
inline double energy_ratio_db(double signal_energy, double error_energy) {
  if (error_energy == 0.0) return kNoiselessSnrDb;
  if (signal_energy == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal_energy / error_energy);
}

/// floor(log2 |x|) for finite nonzero x, subnormals included.
template <std::floating_point T>
int extract_exponent(T x) {
  if (x == T{0} || !std::isfinite(x)) {
    throw std::domain_error("extract_exponent requires a finite nonzero value");
  }
  return std::ilogb(x);
}

/// Largest element exponent over the nonzero values;
/// std::numeric_limits<int>::min() when every value is zero.
template <std::floating_point T>
int max_exponent(std::span<const T> values) {
  int eps = std::numeric_limits<int>::min();
  for (T v : values) {
    if (!std::isfinite(v)) throw std::domain_error("block contains a non-finite value");
    if (v != T{0}) eps = std::max(eps, extract_exponent(v));
  }
  return eps;
}

/// FP2BFP: align every value to the block's largest exponent (Truncate
/// shifts out low bits toward zero, RoundHalfAwayFromZero rounds them off).
template <std::floating_point T>
BfpBlock block_format(std::span<const T> values, MantissaWidth width, RoundingMode mode,
                      int exponent_bits = kDefaultExponentBits) {
  if (values.empty()) throw std::domain_error("cannot block format an empty sequence");
  const int eps = max_exponent(values);

  BfpBlock block{std::vector<std::int64_t>(values.size(), 0), 0, width};
  if (eps == std::numeric_limits<int>::min()) {
    block.block_exponent = zero_block_exponent(exponent_bits);
    return block;
  }
  const auto limit = static_cast<double>(width.max_mantissa());
  auto align = [&](int exponent) {
    block.block_exponent = exponent;
    // Scaling by a power of two is exact; |scaled| < 2^L.
    const int shift = (width.bits() - 1) - exponent;
    bool carried = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double scaled = std::ldexp(static_cast<double>(values[i]), shift);
      const double q = mode == RoundingMode::Truncate ? std::trunc(scaled) : std::round(scaled);
      carried |= std::abs(q) > limit;
      block.mantissas[i] = static_cast<std::int64_t>(q);
    }
    return !carried;
  };
  // Rounding an element within half a step of 2^(eps+1) carries out of L bits;
  // renormalize one exponent up, after which every mantissa fits.
  if (!align(eps)) align(eps + 1);
  return block;
}

template <std::floating_point T>
BfpBlock block_format(const std::vector<T>& values, MantissaWidth width, RoundingMode mode,
                      int exponent_bits = kDefaultExponentBits) {
  return block_format(std::span<const T>(values), width, mode, exponent_bits);
}

/// BFP2FP: exact reconstruction q_i * 2^(eps - (L - 1)).
inline std::vector<double> to_floats(const BfpBlock& block) {
  std::vector<double> out(block.size());
  for (std::size_t i = 0; i < block.size(); ++i) out[i] = block.value(i);
  return out;
}

/// Error statistics of `reconstructed` against `original` (error = reconstructed - original).
inline QuantStats measure_quant_stats(std::span<const double> original,
                                      std::span<const double> reconstructed) {
  if (original.size() != reconstructed.size()) {
    throw std::domain_error("measure_quant_stats: length mismatch");
  }
  if (original.empty()) throw std::domain_error("measure_quant_stats: empty input");

  const auto n = static_cast<double>(original.size());
  double sum_e = 0.0, sum_e2 = 0.0, sum_x2 = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double e = reconstructed[i] - original[i];
    sum_e += e;
    sum_e2 += e * e;
    sum_x2 += original[i] * original[i];
  }
  QuantStats s;
  s.error_mean = sum_e / n;
  s.error_energy = sum_e2 / n;
  s.signal_energy = sum_x2 / n;
  double centered = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = (reconstructed[i] - original[i]) - s.error_mean;
    centered += d * d;
  }
  s.error_variance = centered / n;
  s.snr_db = energy_ratio_db(s.signal_energy, s.error_energy);
  return s;
}

inline QuantStats measure_quant_stats(std::span<const double> original, const BfpBlock& block) {
  if (original.size() != block.size()) {
    throw std::domain_error("measure_quant_stats: length mismatch");
  }
  const auto rec = to_floats(block);
  return measure_quant_stats(original, std::span<const double>(rec));
}

inline std::string to_string(RoundingMode mode) {
  return mode == RoundingMode::Truncate ? "truncate" : "half-away";
}

inline RoundingMode parse_rounding_mode(const std::string& name) {
  if (name == "truncate") return RoundingMode::Truncate;
  if (name == "half-away") return RoundingMode::RoundHalfAwayFromZero;
  throw std::invalid_argument("unknown rounding mode '" + name + "'");
}

}  // namespace bfpcnn
