// Text encodings shared by the CSV and JSON reports.
#pragma once

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <optional>
#include <string>

#include "bfpcnn/fxgemm.hpp"

namespace bfpcnn::cli {

/// Shortest decimal that round-trips; non-finite values as "inf", "-inf", "nan".
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::string format_real(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

inline nlohmann::json real_json(double v) {
  if (!std::isfinite(v)) return format_real(v);
  return v;
}

/// Accumulators as JSON integers when they fit 64 bits, decimal strings otherwise.
inline nlohmann::json accumulator_json(Accumulator v) {
  if (v >= INT64_MIN && v <= INT64_MAX) return static_cast<std::int64_t>(v);
  return to_string(v);
}

}  // namespace bfpcnn::cli
