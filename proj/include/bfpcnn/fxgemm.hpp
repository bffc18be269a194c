/**
 * Exact fixed-point GEMM over block mantissas, the bit-width plan that keeps
 * it rounding- and overflow-free, and im2col lowering of convolutions.
 */
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bfpcnn/partition.hpp"
#include "bfpcnn/tensor.hpp"

namespace bfpcnn {

using Accumulator = __int128;

inline std::string to_string(Accumulator v) {
  if (v == 0) return "0";
  const bool neg = v < 0;
  unsigned __int128 u = neg ? -static_cast<unsigned __int128>(v) : static_cast<unsigned __int128>(v);
  std::string s;
  while (u > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  if (neg) s.push_back('-');
  return {s.rbegin(), s.rend()};
}

inline Accumulator abs_value(Accumulator v) { return v < 0 ? -v : v; }

/// Hardware widths for an exact K-term dot product of L_W x L_I mantissas.
/// All widths include the sign bit.
struct BitWidthPlan {
  int multiplier_bits = 0;     // L_W + L_I + 2
  int accumulator_bits = 0;    // multiplier_bits + carry_margin
  int carry_margin = 0;        // floor(log2 K)
  std::int64_t reduction_length = 0;
  int tight_product_bits = 0;  // L_W + L_I + 1, smallest signed width holding any product
};

inline BitWidthPlan bit_width_plan(MantissaWidth lw, MantissaWidth li, std::int64_t K) {
  if (K < 1) throw std::domain_error("reduction length K must be >= 1");
  BitWidthPlan p;
  p.carry_margin = static_cast<int>(std::bit_width(static_cast<std::uint64_t>(K))) - 1;
  p.multiplier_bits = lw.bits() + li.bits() + 2;
  p.accumulator_bits = p.multiplier_bits + p.carry_margin;
  p.reduction_length = K;
  p.tight_product_bits = lw.bits() + li.bits() + 1;
  return p;
}

/// Thrown when a product or partial sum does not fit the plan's signed width.
class PlanViolation : public std::runtime_error {
 public:
  enum class Stage { Multiplier, Accumulator };

  PlanViolation(Stage stage, std::size_t row, std::size_t col, Accumulator value, int bits)
      : std::runtime_error(describe(stage, row, col, value, bits)),
        stage_(stage), row_(row), col_(col), value_(value), bits_(bits) {}

  Stage stage() const noexcept { return stage_; }
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }
  Accumulator value() const noexcept { return value_; }
  int bits() const noexcept { return bits_; }

 private:
  static std::string describe(Stage stage, std::size_t row, std::size_t col, Accumulator value,
                              int bits) {
    return std::string(stage == Stage::Multiplier ? "multiplier" : "accumulator") +
           " overflow at entry (" + std::to_string(row) + ", " + std::to_string(col) +
           "): value " + to_string(value) + " does not fit " + std::to_string(bits) +
           " signed bits";
  }

  Stage stage_;
  std::size_t row_, col_;
  Accumulator value_;
  int bits_;
};

struct ProductMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Accumulator> accumulators;  // row-major M x N
  std::vector<int> scale_exponents;       // row-major M x N
  Accumulator max_abs_accumulator = 0;    // largest partial-sum magnitude observed
  BitWidthPlan plan;

  Accumulator accumulator(std::size_t r, std::size_t c) const { return accumulators[r * cols + c]; }
  int scale_exponent(std::size_t r, std::size_t c) const { return scale_exponents[r * cols + c]; }
};

namespace detail {

inline bool fits_signed(Accumulator v, int bits) {
  if (bits >= 128) return true;
  if (bits <= 1) return v == 0 || v == -1;
  const Accumulator bound = Accumulator{1} << (bits - 1);
  return v < bound && v >= -bound;
}

struct GemmChunkResult {
  Accumulator max_abs = 0;
  std::optional<PlanViolation> violation;
};

}  // namespace detail

/// M'_O = M'_W M'_I with every product and partial sum checked against the plan.
/// Rows are split across `threads` workers; results do not depend on the split.
inline ProductMatrix bfp_gemm(const BfpMatrix& w, const BfpMatrix& in, const BitWidthPlan& plan,
                              unsigned threads = 1) {
  if (w.cols != in.rows) throw std::domain_error("bfp_gemm: inner dimensions differ");
  const std::size_t M = w.rows, K = w.cols, N = in.cols;
  if (plan.reduction_length != static_cast<std::int64_t>(K)) {
    throw std::domain_error("bfp_gemm: plan reduction length does not match K");
  }
  // Worst-case magnitude must stay inside the 128-bit exact integer type.
  const int worst_bits = w.width.bits() + in.width.bits() +
                         static_cast<int>(std::bit_width(static_cast<std::uint64_t>(K)));
  if (worst_bits > 126) throw std::domain_error("bfp_gemm: operands exceed exact integer range");

  const Matrix<std::int64_t> wq = w.mantissa_matrix();
  Matrix<std::int64_t> iq_t(N, K);  // transposed for contiguous columns
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t n = 0; n < N; ++n) iq_t(n, k) = in.mantissa(k, n);

  ProductMatrix out;
  out.rows = M;
  out.cols = N;
  out.plan = plan;
  out.accumulators.assign(M * N, 0);
  out.scale_exponents.assign(M * N, 0);

  const int lsb_shift = (w.width.bits() - 1) + (in.width.bits() - 1);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n)
      out.scale_exponents[m * N + n] = w.exponent(m, 0) + in.exponent(0, n) - lsb_shift;

  auto run_rows = [&](std::size_t begin, std::size_t end, detail::GemmChunkResult& res) {
    for (std::size_t m = begin; m < end; ++m) {
      const auto wrow = wq.row(m);
      for (std::size_t n = 0; n < N; ++n) {
        const auto icol = iq_t.row(n);
        Accumulator acc = 0;
        for (std::size_t k = 0; k < K; ++k) {
          const Accumulator prod = static_cast<Accumulator>(wrow[k]) * icol[k];
          if (!detail::fits_signed(prod, plan.multiplier_bits)) {
            res.violation.emplace(PlanViolation::Stage::Multiplier, m, n, prod,
                                  plan.multiplier_bits);
            return;
          }
          acc += prod;
          if (!detail::fits_signed(acc, plan.accumulator_bits)) {
            res.violation.emplace(PlanViolation::Stage::Accumulator, m, n, acc,
                                  plan.accumulator_bits);
            return;
          }
          res.max_abs = std::max(res.max_abs, abs_value(acc));
        }
        out.accumulators[m * N + n] = acc;
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(M, 1));
  std::vector<detail::GemmChunkResult> results(workers);
  if (workers == 1) {
    run_rows(0, M, results[0]);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (M + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
      const std::size_t begin = std::min(M, t * chunk), end = std::min(M, begin + chunk);
      pool.emplace_back([&, t, begin, end] { run_rows(begin, end, results[t]); });
    }
  }

  // Chunks are in row order, so the first reported violation is the lowest row.
  for (const auto& r : results) {
    if (r.violation) throw *r.violation;
    out.max_abs_accumulator = std::max(out.max_abs_accumulator, r.max_abs);
  }
  return out;
}

/// BFP2FP of a product: accumulator * 2^scale.
inline RealMatrix dequantize(const ProductMatrix& p) {
  RealMatrix out(p.rows, p.cols);
  for (std::size_t i = 0; i < p.accumulators.size(); ++i) {
    out.values()[i] = std::ldexp(static_cast<double>(p.accumulators[i]), p.scale_exponents[i]);
  }
  return out;
}

struct ConvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// (in + 2 pad - k) / stride + 1, which must be a positive integer.
inline std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride,
                                    std::size_t pad) {
  if (stride == 0 || k == 0) throw std::domain_error("kernel and stride must be positive");
  const std::size_t padded = in + 2 * pad;
  if (padded < k) throw std::domain_error("kernel larger than padded input");
  if ((padded - k) % stride != 0) {
    throw std::domain_error("convolution output size is not integral");
  }
  return (padded - k) / stride + 1;
}

/// Lowers a convolution input to a (C*kh*kw) x (out_h*out_w) matrix. Row index
/// is (c*kh + ky)*kw + kx; column index is oy*out_w + ox. Padding reads zero.
inline RealMatrix im2col(const Tensor3& input, const ConvGeometry& g) {
  const std::size_t out_h = conv_output_size(input.height(), g.kernel_h, g.stride, g.pad);
  const std::size_t out_w = conv_output_size(input.width(), g.kernel_w, g.stride, g.pad);
  const auto H = static_cast<std::ptrdiff_t>(input.height());
  const auto W = static_cast<std::ptrdiff_t>(input.width());
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);

  RealMatrix cols(input.channels() * g.kernel_h * g.kernel_w, out_h * out_w);
  for (std::size_t c = 0; c < input.channels(); ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t r = (c * g.kernel_h + ky) * g.kernel_w + kx;
        for (std::size_t oy = 0; oy < out_h; ++oy)
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            const bool inside = y >= 0 && y < H && x >= 0 && x < W;
            cols(r, oy * out_w + ox) =
                inside ? input.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x))
                       : 0.0;
          }
      }
  return cols;
}

}  // namespace bfpcnn
