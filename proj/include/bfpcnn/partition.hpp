/**
 * Block partitioning of the GEMM operands W (M x K) and I (K x N).
 *
 * Four schemes decide which entries share a block exponent:
 *
 *   scheme        W            I
 *   WholeWhole    whole        whole
 *   RowColumn     per row      per column
 *   RowWhole      per row      whole        (default)
 *   WholeColumn   whole        per column
 */
#pragma once

#include <boost/rational.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfpcnn/bfp_core.hpp"
#include "bfpcnn/tensor.hpp"

namespace bfpcnn {

enum class PartitionScheme { WholeWhole, RowColumn, RowWhole, WholeColumn };
enum class MatrixRole { Weight, Input };
enum class BlockAxis { Whole, PerRow, PerColumn };

inline constexpr PartitionScheme kAllSchemes[] = {
    PartitionScheme::WholeWhole, PartitionScheme::RowColumn, PartitionScheme::RowWhole,
    PartitionScheme::WholeColumn};

constexpr BlockAxis block_axis(PartitionScheme scheme, MatrixRole role) {
  const bool weight = role == MatrixRole::Weight;
  switch (scheme) {
    case PartitionScheme::WholeWhole: return BlockAxis::Whole;
    case PartitionScheme::RowColumn: return weight ? BlockAxis::PerRow : BlockAxis::PerColumn;
    case PartitionScheme::RowWhole: return weight ? BlockAxis::PerRow : BlockAxis::Whole;
    case PartitionScheme::WholeColumn: return weight ? BlockAxis::Whole : BlockAxis::PerColumn;
  }
  return BlockAxis::Whole;
}

inline std::string to_string(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::WholeWhole: return "whole-whole";
    case PartitionScheme::RowColumn: return "row-column";
    case PartitionScheme::RowWhole: return "row-whole";
    case PartitionScheme::WholeColumn: return "whole-column";
  }
  return "?";
}

inline PartitionScheme parse_scheme(const std::string& name) {
  for (auto s : kAllSchemes) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown partition scheme '" + name + "'");
}

/// A matrix split into blocks along one axis. Per-row blocks store a row in
/// column order; per-column blocks store a column in row order.
struct BfpMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  BlockAxis axis = BlockAxis::Whole;
  MantissaWidth width{1};
  std::vector<BfpBlock> blocks;

  std::size_t block_index(std::size_t r, std::size_t c) const noexcept {
    switch (axis) {
      case BlockAxis::PerRow: return r;
      case BlockAxis::PerColumn: return c;
      case BlockAxis::Whole: break;
    }
    return 0;
  }

  std::size_t element_index(std::size_t r, std::size_t c) const noexcept {
    switch (axis) {
      case BlockAxis::PerRow: return c;
      case BlockAxis::PerColumn: return r;
      case BlockAxis::Whole: break;
    }
    return r * cols + c;
  }

  std::int64_t mantissa(std::size_t r, std::size_t c) const {
    return blocks[block_index(r, c)].mantissas[element_index(r, c)];
  }

  int exponent(std::size_t r, std::size_t c) const {
    return blocks[block_index(r, c)].block_exponent;
  }

  Matrix<std::int64_t> mantissa_matrix() const {
    Matrix<std::int64_t> out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out(r, c) = mantissa(r, c);
    return out;
  }

  RealMatrix to_floats() const {
    RealMatrix out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out(r, c) = blocks[block_index(r, c)].value(element_index(r, c));
    return out;
  }
};

inline BfpMatrix format_matrix(const RealMatrix& m, BlockAxis axis, MantissaWidth width,
                               RoundingMode mode) {
  if (m.empty()) throw std::domain_error("cannot block format an empty matrix");
  BfpMatrix out{m.rows(), m.cols(), axis, width, {}};
  switch (axis) {
    case BlockAxis::Whole:
      out.blocks.push_back(block_format(m.values(), width, mode));
      break;
    case BlockAxis::PerRow:
      out.blocks.reserve(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r)
        out.blocks.push_back(block_format(m.row(r), width, mode));
      break;
    case BlockAxis::PerColumn:
      out.blocks.reserve(m.cols());
      for (std::size_t c = 0; c < m.cols(); ++c)
        out.blocks.push_back(block_format(m.column(c), width, mode));
      break;
  }
  return out;
}

inline BfpMatrix partition_matrix(const RealMatrix& m, MatrixRole role, PartitionScheme scheme,
                                  MantissaWidth width, RoundingMode mode) {
  return format_matrix(m, block_axis(scheme, role), width, mode);
}

using BitsRatio = boost::rational<std::int64_t>;

/// Storage cost of one block-formatted GEMM operand pair (bits per number).
struct CostReport {
  PartitionScheme scheme = PartitionScheme::RowWhole;
  BitsRatio avg_len_w;
  BitsRatio avg_len_i;
  std::int64_t num_block_exponents = 0;
  std::int64_t total_bits = 0;
};

inline CostReport storage_cost(PartitionScheme scheme, std::int64_t M, std::int64_t K,
                               std::int64_t N, MantissaWidth lw, MantissaWidth li,
                               int exponent_bits = kDefaultExponentBits) {
  if (M <= 0 || K <= 0 || N <= 0) throw std::invalid_argument("dimensions must be positive");
  if (exponent_bits <= 0) throw std::invalid_argument("exponent bit length must be positive");

  // Block count per operand follows the axis each role gets under the scheme.
  auto blocks_for = [&](MatrixRole role) -> std::int64_t {
    switch (block_axis(scheme, role)) {
      case BlockAxis::Whole: return 1;
      case BlockAxis::PerRow: return M;
      case BlockAxis::PerColumn: return N;
    }
    return 1;
  };
  const std::int64_t w_blocks = blocks_for(MatrixRole::Weight);
  const std::int64_t i_blocks = blocks_for(MatrixRole::Input);
  const std::int64_t le = exponent_bits;

  CostReport r;
  r.scheme = scheme;
  r.avg_len_w = BitsRatio(1 + lw.bits()) + BitsRatio(le * w_blocks, M * K);
  r.avg_len_i = BitsRatio(1 + li.bits()) + BitsRatio(le * i_blocks, K * N);
  r.num_block_exponents = w_blocks + i_blocks;
  r.total_bits = M * K * (1 + lw.bits()) + K * N * (1 + li.bits()) + r.num_block_exponents * le;
  return r;
}

inline double to_double(const BitsRatio& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

}  // namespace bfpcnn
