#include <gtest/gtest.h>

#include <random>

#include "bfpcnn/partition.hpp"

using namespace bfpcnn;

namespace {

constexpr auto kRound = RoundingMode::RoundHalfAwayFromZero;

RealMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  // Rows and columns at very different scales so that partitioning matters.
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> scale(-12, 12);
  std::vector<int> row_scale(r), col_scale(c);
  for (auto& s : row_scale) s = scale(rng);
  for (auto& s : col_scale) s = scale(rng);
  RealMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = std::ldexp(g(rng), row_scale[i] + col_scale[j]);
  return m;
}

double error_energy(const RealMatrix& m, const BfpMatrix& q) {
  const auto rec = q.to_floats();
  double e = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = rec.values()[i] - m.values()[i];
    e += d * d;
  }
  return e;
}

}  // namespace

TEST(BlockAxis, SchemeMapping) {
  using enum PartitionScheme;
  EXPECT_EQ(block_axis(WholeWhole, MatrixRole::Weight), BlockAxis::Whole);
  EXPECT_EQ(block_axis(WholeWhole, MatrixRole::Input), BlockAxis::Whole);
  EXPECT_EQ(block_axis(RowColumn, MatrixRole::Weight), BlockAxis::PerRow);
  EXPECT_EQ(block_axis(RowColumn, MatrixRole::Input), BlockAxis::PerColumn);
  EXPECT_EQ(block_axis(RowWhole, MatrixRole::Weight), BlockAxis::PerRow);
  EXPECT_EQ(block_axis(RowWhole, MatrixRole::Input), BlockAxis::Whole);
  EXPECT_EQ(block_axis(WholeColumn, MatrixRole::Weight), BlockAxis::Whole);
  EXPECT_EQ(block_axis(WholeColumn, MatrixRole::Input), BlockAxis::PerColumn);
}

TEST(SchemeNames, RoundTrip) {
  for (auto s : kAllSchemes) EXPECT_EQ(parse_scheme(to_string(s)), s);
  EXPECT_THROW(parse_scheme("row-row"), std::invalid_argument);
}

TEST(PartitionMatrix, RowWholeWeightExample) {
  const RealMatrix w(2, 2, std::vector<double>{0.5, 1.25, 8.0, 0.25});
  const auto q = partition_matrix(w, MatrixRole::Weight, PartitionScheme::RowWhole, MantissaWidth(3),
                                  kRound);
  ASSERT_EQ(q.blocks.size(), 2u);
  EXPECT_EQ(q.blocks[0].block_exponent, 0);
  EXPECT_EQ(q.blocks[0].mantissas, (std::vector<std::int64_t>{2, 5}));
  EXPECT_EQ(q.blocks[1].block_exponent, 3);
  EXPECT_EQ(q.blocks[1].mantissas, (std::vector<std::int64_t>{4, 0}));
  EXPECT_EQ(q.mantissa(1, 0), 4);
  EXPECT_EQ(q.exponent(0, 1), 0);
  EXPECT_EQ(q.to_floats()(1, 1), 0.0);
}

TEST(PartitionMatrix, WholeInputExample) {
  const RealMatrix in(2, 2, std::vector<double>{1.25, 2.5, 1.25, 5.0});
  const auto q = partition_matrix(in, MatrixRole::Input, PartitionScheme::RowWhole, MantissaWidth(3),
                                  kRound);
  ASSERT_EQ(q.blocks.size(), 1u);
  EXPECT_EQ(q.blocks[0].block_exponent, 2);
  EXPECT_EQ(q.mantissa_matrix(), (Matrix<std::int64_t>(2, 2, std::vector<std::int64_t>{1, 3, 1, 5})));
}

TEST(PartitionMatrix, PerColumnLayout) {
  const RealMatrix in(2, 3, std::vector<double>{1.0, 0.25, 4.0, 3.0, 0.5, 0.0});
  const auto q = format_matrix(in, BlockAxis::PerColumn, MantissaWidth(4), kRound);
  ASSERT_EQ(q.blocks.size(), 3u);
  EXPECT_EQ(q.blocks[0].block_exponent, 1);
  EXPECT_EQ(q.blocks[1].block_exponent, -1);
  EXPECT_EQ(q.blocks[2].block_exponent, 2);
  EXPECT_EQ(q.to_floats(), in);
}

TEST(PartitionMatrix, BlockExponentIsLargestElementExponent) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_matrix(7, 11, rng);
    for (auto axis : {BlockAxis::Whole, BlockAxis::PerRow, BlockAxis::PerColumn}) {
      const auto q = format_matrix(m, axis, MantissaWidth(6), kRound);
      std::vector<int> largest(q.blocks.size(), std::numeric_limits<int>::min());
      for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) {
          auto& e = largest[q.block_index(r, c)];
          e = std::max(e, extract_exponent(m(r, c)));
        }
      for (std::size_t b = 0; b < q.blocks.size(); ++b) {
        // One above only when rounding carried out of the mantissa.
        const int eps = q.blocks[b].block_exponent;
        ASSERT_TRUE(eps == largest[b] || eps == largest[b] + 1);
      }
    }
  }
}

TEST(PartitionMatrix, RefinementDominance) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_matrix(9, 13, rng);
    for (int L : {3, 8, 12}) {
      const MantissaWidth w(L);
      const double whole = error_energy(m, format_matrix(m, BlockAxis::Whole, w, kRound));
      EXPECT_LE(error_energy(m, format_matrix(m, BlockAxis::PerRow, w, kRound)), whole);
      EXPECT_LE(error_energy(m, format_matrix(m, BlockAxis::PerColumn, w, kRound)), whole);
    }
  }
}

TEST(StorageCost, ExponentCounts) {
  const MantissaWidth l(7);
  for (auto [M, K, N] : {std::tuple{64, 9, 50176}, std::tuple{1, 1, 1}, std::tuple{3, 5, 7}}) {
    EXPECT_EQ(storage_cost(PartitionScheme::WholeWhole, M, K, N, l, l).num_block_exponents, 2);
    EXPECT_EQ(storage_cost(PartitionScheme::RowColumn, M, K, N, l, l).num_block_exponents, M + N);
    EXPECT_EQ(storage_cost(PartitionScheme::RowWhole, M, K, N, l, l).num_block_exponents, 1 + M);
    EXPECT_EQ(storage_cost(PartitionScheme::WholeColumn, M, K, N, l, l).num_block_exponents, 1 + N);
  }
  EXPECT_EQ(storage_cost(PartitionScheme::RowColumn, 64, 9, 50176, l, l).num_block_exponents, 50240);
}

TEST(StorageCost, RowWholeAverageLengths) {
  const auto r = storage_cost(PartitionScheme::RowWhole, 64, 9, 50176, MantissaWidth(7),
                              MantissaWidth(7));
  EXPECT_EQ(r.avg_len_w, BitsRatio(80, 9));
  EXPECT_NEAR(to_double(r.avg_len_w), 8.889, 5e-4);
  EXPECT_EQ(r.avg_len_i, BitsRatio(8) + BitsRatio(8, 9 * 50176));
  EXPECT_EQ(r.total_bits, 64 * 9 * 8 + 9 * 50176 * 8 + 65 * 8);
}

TEST(StorageCost, AllSchemesMatchClosedForm) {
  const std::int64_t M = 5, K = 6, N = 7, lw = 4, li = 9, le = 6;
  const auto cost = [&](PartitionScheme s) {
    return storage_cost(s, M, K, N, MantissaWidth(lw), MantissaWidth(li), le);
  };
  const auto ww = cost(PartitionScheme::WholeWhole);
  EXPECT_EQ(ww.avg_len_w, BitsRatio(1 + lw) + BitsRatio(le, M * K));
  EXPECT_EQ(ww.avg_len_i, BitsRatio(1 + li) + BitsRatio(le, K * N));
  const auto rc = cost(PartitionScheme::RowColumn);
  EXPECT_EQ(rc.avg_len_w, BitsRatio(1 + lw) + BitsRatio(le, K));
  EXPECT_EQ(rc.avg_len_i, BitsRatio(1 + li) + BitsRatio(le, K));
  const auto wc = cost(PartitionScheme::WholeColumn);
  EXPECT_EQ(wc.avg_len_w, BitsRatio(1 + lw) + BitsRatio(le, M * K));
  EXPECT_EQ(wc.avg_len_i, BitsRatio(1 + li) + BitsRatio(le, K));
  EXPECT_EQ(wc.total_bits, M * K * (1 + lw) + K * N * (1 + li) + (1 + N) * le);
}

TEST(StorageCost, RejectsBadDimensions) {
  const MantissaWidth l(8);
  EXPECT_THROW(storage_cost(PartitionScheme::RowWhole, 0, 1, 1, l, l), std::invalid_argument);
  EXPECT_THROW(storage_cost(PartitionScheme::RowWhole, 1, -2, 1, l, l), std::invalid_argument);
  EXPECT_THROW(storage_cost(PartitionScheme::RowWhole, 1, 1, 1, l, l, 0), std::invalid_argument);
}
