/**
 * Analytical NSR/SNR model of BFP convolution.
 *
 * Three stages:
 *  1. quantization noise of a block, sigma^2 = 2^(-2L)/12 * sum_i p_i 2^(2 gamma_i);
 *  2. a single GEMM: output NSR = input NSR + weight NSR;
 *  3. layer chaining: the input of layer k carries the output NSR of layer
 *     k-1 in addition to its own fresh quantization noise.
 *
 * Exponent convention: the noise formula is written for mantissas normalized
 * to [-1, 1), i.e. values below 2^gamma. A block whose largest element
 * exponent is eps (2^eps <= max|x| < 2^(eps+1)) therefore has gamma = eps + 1,
 * which reproduces the grid step 2^(eps - (L - 1)) used by block_format.
 */
#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfpcnn/bfp_core.hpp"
#include "bfpcnn/netsim.hpp"
#include "bfpcnn/partition.hpp"

namespace bfpcnn {

class SnrValue {
 public:
  static SnrValue from_db(double snr_db) { return SnrValue(snr_db, nsr_of(snr_db)); }
  static SnrValue from_nsr(double nsr) {
    if (nsr < 0.0 || std::isnan(nsr)) throw std::domain_error("NSR must be non-negative");
    return SnrValue(nsr == 0.0 ? kNoiselessSnrDb : -10.0 * std::log10(nsr), nsr);
  }
  static SnrValue noiseless() { return SnrValue(kNoiselessSnrDb, 0.0); }

  double snr_db() const noexcept { return snr_db_; }
  double nsr() const noexcept { return nsr_; }
  bool is_noiseless() const noexcept { return nsr_ == 0.0; }

 private:
  SnrValue(double db, double nsr) : snr_db_(db), nsr_(nsr) {}
  static double nsr_of(double db) {
    if (std::isnan(db)) throw std::domain_error("SNR is NaN");
    return std::isinf(db) && db > 0 ? 0.0 : std::pow(10.0, -db / 10.0);
  }

  double snr_db_;
  double nsr_;
};

struct ExponentPmf {
  std::vector<int> levels;
  std::vector<double> probabilities;
  int exponent_bits = kDefaultExponentBits;

  static ExponentPmf point_mass(int gamma, int exponent_bits = kDefaultExponentBits) {
    return {{gamma}, {1.0}, exponent_bits};
  }

  /// Throws unless probabilities are non-negative, sum to one and fit 2^L_E levels.
  void validate() const {
    if (levels.size() != probabilities.size() || levels.empty()) {
      throw std::domain_error("pmf levels and probabilities must be non-empty and aligned");
    }
    if (exponent_bits < 1 || exponent_bits > 30 ||
        levels.size() > (std::size_t{1} << exponent_bits)) {
      throw std::domain_error("pmf has more levels than 2^L_E");
    }
    double sum = 0.0;
    for (double p : probabilities) {
      if (p < 0.0 || !std::isfinite(p)) throw std::domain_error("pmf probability out of range");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::domain_error("pmf probabilities must sum to 1");
  }
};

/// sigma^2 = 2^(-2L)/12 * 2^(2 gamma) for a deterministic exponent gamma.
inline double quant_variance(MantissaWidth width, int gamma) {
  return std::ldexp(1.0, 2 * gamma - 2 * width.bits()) / 12.0;
}

/// sigma^2 = 2^(-2L)/12 * sum_i p_i 2^(2 gamma_i).
inline double quant_variance_pmf(MantissaWidth width, const ExponentPmf& pmf) {
  pmf.validate();
  double acc = 0.0;
  for (std::size_t i = 0; i < pmf.levels.size(); ++i)
    acc += pmf.probabilities[i] * std::ldexp(1.0, 2 * pmf.levels[i]);
  return std::ldexp(acc, -2 * width.bits()) / 12.0;
}

/// Rounding-noise variance of a block whose largest element exponent is
/// `block_exponent`: step^2 / 12 with step = 2^(eps - (L - 1)).
inline double block_noise_variance(MantissaWidth width, int block_exponent) {
  return quant_variance(width, block_exponent + 1);
}

namespace detail {

struct EnergyPair {
  double signal = 0.0;  // sum over blocks of per-block mean square
  double noise = 0.0;   // sum over blocks of predicted noise variance
};

inline void add_block(EnergyPair& acc, std::span<const double> block, MantissaWidth width) {
  const int eps = max_exponent(block);
  if (eps == std::numeric_limits<int>::min()) return;  // all-zero block: no signal, no noise
  // Exact zeros are representable at any exponent and carry no rounding error.
  double sq = 0.0;
  std::size_t nonzero = 0;
  for (double v : block) {
    sq += v * v;
    nonzero += v != 0.0;
  }
  const auto n = static_cast<double>(block.size());
  acc.signal += sq / n;
  acc.noise += block_noise_variance(width, eps) * static_cast<double>(nonzero) / n;
}

}  // namespace detail

/// Predicted SNR of a matrix block formatted along `axis`: sum of per-block
/// mean squares over sum of per-block noise variances. Each block's noise is
/// scaled by its fraction of nonzero entries, since exact zeros quantize
/// without error.
inline SnrValue matrix_snr(const RealMatrix& m, BlockAxis axis, MantissaWidth width) {
  if (m.empty()) throw std::domain_error("matrix_snr of an empty matrix");
  detail::EnergyPair e;
  switch (axis) {
    case BlockAxis::Whole: detail::add_block(e, m.values(), width); break;
    case BlockAxis::PerRow:
      for (std::size_t r = 0; r < m.rows(); ++r) detail::add_block(e, m.row(r), width);
      break;
    case BlockAxis::PerColumn:
      for (std::size_t c = 0; c < m.cols(); ++c) {
        const auto col = m.column(c);
        detail::add_block(e, col, width);
      }
      break;
  }
  if (e.noise == 0.0) return SnrValue::noiseless();
  return SnrValue::from_nsr(e.noise / e.signal);
}

/// Input matrix formatted as one block.
inline SnrValue input_snr(const RealMatrix& input, MantissaWidth width) {
  return matrix_snr(input, BlockAxis::Whole, width);
}

/// Weight matrix formatted per row, aggregated over rows.
inline SnrValue weight_snr(const RealMatrix& weights, MantissaWidth width) {
  return matrix_snr(weights, BlockAxis::PerRow, width);
}

/// Output of a BFP product: NSRs add.
inline SnrValue combine_snr(const SnrValue& input, const SnrValue& weight) {
  return SnrValue::from_nsr(input.nsr() + weight.nsr());
}

/// Same combination in dB form; agrees with combine_snr for finite inputs.
inline double combine_snr_db(double snr_i, double snr_w) {
  return snr_i + snr_w - 10.0 * std::log10(std::pow(10.0, snr_i / 10.0) + std::pow(10.0, snr_w / 10.0));
}

/// Fresh quantization noise of a block that already carries error, relative to
/// the clean signal: eta2 + eta1 * eta2, with eta2 measured against signal plus
/// inherited noise.
inline double inherit_nsr(double eta1, double eta2) {
  if (eta1 < 0.0 || eta2 < 0.0) throw std::domain_error("NSR must be non-negative");
  return eta2 + eta1 * eta2;
}

/// eta2 = sigma2^2 / (E(Y^2) + sigma1^2) with sigma1^2 = eta1 E(Y^2).
inline double fresh_nsr(double eta1, double fresh_variance, double signal_energy) {
  if (signal_energy <= 0.0) throw std::domain_error("signal energy must be positive");
  return fresh_variance / (signal_energy * (1.0 + eta1));
}

/// Total NSR of a layer input: inherited noise plus the fresh noise term.
inline double carried_input_nsr(double eta1, double fresh_variance, double signal_energy) {
  return eta1 + inherit_nsr(eta1, fresh_nsr(eta1, fresh_variance, signal_energy));
}

struct StagePrediction {
  SnrValue input = SnrValue::noiseless();
  SnrValue weight = SnrValue::noiseless();
  SnrValue output = SnrValue::noiseless();
};

struct LayerPrediction {
  std::size_t layer = 0;
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::optional<StagePrediction> single;  // conv only: fresh input, no inherited error
  SnrValue multi_output = SnrValue::noiseless();  // SNR carried out of this layer
  std::optional<StagePrediction> multi;   // conv only
};

/// Runs the reference pass on `input` for real magnitudes and exponents, then
/// predicts every layer. ReLU passes the carried SNR through; a max pool takes
/// the measured SNR from `measured_pool_snr_db` (keyed by layer index) when
/// present and passes through otherwise.
inline std::vector<LayerPrediction> predict_network(
    const NetworkSpec& net, const Tensor3& input,
    const std::map<std::size_t, double>& measured_pool_snr_db = {}) {
  const auto acts = forward_reference(net, input);
  std::vector<LayerPrediction> out;
  out.reserve(net.layers.size());
  double eta1 = 0.0;  // NSR carried by the current activations
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& layer = net.layers[li];
    LayerPrediction p;
    p.layer = li;
    p.name = layer.name;
    p.kind = layer.kind();
    if (const auto* conv = layer.conv()) {
      const Tensor3& in = li == 0 ? input : acts[li - 1];
      const RealMatrix cols = im2col(in, conv->geometry);
      const BlockAxis in_axis = block_axis(conv->scheme, MatrixRole::Input);
      const BlockAxis w_axis = block_axis(conv->scheme, MatrixRole::Weight);

      StagePrediction single;
      single.input = matrix_snr(cols, in_axis, conv->li);
      single.weight = matrix_snr(conv->weight_matrix(), w_axis, conv->lw);
      single.output = combine_snr(single.input, single.weight);

      StagePrediction multi = single;
      if (eta1 > 0.0) {
        // Fresh noise variance relative to the clean signal is the single-mode
        // NSR times the signal energy; E(Y^2) cancels, so use unit energy.
        multi.input = SnrValue::from_nsr(carried_input_nsr(eta1, single.input.nsr(), 1.0));
        multi.output = combine_snr(multi.input, multi.weight);
      }
      p.single = single;
      p.multi = multi;
      eta1 = multi.output.nsr();
    } else if (layer.kind() == LayerKind::MaxPool) {
      if (auto it = measured_pool_snr_db.find(li); it != measured_pool_snr_db.end()) {
        eta1 = SnrValue::from_db(it->second).nsr();
      }
    }
    p.multi_output = SnrValue::from_nsr(eta1);
    out.push_back(std::move(p));
  }
  return out;
}

/// Monte-Carlo breakdown of the BFP inner-product second moment
/// E((P_b . Q_b)^2) for i.i.d. standard Gaussian P, Q of length K, each block
/// formatted as a whole.
struct InnerProductBreakdown {
  double clean = 0.0;        // E((P.Q)^2)
  double p_error = 0.0;      // E((P_e.Q)^2)
  double q_error = 0.0;      // E((P.Q_e)^2)
  double higher_order = 0.0; // E((P_e.Q_e)^2), dropped by the model
  double cross_terms = 0.0;  // measured - (clean + p_error + q_error + higher_order)
  double measured = 0.0;     // E((P_b.Q_b)^2)
  double predicted = 0.0;    // E((1/K)(1 + eta_P + eta_Q) |P|^2 |Q|^2)
  double nsr_measured = 0.0; // (measured - clean) / clean
  double nsr_predicted = 0.0;// E(eta_P + eta_Q), eta from the noise model
};

inline InnerProductBreakdown inner_product_breakdown(std::size_t K, std::size_t trials,
                                                     MantissaWidth width, std::uint64_t seed) {
  if (K == 0 || trials == 0) throw std::domain_error("need K >= 1 and at least one trial");
  std::mt19937_64 rng(seed);
  InnerProductBreakdown b;
  auto dot = [](std::span<const double> a, std::span<const double> c) {
    return std::inner_product(a.begin(), a.end(), c.begin(), 0.0);
  };
  for (std::size_t t = 0; t < trials; ++t) {
    const auto p = gaussian_values(K, rng);
    const auto q = gaussian_values(K, rng);
    const auto pb_block = block_format(p, width, RoundingMode::RoundHalfAwayFromZero);
    const auto qb_block = block_format(q, width, RoundingMode::RoundHalfAwayFromZero);
    const auto pb = to_floats(pb_block);
    const auto qb = to_floats(qb_block);
    std::vector<double> pe(K), qe(K);
    for (std::size_t k = 0; k < K; ++k) {
      pe[k] = pb[k] - p[k];
      qe[k] = qb[k] - q[k];
    }
    const double pq = dot(p, q), peq = dot(pe, q), pqe = dot(p, qe), peqe = dot(pe, qe);
    const double pbqb = dot(pb, qb);
    b.clean += pq * pq;
    b.p_error += peq * peq;
    b.q_error += pqe * pqe;
    b.higher_order += peqe * peqe;
    b.measured += pbqb * pbqb;

    const double np = dot(p, p), nq = dot(q, q);
    const double eta_p = block_noise_variance(width, pb_block.block_exponent) * static_cast<double>(K) / np;
    const double eta_q = block_noise_variance(width, qb_block.block_exponent) * static_cast<double>(K) / nq;
    b.predicted += (1.0 + eta_p + eta_q) * np * nq / static_cast<double>(K);
    b.nsr_predicted += eta_p + eta_q;
  }
  const auto n = static_cast<double>(trials);
  b.clean /= n;
  b.p_error /= n;
  b.q_error /= n;
  b.higher_order /= n;
  b.measured /= n;
  b.predicted /= n;
  b.nsr_predicted /= n;
  b.cross_terms = b.measured - (b.clean + b.p_error + b.q_error + b.higher_order);
  b.nsr_measured = (b.measured - b.clean) / b.clean;
  return b;
}

}  // namespace bfpcnn
