/**
 * Small CNN forward passes (conv / ReLU / max pooling) in two modes:
 *
 *  - reference: plain binary64 direct convolution;
 *  - BFP: im2col, block formatting of W and I, exact integer GEMM and
 *    dequantization at every conv output. ReLU and pooling act on the
 *    dequantized values unchanged.
 *
 * The BFP pass can record per-layer taps comparing each stage against the
 * reference pass on the same input.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bfpcnn/bfp_core.hpp"
#include "bfpcnn/fxgemm.hpp"
#include "bfpcnn/partition.hpp"
#include "bfpcnn/tensor.hpp"

namespace bfpcnn {

struct ConvLayer {
  std::size_t out_channels = 1;
  ConvGeometry geometry;
  std::vector<double> weights;  // M x C x kh x kw, row-major
  MantissaWidth lw{8};
  MantissaWidth li{8};
  PartitionScheme scheme = PartitionScheme::RowWhole;
  RoundingMode rounding = RoundingMode::RoundHalfAwayFromZero;

  /// Weights as the M x (C*kh*kw) GEMM operand; columns follow im2col row order.
  RealMatrix weight_matrix() const {
    const std::size_t k = weights.size() / out_channels;
    return RealMatrix(out_channels, k, weights);
  }
};

struct ReluLayer {};

struct MaxPoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

enum class LayerKind { Conv, Relu, MaxPool };

struct LayerSpec {
  std::string name;
  std::variant<ConvLayer, ReluLayer, MaxPoolLayer> op;

  LayerKind kind() const noexcept { return static_cast<LayerKind>(op.index()); }
  const ConvLayer* conv() const noexcept { return std::get_if<ConvLayer>(&op); }
  ConvLayer* conv() noexcept { return std::get_if<ConvLayer>(&op); }
};

inline std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
  }
  return "?";
}

struct NetworkSpec {
  Shape3 input_shape;
  std::vector<LayerSpec> layers;
};

inline std::size_t pool_output_size(std::size_t in, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw std::domain_error("pool window and stride must be positive");
  if (in < window) throw std::domain_error("pool window larger than input");
  return (in - window) / stride + 1;
}

inline Shape3 output_shape(const LayerSpec& layer, const Shape3& in) {
  switch (layer.kind()) {
    case LayerKind::Conv: {
      const auto& c = *layer.conv();
      const auto& g = c.geometry;
      if (c.out_channels == 0) throw std::domain_error(layer.name + ": no output channels");
      if (c.weights.size() != c.out_channels * in.channels * g.kernel_h * g.kernel_w) {
        throw std::domain_error(layer.name + ": weight tensor shape does not match M x C x kh x kw");
      }
      for (double v : c.weights)
        if (!std::isfinite(v)) throw std::domain_error(layer.name + ": non-finite weight");
      return {c.out_channels, conv_output_size(in.height, g.kernel_h, g.stride, g.pad),
              conv_output_size(in.width, g.kernel_w, g.stride, g.pad)};
    }
    case LayerKind::Relu: return in;
    case LayerKind::MaxPool: {
      const auto& p = std::get<MaxPoolLayer>(layer.op);
      return {in.channels, pool_output_size(in.height, p.window, p.stride),
              pool_output_size(in.width, p.window, p.stride)};
    }
  }
  return in;
}

/// Shapes after every layer; throws if adjacent layers do not compose.
inline std::vector<Shape3> validate(const NetworkSpec& net) {
  std::vector<Shape3> shapes;
  Shape3 s = net.input_shape;
  if (s.count() == 0) throw std::domain_error("network input shape is empty");
  for (const auto& layer : net.layers) {
    s = output_shape(layer, s);
    shapes.push_back(s);
  }
  return shapes;
}

inline Tensor3 conv2d_direct(const Tensor3& in, const ConvLayer& conv) {
  const auto& g = conv.geometry;
  const std::size_t out_h = conv_output_size(in.height(), g.kernel_h, g.stride, g.pad);
  const std::size_t out_w = conv_output_size(in.width(), g.kernel_w, g.stride, g.pad);
  const std::size_t C = in.channels();
  Tensor3 out({conv.out_channels, out_h, out_w});
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t m = 0; m < conv.out_channels; ++m)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
              const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
              const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
              if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(in.height()) ||
                  x >= static_cast<std::ptrdiff_t>(in.width()))
                continue;
              const double w = conv.weights[((m * C + c) * g.kernel_h + ky) * g.kernel_w + kx];
              acc += w * in.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
        out.at(m, oy, ox) = acc;
      }
  return out;
}

inline Tensor3 relu(Tensor3 t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
  return t;
}

inline Tensor3 max_pool(const Tensor3& in, const MaxPoolLayer& p) {
  const std::size_t out_h = pool_output_size(in.height(), p.window, p.stride);
  const std::size_t out_w = pool_output_size(in.width(), p.window, p.stride);
  Tensor3 out({in.channels(), out_h, out_w});
  for (std::size_t c = 0; c < in.channels(); ++c)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t dy = 0; dy < p.window; ++dy)
          for (std::size_t dx = 0; dx < p.window; ++dx)
            best = std::max(best, in.at(c, oy * p.stride + dy, ox * p.stride + dx));
        out.at(c, oy, ox) = best;
      }
  return out;
}

inline Tensor3 matrix_to_tensor(const RealMatrix& m, std::size_t height, std::size_t width) {
  return Tensor3({m.rows(), height, width}, m.data());
}

/// Activations after every layer, exact binary64.
inline std::vector<Tensor3> forward_reference(const NetworkSpec& net, const Tensor3& input) {
  if (input.shape() != net.input_shape) throw std::domain_error("input shape does not match network");
  validate(net);
  std::vector<Tensor3> acts;
  acts.reserve(net.layers.size());
  const Tensor3* cur = &input;
  for (const auto& layer : net.layers) {
    switch (layer.kind()) {
      case LayerKind::Conv: acts.push_back(conv2d_direct(*cur, *layer.conv())); break;
      case LayerKind::Relu: acts.push_back(relu(*cur)); break;
      case LayerKind::MaxPool: acts.push_back(max_pool(*cur, std::get<MaxPoolLayer>(layer.op))); break;
    }
    cur = &acts.back();
  }
  return acts;
}

struct SnrMeasurement {
  double snr_db = kNoiselessSnrDb;
  double signal_energy = 0.0;  // sum of ref^2
  double error_energy = 0.0;   // sum of (bfp - ref)^2
};

inline SnrMeasurement measure_layer_snr(std::span<const double> reference,
                                        std::span<const double> bfp) {
  if (reference.size() != bfp.size()) throw std::domain_error("measure_layer_snr: shape mismatch");
  SnrMeasurement m;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double e = bfp[i] - reference[i];
    m.signal_energy += reference[i] * reference[i];
    m.error_energy += e * e;
  }
  m.snr_db = energy_ratio_db(m.signal_energy, m.error_energy);
  return m;
}

/// Empirical SNRs for one layer. Conv layers fill the optional fields.
struct LayerTap {
  std::size_t layer = 0;
  std::string name;
  LayerKind kind = LayerKind::Conv;
  SnrMeasurement output;
  std::optional<double> input_snr_db;   // BFP-path quantized input vs reference input
  std::optional<double> weight_snr_db;
  // The same conv run in BFP on the exact reference input (no inherited error).
  std::optional<double> fresh_input_snr_db;
  std::optional<double> fresh_output_snr_db;
};

struct BfpRunOptions {
  unsigned threads = 1;
  bool collect_taps = true;
};

struct BfpRunResult {
  std::vector<Tensor3> activations;
  std::vector<LayerTap> taps;
};

/// One conv layer through FP2BFP -> integer GEMM -> BFP2FP.
inline Tensor3 conv2d_bfp(const Tensor3& in, const ConvLayer& conv, unsigned threads = 1) {
  const RealMatrix cols = im2col(in, conv.geometry);
  const auto wq = partition_matrix(conv.weight_matrix(), MatrixRole::Weight, conv.scheme, conv.lw,
                                   conv.rounding);
  const auto iq = partition_matrix(cols, MatrixRole::Input, conv.scheme, conv.li, conv.rounding);
  const auto plan = bit_width_plan(conv.lw, conv.li, static_cast<std::int64_t>(cols.rows()));
  const auto out_h = conv_output_size(in.height(), conv.geometry.kernel_h, conv.geometry.stride,
                                      conv.geometry.pad);
  const auto out_w = conv_output_size(in.width(), conv.geometry.kernel_w, conv.geometry.stride,
                                      conv.geometry.pad);
  return matrix_to_tensor(dequantize(bfp_gemm(wq, iq, plan, threads)), out_h, out_w);
}

/// Plan violation raised inside a named layer.
class LayerPlanViolation : public PlanViolation {
 public:
  LayerPlanViolation(std::string layer, const PlanViolation& v)
      : PlanViolation(v), layer_(std::move(layer)),
        message_("layer '" + layer_ + "': " + v.what()) {}
  const char* what() const noexcept override { return message_.c_str(); }
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
  std::string message_;
};

inline BfpRunResult forward_bfp(const NetworkSpec& net, const Tensor3& input,
                                const BfpRunOptions& opts = {}) {
  if (input.shape() != net.input_shape) throw std::domain_error("input shape does not match network");
  validate(net);

  std::vector<Tensor3> ref;
  if (opts.collect_taps) ref = forward_reference(net, input);

  BfpRunResult res;
  res.activations.reserve(net.layers.size());
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& layer = net.layers[li];
    const Tensor3& cur = li == 0 ? input : res.activations.back();
    const Tensor3& ref_in = li == 0 ? input : (opts.collect_taps ? ref[li - 1] : cur);
    try {
      switch (layer.kind()) {
        case LayerKind::Conv: res.activations.push_back(conv2d_bfp(cur, *layer.conv(), opts.threads)); break;
        case LayerKind::Relu: res.activations.push_back(relu(cur)); break;
        case LayerKind::MaxPool:
          res.activations.push_back(max_pool(cur, std::get<MaxPoolLayer>(layer.op)));
          break;
      }
    } catch (const PlanViolation& v) {
      throw LayerPlanViolation(layer.name, v);
    }
    if (!opts.collect_taps) continue;

    LayerTap tap;
    tap.layer = li;
    tap.name = layer.name;
    tap.kind = layer.kind();
    tap.output = measure_layer_snr(ref[li].values(), res.activations.back().values());
    if (const auto* conv = layer.conv()) {
      const RealMatrix ref_cols = im2col(ref_in, conv->geometry);
      const RealMatrix bfp_cols = im2col(cur, conv->geometry);
      const auto iq = partition_matrix(bfp_cols, MatrixRole::Input, conv->scheme, conv->li,
                                       conv->rounding);
      tap.input_snr_db = measure_layer_snr(ref_cols.values(), iq.to_floats().values()).snr_db;

      const RealMatrix wm = conv->weight_matrix();
      const auto wq = partition_matrix(wm, MatrixRole::Weight, conv->scheme, conv->lw, conv->rounding);
      tap.weight_snr_db = measure_layer_snr(wm.values(), wq.to_floats().values()).snr_db;

      const auto fresh_iq = partition_matrix(ref_cols, MatrixRole::Input, conv->scheme, conv->li,
                                             conv->rounding);
      tap.fresh_input_snr_db =
          measure_layer_snr(ref_cols.values(), fresh_iq.to_floats().values()).snr_db;
      const Tensor3 fresh_out = conv2d_bfp(ref_in, *conv, opts.threads);
      tap.fresh_output_snr_db = measure_layer_snr(ref[li].values(), fresh_out.values()).snr_db;
    }
    res.taps.push_back(std::move(tap));
  }
  return res;
}

/// Share of squared magnitude falling in each bin of normalized magnitude.
struct EnergyHistogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> shares;
  double range_fraction = 0.0;  // energy inside [lo, hi] over total energy

  std::size_t bins() const noexcept { return shares.size(); }
  double edge(std::size_t i) const {
    return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(shares.size());
  }
};

/// Bins are right-closed: bin i covers (edge(i), edge(i+1)], and lo itself falls in bin 0.
inline EnergyHistogram energy_histogram(std::span<const double> values, std::size_t bins,
                                        double lo = 0.0, double hi = 1.0) {
  if (bins == 0) throw std::domain_error("histogram needs at least one bin");
  if (!(hi > lo) || lo < 0.0) throw std::domain_error("histogram range must satisfy 0 <= lo < hi");
  if (values.empty()) throw std::domain_error("histogram of an empty sequence");
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) throw std::domain_error("histogram of an all-zero sequence");

  EnergyHistogram h{lo, hi, std::vector<double>(bins, 0.0), 0.0};
  const double width = (hi - lo) / static_cast<double>(bins);
  double total = 0.0, in_range = 0.0;
  for (double v : values) {
    const double e = v * v;
    total += e;
    const double mag = std::abs(v) / peak;
    if (mag < lo || mag > hi || e == 0.0) continue;
    auto idx = static_cast<std::ptrdiff_t>(std::ceil((mag - lo) / width)) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    h.shares[static_cast<std::size_t>(idx)] += e;
    in_range += e;
  }
  if (in_range == 0.0) throw std::domain_error("no energy inside the histogram range");
  for (double& s : h.shares) s /= in_range;
  h.range_fraction = in_range / total;
  return h;
}

// Random test networks ------------------------------------------------------

struct ConvConfig {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

inline std::vector<double> gaussian_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

inline Tensor3 gaussian_tensor(Shape3 shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor3(shape, gaussian_values(shape.count(), rng));
}

/// conv -> relu -> conv -> relu -> ... with unit-variance Gaussian weights.
/// A max pool follows the relu of every layer index listed in `pool_after`.
inline NetworkSpec random_conv_network(Shape3 input, const std::vector<ConvConfig>& convs,
                                       std::uint64_t seed, MantissaWidth lw, MantissaWidth li,
                                       const std::vector<std::size_t>& pool_after = {}) {
  std::mt19937_64 rng(seed);
  NetworkSpec net{input, {}};
  std::size_t channels = input.channels;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& cc = convs[i];
    ConvLayer conv;
    conv.out_channels = cc.out_channels;
    conv.geometry = {cc.kernel, cc.kernel, cc.stride, cc.pad};
    conv.weights = gaussian_values(cc.out_channels * channels * cc.kernel * cc.kernel, rng);
    conv.lw = lw;
    conv.li = li;
    const auto n = std::to_string(i + 1);
    net.layers.push_back({"conv" + n, conv});
    net.layers.push_back({"relu" + n, ReluLayer{}});
    if (std::find(pool_after.begin(), pool_after.end(), i) != pool_after.end()) {
      net.layers.push_back({"pool" + n, MaxPoolLayer{}});
    }
    channels = cc.out_channels;
  }
  return net;
}

}  // namespace bfpcnn
