/**
 * Implementations of the bfpcnn subcommands. Each command is a pure function
 * of its options and input files; tools/bfpcnn.cpp only parses arguments and
 * maps exceptions to exit codes.
 */
#pragma once

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bfpcnn/cli/format.hpp"
#include "bfpcnn/cli/network_json.hpp"
#include "bfpcnn/error_model.hpp"
#include "bfpcnn/fxgemm.hpp"
#include "bfpcnn/netsim.hpp"
#include "bfpcnn/partition.hpp"
#include "bfpcnn/tensor_file.hpp"

namespace bfpcnn::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitPlanViolation = 4 };

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
}

inline void ensure_dir(const fs::path& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

inline std::string axis_name(BlockAxis axis) {
  switch (axis) {
    case BlockAxis::Whole: return "whole";
    case BlockAxis::PerRow: return "row";
    case BlockAxis::PerColumn: return "column";
  }
  return "?";
}

inline nlohmann::json stats_json(const QuantStats& s) {
  return {{"error_mean", real_json(s.error_mean)},
          {"error_variance", real_json(s.error_variance)},
          {"signal_energy", real_json(s.signal_energy)},
          {"error_energy", real_json(s.error_energy)},
          {"snr_db", real_json(s.snr_db)}};
}

inline nlohmann::json bfp_matrix_json(const BfpMatrix& m) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : m.blocks) {
    blocks.push_back({{"exponent", b.block_exponent}, {"mantissas", b.mantissas}});
  }
  return {{"rows", m.rows}, {"cols", m.cols}, {"axis", axis_name(m.axis)},
          {"mantissa_bits", m.width.bits()}, {"blocks", blocks}};
}

// quantize ------------------------------------------------------------------

struct QuantizeOptions {
  fs::path tensor;
  fs::path out;
  MatrixRole role = MatrixRole::Input;
  int lw = 8;
  int li = 8;
  PartitionScheme scheme = PartitionScheme::RowWhole;
  RoundingMode rounding = RoundingMode::RoundHalfAwayFromZero;
};

struct QuantizeResult {
  BfpMatrix matrix;
  QuantStats stats;
  nlohmann::json report;
};

/// Writes <out>/quantized.json and <out>/dequantized.bfpt.
inline QuantizeResult quantize_command(const QuantizeOptions& opt) {
  const auto width = opt.role == MatrixRole::Weight ? checked_width(opt.lw, "lw")
                                                    : checked_width(opt.li, "li");
  const TensorData data = read_tensor_file(opt.tensor);
  const RealMatrix m = to_matrix(data);

  QuantizeResult r{partition_matrix(m, opt.role, opt.scheme, width, opt.rounding), {}, {}};
  const RealMatrix rec = r.matrix.to_floats();
  r.stats = measure_quant_stats(m.values(), rec.values());
  r.report = {{"role", opt.role == MatrixRole::Weight ? "weight" : "input"},
              {"scheme", to_string(opt.scheme)},
              {"round", to_string(opt.rounding)},
              {"matrix", bfp_matrix_json(r.matrix)},
              {"stats", stats_json(r.stats)}};
  if (!opt.out.empty()) {
    ensure_dir(opt.out);
    write_text(opt.out / "quantized.json", r.report.dump(2) + "\n");
    TensorData dq{data.dims, rec.data()};
    write_tensor_file(opt.out / "dequantized.bfpt", dq);
  }
  return r;
}

// run / predict --------------------------------------------------------------

struct RunConfig {
  fs::path network;
  std::optional<fs::path> input;
  std::uint64_t seed = 1;
  fs::path out;
  LayerOverride all_layers;
  std::map<std::string, LayerOverride> per_layer;
  unsigned threads = 1;
};

/// {"network": ..., "input": ..., "seed": ..., "out": ..., "threads": ...,
///  "overrides": {"*": {...}, "<layer name>": {"lw", "li", "scheme", "round"}}}
inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base = {}) {
  RunConfig c;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  if (j.contains("network")) c.network = resolve(j.at("network").get<std::string>());
  if (j.contains("input")) c.input = resolve(j.at("input").get<std::string>());
  c.seed = j.value("seed", std::uint64_t{1});
  if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>());
  c.threads = j.value("threads", 1u);
  if (j.contains("overrides")) {
    for (const auto& [name, ov] : j.at("overrides").items()) {
      if (name == "*") c.all_layers = parse_override(ov);
      else c.per_layer[name] = parse_override(ov);
    }
  }
  return c;
}

inline NetworkSpec build_network(const RunConfig& cfg) {
  NetworkSpec net = parse_network(read_json_file(cfg.network), cfg.seed);
  for (auto& layer : net.layers) {
    if (auto* conv = layer.conv()) {
      cfg.all_layers.apply(*conv);
      if (auto it = cfg.per_layer.find(layer.name); it != cfg.per_layer.end()) it->second.apply(*conv);
    }
  }
  return net;
}

inline Tensor3 build_input(const RunConfig& cfg, const Shape3& shape) {
  if (cfg.input) {
    Tensor3 t = to_tensor3(read_tensor_file(*cfg.input));
    if (t.shape() != shape) throw std::domain_error("input tensor shape does not match the network");
    return t;
  }
  // Separate stream from the weight draws.
  return gaussian_tensor(shape, cfg.seed ^ 0x9E3779B97F4A7C15ULL);
}

struct RunOutputs {
  std::vector<LayerTap> taps;
  std::vector<LayerPrediction> predictions;
  std::string taps_csv;
  std::string report;
};

namespace detail {

inline std::string deviation(std::optional<double> ex, std::optional<double> model) {
  if (!ex || !model) return {};
  if (std::isinf(*ex) && std::isinf(*model) && (*ex > 0) == (*model > 0)) return format_real(0.0);
  return format_real(std::abs(*ex - *model));
}

struct Row {
  std::size_t layer;
  std::string name, stage;
  std::optional<double> ex, fresh, single, multi;
};

inline std::vector<Row> table_rows(const std::vector<LayerTap>& taps,
                                   const std::vector<LayerPrediction>& preds) {
  std::vector<Row> rows;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const auto& t = taps[i];
    const auto& p = preds[i];
    switch (t.kind) {
      case LayerKind::Conv:
        rows.push_back({t.layer, t.name, "input", t.input_snr_db, t.fresh_input_snr_db,
                        p.single->input.snr_db(), p.multi->input.snr_db()});
        rows.push_back({t.layer, t.name, "weight", t.weight_snr_db, t.weight_snr_db,
                        p.single->weight.snr_db(), p.multi->weight.snr_db()});
        rows.push_back({t.layer, t.name, "output", t.output.snr_db, t.fresh_output_snr_db,
                        p.single->output.snr_db(), p.multi->output.snr_db()});
        break;
      case LayerKind::Relu:
        rows.push_back({t.layer, t.name, "relu", t.output.snr_db, {}, {}, {}});
        break;
      case LayerKind::MaxPool:
        rows.push_back({t.layer, t.name, "max", t.output.snr_db, {}, {}, {}});
        break;
    }
  }
  return rows;
}

inline std::string fixed(std::optional<double> v) {
  if (!v) return "--";
  if (!std::isfinite(*v)) return format_real(*v);
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << *v;
  return os.str();
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace detail

inline std::string taps_csv(const std::vector<LayerTap>& taps, const std::vector<LayerPrediction>& preds) {
  std::ostringstream os;
  os << "layer,name,stage,ex_snr_db,ex_fresh_snr_db,single_snr_db,multi_snr_db,deviation_db\n";
  for (const auto& r : detail::table_rows(taps, preds)) {
    os << r.layer << ',' << r.name << ',' << r.stage << ',' << format_real(r.ex) << ','
       << format_real(r.fresh) << ',' << format_real(r.single) << ',' << format_real(r.multi) << ','
       << detail::deviation(r.ex, r.multi) << '\n';
  }
  return os.str();
}

/// Fixed-width text table: layer / stage / ex / single / multi SNR in dB.
inline std::string snr_report(const std::vector<LayerTap>& taps, const std::vector<LayerPrediction>& preds) {
  std::ostringstream os;
  os << detail::pad("layer", 10) << detail::pad("stage", 8) << detail::pad("ex SNR", 12)
     << detail::pad("single SNR", 12) << detail::pad("multi SNR", 12) << '\n';
  for (const auto& r : detail::table_rows(taps, preds)) {
    os << detail::pad(r.name, 10) << detail::pad(r.stage, 8) << detail::pad(detail::fixed(r.ex), 12)
       << detail::pad(detail::fixed(r.single), 12) << detail::pad(detail::fixed(r.multi), 12) << '\n';
  }
  return os.str();
}

/// BFP forward pass with taps, then the analytical model fed with the measured
/// pooling SNRs. Writes <out>/taps.csv and <out>/report.txt.
inline RunOutputs run_command(const RunConfig& cfg) {
  const NetworkSpec net = build_network(cfg);
  const Tensor3 input = build_input(cfg, net.input_shape);

  RunOutputs out;
  out.taps = forward_bfp(net, input, {cfg.threads, true}).taps;
  std::map<std::size_t, double> pool_snr;
  for (const auto& t : out.taps)
    if (t.kind == LayerKind::MaxPool) pool_snr[t.layer] = t.output.snr_db;
  out.predictions = predict_network(net, input, pool_snr);
  out.taps_csv = taps_csv(out.taps, out.predictions);
  out.report = snr_report(out.taps, out.predictions);
  if (!cfg.out.empty()) {
    ensure_dir(cfg.out);
    write_text(cfg.out / "taps.csv", out.taps_csv);
    write_text(cfg.out / "report.txt", out.report);
  }
  return out;
}

/// Model-only predictions (pooling passes SNR through). Writes <out>/predict.csv.
inline std::string predict_command(const RunConfig& cfg) {
  const NetworkSpec net = build_network(cfg);
  const Tensor3 input = build_input(cfg, net.input_shape);
  const auto preds = predict_network(net, input);
  std::ostringstream os;
  os << "layer,name,stage,single_snr_db,multi_snr_db\n";
  for (const auto& p : preds) {
    if (p.single) {
      os << p.layer << ',' << p.name << ",input," << format_real(p.single->input.snr_db()) << ','
         << format_real(p.multi->input.snr_db()) << '\n';
      os << p.layer << ',' << p.name << ",weight," << format_real(p.single->weight.snr_db()) << ','
         << format_real(p.multi->weight.snr_db()) << '\n';
      os << p.layer << ',' << p.name << ",output," << format_real(p.single->output.snr_db()) << ','
         << format_real(p.multi->output.snr_db()) << '\n';
    } else {
      os << p.layer << ',' << p.name << ',' << to_string(p.kind) << ",,"
         << format_real(p.multi_output.snr_db()) << '\n';
    }
  }
  if (!cfg.out.empty()) {
    ensure_dir(cfg.out);
    write_text(cfg.out / "predict.csv", os.str());
  }
  return os.str();
}

// cost ----------------------------------------------------------------------

inline nlohmann::json ratio_json(const BitsRatio& r) {
  return {{"num", r.numerator()}, {"den", r.denominator()}, {"value", to_double(r)}};
}

inline nlohmann::json cost_command(PartitionScheme chosen, std::int64_t M, std::int64_t K,
                                   std::int64_t N, int lw, int li, int le) {
  if (M <= 0 || K <= 0 || N <= 0) throw UsageError("M, K and N must be positive");
  if (le <= 0 || le > 30) throw UsageError("le must be in [1, 30]");
  const auto wl = checked_width(lw, "lw");
  const auto il = checked_width(li, "li");
  nlohmann::json schemes = nlohmann::json::array();
  for (auto s : kAllSchemes) {
    const auto c = storage_cost(s, M, K, N, wl, il, le);
    schemes.push_back({{"scheme", to_string(s)},
                       {"chosen", s == chosen},
                       {"avg_len_w", ratio_json(c.avg_len_w)},
                       {"avg_len_i", ratio_json(c.avg_len_i)},
                       {"nbe", c.num_block_exponents},
                       {"total_bits", c.total_bits}});
  }
  return {{"M", M}, {"K", K}, {"N", N}, {"lw", lw}, {"li", li}, {"le", le},
          {"chosen", to_string(chosen)}, {"schemes", schemes}};
}

// gemm ----------------------------------------------------------------------

struct GemmOptions {
  fs::path weights;
  fs::path input;
  fs::path out;
  int lw = 8;
  int li = 8;
  PartitionScheme scheme = PartitionScheme::RowWhole;
  RoundingMode rounding = RoundingMode::RoundHalfAwayFromZero;
  std::optional<int> accumulator_bits;  // check a narrower accumulator than planned
  unsigned threads = 1;
};

/// Writes <out>/gemm.json and <out>/product.bfpt. Throws PlanViolation.
inline nlohmann::json gemm_command(const GemmOptions& opt) {
  const auto wl = checked_width(opt.lw, "lw");
  const auto il = checked_width(opt.li, "li");
  const RealMatrix w = to_matrix(read_tensor_file(opt.weights));
  const RealMatrix in = to_matrix(read_tensor_file(opt.input));
  if (w.cols() != in.rows()) throw std::domain_error("inner dimensions of W and I differ");

  const auto wq = partition_matrix(w, MatrixRole::Weight, opt.scheme, wl, opt.rounding);
  const auto iq = partition_matrix(in, MatrixRole::Input, opt.scheme, il, opt.rounding);
  auto plan = bit_width_plan(wl, il, static_cast<std::int64_t>(w.cols()));
  if (opt.accumulator_bits) {
    if (*opt.accumulator_bits < 2) throw UsageError("accumulator bits must be >= 2");
    plan.accumulator_bits = *opt.accumulator_bits;
  }
  const ProductMatrix p = bfp_gemm(wq, iq, plan, opt.threads);
  const RealMatrix o = dequantize(p);

  nlohmann::json acc = nlohmann::json::array();
  for (auto a : p.accumulators) acc.push_back(accumulator_json(a));
  nlohmann::json report = {
      {"plan",
       {{"multiplier_bits", plan.multiplier_bits},
        {"accumulator_bits", plan.accumulator_bits},
        {"carry_margin", plan.carry_margin},
        {"reduction_length", plan.reduction_length},
        {"tight_product_bits", plan.tight_product_bits}}},
      {"rows", p.rows},
      {"cols", p.cols},
      {"accumulators", acc},
      {"scale_exponents", p.scale_exponents},
      {"max_abs_accumulator", accumulator_json(p.max_abs_accumulator)},
      {"weights", bfp_matrix_json(wq)},
      {"input", bfp_matrix_json(iq)}};
  nlohmann::json out_vals = nlohmann::json::array();
  for (double v : o.values()) out_vals.push_back(real_json(v));
  report["output"] = out_vals;
  if (!opt.out.empty()) {
    ensure_dir(opt.out);
    write_text(opt.out / "gemm.json", report.dump(2) + "\n");
    write_tensor_file(opt.out / "product.bfpt", from_matrix(o));
  }
  return report;
}

// histogram -----------------------------------------------------------------

inline std::string histogram_command(const fs::path& tensor, std::size_t bins, double lo, double hi) {
  if (bins == 0) throw UsageError("bins must be >= 1");
  if (!(hi > lo) || lo < 0.0) throw UsageError("range must satisfy 0 <= lo < hi");
  const TensorData data = read_tensor_file(tensor);
  const auto h = energy_histogram(data.values, bins, lo, hi);
  std::ostringstream os;
  os << "bin_lo,bin_hi,energy_share\n";
  for (std::size_t i = 0; i < h.bins(); ++i) {
    os << format_real(h.edge(i)) << ',' << format_real(i + 1 == h.bins() ? h.hi : h.edge(i + 1)) << ','
       << format_real(h.shares[i]) << '\n';
  }
  return os.str();
}

}  // namespace bfpcnn::cli
