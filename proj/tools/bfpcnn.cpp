// bfpcnn: block floating point quantization, GEMM and SNR analysis.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 plan violation.

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>

#include "bfpcnn/cli/commands.hpp"

namespace {

using namespace bfpcnn;
using namespace bfpcnn::cli;

struct CommonFlags {
  int lw = 8;
  int li = 8;
  int le = kDefaultExponentBits;
  std::string scheme = "row-whole";
  std::string round = "half-away";
  std::uint64_t seed = 1;
  std::string out;
  unsigned threads = 1;
};

void add_format_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--lw", f.lw, "Weight mantissa bits, sign excluded")->capture_default_str();
  cmd->add_option("--li", f.li, "Input mantissa bits, sign excluded")->capture_default_str();
  cmd->add_option("--scheme", f.scheme, "whole-whole | row-column | row-whole | whole-column")
      ->capture_default_str();
  cmd->add_option("--round", f.round, "truncate | half-away")->capture_default_str();
}

PartitionScheme scheme_of(const CommonFlags& f) {
  try {
    return parse_scheme(f.scheme);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

RoundingMode rounding_of(const CommonFlags& f) {
  try {
    return parse_rounding_mode(f.round);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block floating point CNN arithmetic and error analysis"};
  app.require_subcommand(1);
  CommonFlags f;

  // quantize
  auto* quantize = app.add_subcommand("quantize", "Block format a tensor and report quantization error");
  std::string q_tensor, q_role = "input";
  quantize->add_option("tensor", q_tensor, "TensorFile to quantize")->required();
  quantize->add_option("--role", q_role, "weight | input (selects width and block axis)")
      ->capture_default_str();
  add_format_flags(quantize, f);
  quantize->add_option("--out", f.out, "Output directory");

  // run / predict
  std::string r_net, r_input, r_config;
  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--net", r_net, "NetworkSpec JSON");
    cmd->add_option("--input", r_input, "Input TensorFile (Gaussian from --seed if omitted)");
    cmd->add_option("--config", r_config, "RunConfig JSON");
    cmd->add_option("--seed", f.seed, "Seed for generated weights and inputs")->capture_default_str();
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--threads", f.threads, "GEMM worker threads")->capture_default_str();
    cmd->add_option("--lw", f.lw, "Override weight mantissa bits for every conv layer");
    cmd->add_option("--li", f.li, "Override input mantissa bits for every conv layer");
    cmd->add_option("--scheme", f.scheme, "Override partition scheme for every conv layer");
    cmd->add_option("--round", f.round, "Override rounding mode for every conv layer");
  };
  auto* run = app.add_subcommand("run", "BFP forward pass with measured and predicted SNR per layer");
  add_run_flags(run);
  auto* predict = app.add_subcommand("predict", "Analytical SNR prediction per layer");
  add_run_flags(predict);

  // cost
  auto* cost = app.add_subcommand("cost", "Storage cost of the four partition schemes");
  std::int64_t M = 0, K = 0, N = 0;
  cost->add_option("--M", M, "Rows of W (output channels)")->required();
  cost->add_option("--K", K, "Reduction length")->required();
  cost->add_option("--N", N, "Columns of I (output pixels)")->required();
  cost->add_option("--lw", f.lw)->capture_default_str();
  cost->add_option("--li", f.li)->capture_default_str();
  cost->add_option("--le", f.le, "Block exponent bits")->capture_default_str();
  cost->add_option("--scheme", f.scheme, "Scheme to highlight")->capture_default_str();
  cost->add_option("--out", f.out, "Write JSON to this file instead of stdout");

  // gemm
  auto* gemm = app.add_subcommand("gemm", "Exact BFP matrix product of two rank-2 TensorFiles");
  std::string g_w, g_i;
  std::optional<int> g_acc;
  gemm->add_option("--w", g_w, "Weight matrix TensorFile")->required();
  gemm->add_option("--i", g_i, "Input matrix TensorFile")->required();
  gemm->add_option("--acc-bits", g_acc, "Check against this accumulator width instead of the plan's");
  gemm->add_option("--threads", f.threads)->capture_default_str();
  add_format_flags(gemm, f);
  gemm->add_option("--out", f.out, "Output directory");

  // histogram
  auto* histogram = app.add_subcommand("histogram", "Energy share per normalized-magnitude bin");
  std::string h_tensor;
  std::size_t bins = 20;
  double lo = 0.8, hi = 1.0;
  histogram->add_option("tensor", h_tensor, "TensorFile")->required();
  histogram->add_option("--bins", bins)->capture_default_str();
  histogram->add_option("--lo", lo)->capture_default_str();
  histogram->add_option("--hi", hi)->capture_default_str();
  histogram->add_option("--out", f.out, "Write CSV to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (quantize->parsed()) {
      QuantizeOptions o;
      o.tensor = q_tensor;
      o.out = f.out;
      if (q_role != "input" && q_role != "weight") throw UsageError("--role must be weight or input");
      o.role = q_role == "weight" ? MatrixRole::Weight : MatrixRole::Input;
      o.lw = f.lw;
      o.li = f.li;
      o.scheme = scheme_of(f);
      o.rounding = rounding_of(f);
      const auto r = quantize_command(o);
      std::cout << r.report["stats"].dump(2) << '\n';
    } else if (run->parsed() || predict->parsed()) {
      auto* cmd = run->parsed() ? run : predict;
      RunConfig cfg;
      if (!r_config.empty()) {
        const fs::path p(r_config);
        cfg = parse_run_config(read_json_file(p), p.parent_path());
      }
      if (!r_net.empty()) cfg.network = r_net;
      if (!r_input.empty()) cfg.input = fs::path(r_input);
      if (cmd->count("--seed")) cfg.seed = f.seed;
      if (!f.out.empty()) cfg.out = f.out;
      if (cmd->count("--threads")) cfg.threads = f.threads;
      if (cmd->count("--lw")) cfg.all_layers.lw = f.lw;
      if (cmd->count("--li")) cfg.all_layers.li = f.li;
      if (cmd->count("--scheme")) cfg.all_layers.scheme = scheme_of(f);
      if (cmd->count("--round")) cfg.all_layers.rounding = rounding_of(f);
      if (cfg.network.empty()) throw UsageError("--net or a config with \"network\" is required");
      if (cfg.threads == 0) throw UsageError("--threads must be >= 1");
      if (run->parsed()) {
        std::cout << run_command(cfg).report;
      } else {
        std::cout << predict_command(cfg);
      }
    } else if (cost->parsed()) {
      const auto j = cost_command(scheme_of(f), M, K, N, f.lw, f.li, f.le);
      if (f.out.empty()) std::cout << j.dump(2) << '\n';
      else write_text(f.out, j.dump(2) + "\n");
    } else if (gemm->parsed()) {
      GemmOptions o;
      o.weights = g_w;
      o.input = g_i;
      o.out = f.out;
      o.lw = f.lw;
      o.li = f.li;
      o.scheme = scheme_of(f);
      o.rounding = rounding_of(f);
      o.accumulator_bits = g_acc;
      o.threads = f.threads == 0 ? 1 : f.threads;
      const auto j = gemm_command(o);
      std::cout << j["plan"].dump(2) << '\n';
    } else if (histogram->parsed()) {
      const auto csv = histogram_command(h_tensor, bins, lo, hi);
      if (f.out.empty()) std::cout << csv;
      else write_text(f.out, csv);
    }
  } catch (const PlanViolation& e) {
    std::cerr << "plan violation: " << e.what() << '\n';
    return kExitPlanViolation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
