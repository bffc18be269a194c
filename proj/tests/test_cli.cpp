#include <gtest/gtest.h>

#include "json.hpp"

#include "bfpcnn/cli/commands.hpp"
#include "cli_util.hpp"

using namespace bfpcnn;
using cli_util::run;
using cli_util::slurp;
using cli_util::TempDir;
using nlohmann::json;

namespace {

const std::string kSamples = BFPCNN_SAMPLES_DIR;

std::string write_tensor(const TempDir& dir, const std::string& name, TensorData t) {
  const auto path = dir / name;
  write_tensor_file(path, t);
  return path;
}

std::vector<std::string> csv_column(const std::string& csv, std::size_t col) {
  std::vector<std::string> out;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t i = 0; i <= col; ++i) std::getline(ls, cell, ',');
    out.push_back(cell);
  }
  return out;
}

}  // namespace

TEST(CliQuantize, WorkedExampleInput) {
  TempDir dir("quantize");
  const auto t = write_tensor(dir, "i.bfpt", {{2, 2}, {1.25, 1.25, 2.5, 5.0}});
  const auto r = run({"quantize", t, "--role", "input", "--li", "3", "--round", "half-away",
                      "--out", dir / "q"});
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(slurp(dir / "q/quantized.json"));
  const auto& block = j["matrix"]["blocks"][0];
  EXPECT_EQ(block["exponent"], 2);
  EXPECT_EQ(block["mantissas"], json({1, 1, 3, 5}));
  EXPECT_EQ(to_matrix(read_tensor_file(dir / "q/dequantized.bfpt")).data(),
            (std::vector<double>{1.0, 1.0, 3.0, 5.0}));
}

TEST(CliQuantize, ZeroTensorReportsInf) {
  TempDir dir("quantize_zero");
  const auto t = write_tensor(dir, "z.bfpt", {{3, 3}, std::vector<double>(9, 0.0)});
  const auto r = run({"quantize", t, "--out", dir / "q"});
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(slurp(dir / "q/quantized.json"));
  EXPECT_EQ(j["stats"]["snr_db"], "inf");
  EXPECT_EQ(j["matrix"]["blocks"][0]["exponent"], -128);
  EXPECT_EQ(j["matrix"]["blocks"][0]["mantissas"], json(std::vector<int>(9, 0)));
}

TEST(CliQuantize, StatsEqualLibrary) {
  TempDir dir("quantize_stats");
  const auto t3 = gaussian_tensor({1, 12, 20}, 5);
  const auto t = write_tensor(dir, "g.bfpt", {{12, 20}, {t3.values().begin(), t3.values().end()}});
  const auto r = run({"quantize", t, "--role", "weight", "--lw", "5", "--scheme", "row-column",
                      "--out", dir / "q"});
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(slurp(dir / "q/quantized.json"));

  const auto m = to_matrix(read_tensor_file(t));
  const auto q = partition_matrix(m, MatrixRole::Weight, PartitionScheme::RowColumn, MantissaWidth(5),
                                  RoundingMode::RoundHalfAwayFromZero);
  const auto s = measure_quant_stats(m.values(), q.to_floats().values());
  EXPECT_EQ(j["stats"]["error_variance"].get<double>(), s.error_variance);
  EXPECT_EQ(j["stats"]["error_mean"].get<double>(), s.error_mean);
  EXPECT_EQ(j["stats"]["snr_db"].get<double>(), s.snr_db);
  EXPECT_EQ(j["matrix"]["blocks"].size(), 12u);
  EXPECT_EQ(json::parse(r.out), j["stats"]);
}

TEST(CliQuantize, Errors) {
  TempDir dir("quantize_err");
  const auto t = write_tensor(dir, "i.bfpt", {{2}, {1.0, 2.0}});
  EXPECT_EQ(run({"quantize", t, "--li", "0"}).exit_code, 2);
  EXPECT_EQ(run({"quantize", t, "--li", "53"}).exit_code, 2);
  EXPECT_EQ(run({"quantize", t, "--scheme", "diagonal"}).exit_code, 2);
  EXPECT_EQ(run({"quantize", t, "--round", "nearest-even"}).exit_code, 2);
  EXPECT_EQ(run({"quantize", t, "--role", "bias"}).exit_code, 2);
  EXPECT_EQ(run({"quantize"}).exit_code, 2);

  cli_util::TempDir junk("quantize_junk");
  {
    std::ofstream f(junk / "bad.bfpt", std::ios::binary);
    f << "BFPX1234";
  }
  const auto err = junk / "err.txt";
  EXPECT_EQ(run({"quantize", junk / "bad.bfpt"}, err).exit_code, 3);
  EXPECT_NE(slurp(err).find("at byte 3"), std::string::npos) << slurp(err);
  EXPECT_EQ(run({"quantize", junk / "missing.bfpt"}).exit_code, 3);
}

TEST(CliCost, PaperDimensions) {
  const auto r = run({"cost", "--M", "64", "--K", "9", "--N", "50176", "--lw", "7", "--li", "7"});
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["chosen"], "row-whole");
  std::map<std::string, json> by;
  for (const auto& s : j["schemes"]) by[s["scheme"]] = s;
  EXPECT_EQ(by["whole-whole"]["nbe"], 2);
  EXPECT_EQ(by["row-column"]["nbe"], 50240);
  EXPECT_EQ(by["row-whole"]["nbe"], 65);
  EXPECT_EQ(by["whole-column"]["nbe"], 50177);
  EXPECT_EQ(by["row-whole"]["avg_len_w"]["num"], 80);
  EXPECT_EQ(by["row-whole"]["avg_len_w"]["den"], 9);
  EXPECT_NEAR(by["row-whole"]["avg_len_w"]["value"].get<double>(), 8.889, 5e-4);
  EXPECT_TRUE(by["row-whole"]["chosen"].get<bool>());
  EXPECT_FALSE(by["row-column"]["chosen"].get<bool>());
}

TEST(CliCost, DegenerateAndErrors) {
  const auto r = run({"cost", "--M", "1", "--K", "1", "--N", "1", "--scheme", "whole-column"});
  ASSERT_EQ(r.exit_code, 0);
  for (const auto& s : json::parse(r.out)["schemes"]) EXPECT_EQ(s["nbe"], 2);
  EXPECT_EQ(run({"cost", "--M", "0", "--K", "1", "--N", "1"}).exit_code, 2);
  EXPECT_EQ(run({"cost", "--M", "1", "--K", "1"}).exit_code, 2);
  EXPECT_EQ(run({"cost", "--M", "1", "--K", "1", "--N", "1", "--le", "0"}).exit_code, 2);
}

TEST(CliHistogram, Examples) {
  TempDir dir("hist");
  const auto a = write_tensor(dir, "a.bfpt", {{2}, {1.0, -1.0}});
  auto r = run({"histogram", a, "--bins", "1", "--lo", "0", "--hi", "1"});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "bin_lo,bin_hi,energy_share\n0,1,1\n");

  const auto b = write_tensor(dir, "b.bfpt", {{2}, {0.5, 1.0}});
  r = run({"histogram", b, "--bins", "2", "--lo", "0", "--hi", "1"});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "bin_lo,bin_hi,energy_share\n0,0.5,0.2\n0.5,1,0.8\n");

  const auto g = gaussian_tensor({4, 16, 16}, 9);
  const auto c = write_tensor(dir, "c.bfpt", from_tensor3(g));
  r = run({"histogram", c, "--out", dir / "h.csv"});
  ASSERT_EQ(r.exit_code, 0);
  const auto rows = csv_column(slurp(dir / "h.csv"), 0);
  ASSERT_EQ(rows.size(), 20u);
  EXPECT_EQ(rows.front(), "0.8");

  const auto z = write_tensor(dir, "z.bfpt", {{2}, {0.0, 0.0}});
  EXPECT_EQ(run({"histogram", z}).exit_code, 3);
  EXPECT_EQ(run({"histogram", a, "--bins", "0"}).exit_code, 2);
  EXPECT_EQ(run({"histogram", a, "--lo", "1", "--hi", "0.5"}).exit_code, 2);
}

TEST(CliGemm, WorkedExample) {
  TempDir dir("gemm");
  const auto w = write_tensor(dir, "w.bfpt", {{1, 2}, {0.5, 1.25}});
  const auto i = write_tensor(dir, "i.bfpt", {{2, 2}, {1.25, 1.25, 2.5, 5.0}});
  const auto r = run({"gemm", "--w", w, "--i", i, "--lw", "3", "--li", "3", "--out", dir / "g"});
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(slurp(dir / "g/gemm.json"));
  EXPECT_EQ(j["accumulators"], json({17, 27}));
  EXPECT_EQ(j["scale_exponents"], json({-2, -2}));
  EXPECT_EQ(j["output"], json({4.25, 6.75}));
  EXPECT_EQ(j["plan"]["multiplier_bits"], 8);
  EXPECT_EQ(j["plan"]["accumulator_bits"], 9);
  EXPECT_EQ(to_matrix(read_tensor_file(dir / "g/product.bfpt")).data(), (std::vector<double>{4.25, 6.75}));
}

TEST(CliGemm, NarrowAccumulatorExitsWithPlanViolation) {
  TempDir dir("gemm_violation");
  const auto w = write_tensor(dir, "w.bfpt", {{1, 2}, {0.5, 1.25}});
  const auto i = write_tensor(dir, "i.bfpt", {{2, 2}, {1.25, 1.25, 2.5, 5.0}});
  const auto err = dir / "err.txt";
  EXPECT_EQ(run({"gemm", "--w", w, "--i", i, "--lw", "3", "--li", "3", "--acc-bits", "5"}, err).exit_code, 4);
  EXPECT_NE(slurp(err).find("accumulator overflow at entry (0, 0)"), std::string::npos) << slurp(err);
  EXPECT_EQ(run({"gemm", "--w", w, "--i", w}).exit_code, 3);  // 1x2 times 1x2
}

TEST(CliRun, IntegerNetAtFiftyTwoBitsIsNoiseless) {
  TempDir dir("run_exact");
  Tensor3 in(Shape3{1, 4, 4});
  for (std::size_t k = 0; k < 16; ++k) in.values()[k] = static_cast<double>(k);
  const auto input = write_tensor(dir, "in.bfpt", from_tensor3(in));
  const auto r = run({"run", "--net", kSamples + "/two_kernel.json", "--input", input, "--lw", "52",
                      "--li", "52", "--out", dir / "o"});
  ASSERT_EQ(r.exit_code, 0);
  const auto csv = slurp(dir / "o/taps.csv");
  for (const auto& v : csv_column(csv, 3)) EXPECT_EQ(v, "inf");
  EXPECT_EQ(csv_column(csv, 2), (std::vector<std::string>{"input", "weight", "output", "relu"}));
  EXPECT_EQ(slurp(dir / "o/report.txt"), r.out);
}

TEST(CliRun, CsvEqualsLibrary) {
  TempDir dir("run_lib");
  const auto r = run({"run", "--config", kSamples + "/gaussian3_config.json", "--out", dir / "o"});
  ASSERT_EQ(r.exit_code, 0);
  cli::RunConfig cfg = cli::parse_run_config(cli::read_json_file(kSamples + "/gaussian3_config.json"),
                                             kSamples);
  EXPECT_EQ(slurp(dir / "o/taps.csv"), cli::run_command(cfg).taps_csv);
  // conv rows: input, weight, output; relu and pool one row each.
  EXPECT_EQ(csv_column(slurp(dir / "o/taps.csv"), 0).size(), 3u * 3 + 3 + 1);
}

TEST(CliRun, DeterministicAcrossRerunsAndThreads) {
  TempDir dir("run_det");
  const std::string net = kSamples + "/gaussian3.json";
  std::vector<std::string> outputs;
  for (const auto& threads : {"1", "1", "1", "4", "9"}) {
    const auto out = dir / ("o" + std::to_string(outputs.size()));
    ASSERT_EQ(run({"run", "--net", net, "--seed", "11", "--threads", threads, "--out", out}).exit_code, 0);
    outputs.push_back(slurp(out + "/taps.csv"));
  }
  for (const auto& o : outputs) EXPECT_EQ(o, outputs.front());
  ASSERT_EQ(run({"run", "--net", net, "--seed", "12", "--out", dir / "other"}).exit_code, 0);
  EXPECT_NE(slurp(dir / "other/taps.csv"), outputs.front());
}

TEST(CliRun, Errors) {
  TempDir dir("run_err");
  EXPECT_EQ(run({"run"}).exit_code, 2);
  EXPECT_EQ(run({"run", "--net", kSamples + "/gaussian3.json", "--lw", "99"}).exit_code, 2);
  EXPECT_EQ(run({"run", "--net", kSamples + "/gaussian3.json", "--threads", "0"}).exit_code, 2);
  EXPECT_EQ(run({"run", "--net", dir / "missing.json"}).exit_code, 3);
  const auto bad_input = write_tensor(dir, "in.bfpt", {{1, 3, 3}, std::vector<double>(9, 1.0)});
  EXPECT_EQ(run({"run", "--net", kSamples + "/two_kernel.json", "--input", bad_input}).exit_code, 3);
}

TEST(CliPredict, MatchesLibraryPrediction) {
  TempDir dir("predict");
  const auto r = run({"predict", "--net", kSamples + "/gaussian3.json", "--seed", "3", "--out", dir / "p"});
  ASSERT_EQ(r.exit_code, 0);
  cli::RunConfig cfg;
  cfg.network = kSamples + "/gaussian3.json";
  cfg.seed = 3;
  EXPECT_EQ(slurp(dir / "p/predict.csv"), cli::predict_command(cfg));
  EXPECT_EQ(r.out, cli::predict_command(cfg));
}
