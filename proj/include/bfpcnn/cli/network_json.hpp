/**
 * NetworkSpec JSON.
 *
 *   {
 *     "input": [C, H, W],
 *     "layers": [
 *       {"type": "conv", "name": "conv1", "out_channels": 8, "kernel": 3,
 *        "stride": 1, "pad": 1, "weights": [...],          // optional
 *        "lw": 8, "li": 8, "scheme": "row-whole", "round": "half-away"},
 *       {"type": "relu"},
 *       {"type": "maxpool", "window": 2, "stride": 2}
 *     ]
 *   }
 *
 * "kernel" is an integer or [kh, kw]. Conv layers without "weights" draw
 * unit-variance Gaussian weights from the run seed, in layer order.
 */
#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include "bfpcnn/netsim.hpp"

namespace bfpcnn::cli {

/// Invalid command-line or configuration values (exit code 2).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline MantissaWidth checked_width(int bits, const std::string& what) {
  if (bits < MantissaWidth::kMin || bits > MantissaWidth::kMax) {
    throw UsageError(what + " must be in [1, 52] mantissa bits (sign excluded), got " +
                     std::to_string(bits));
  }
  return MantissaWidth(bits);
}

struct LayerOverride {
  std::optional<int> lw, li;
  std::optional<PartitionScheme> scheme;
  std::optional<RoundingMode> rounding;

  void apply(ConvLayer& conv) const {
    if (lw) conv.lw = checked_width(*lw, "lw");
    if (li) conv.li = checked_width(*li, "li");
    if (scheme) conv.scheme = *scheme;
    if (rounding) conv.rounding = *rounding;
  }
};

inline LayerOverride parse_override(const nlohmann::json& j) {
  LayerOverride o;
  if (j.contains("lw")) o.lw = j.at("lw").get<int>();
  if (j.contains("li")) o.li = j.at("li").get<int>();
  try {
    if (j.contains("scheme")) o.scheme = parse_scheme(j.at("scheme").get<std::string>());
    if (j.contains("round")) o.rounding = parse_rounding_mode(j.at("round").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return o;
}

inline NetworkSpec parse_network(const nlohmann::json& j, std::uint64_t seed) {
  NetworkSpec net;
  const auto& in = j.at("input");
  if (!in.is_array() || in.size() != 3) throw std::domain_error("\"input\" must be [C, H, W]");
  net.input_shape = {in[0].get<std::size_t>(), in[1].get<std::size_t>(), in[2].get<std::size_t>()};

  std::mt19937_64 rng(seed);
  std::size_t channels = net.input_shape.channels;
  std::map<std::string, int> counters;
  for (const auto& lj : j.at("layers")) {
    const auto type = lj.at("type").get<std::string>();
    const auto name = lj.value("name", type + std::to_string(++counters[type]));
    if (type == "conv") {
      ConvLayer c;
      c.out_channels = lj.at("out_channels").get<std::size_t>();
      const auto& k = lj.at("kernel");
      if (k.is_array()) {
        c.geometry.kernel_h = k.at(0).get<std::size_t>();
        c.geometry.kernel_w = k.at(1).get<std::size_t>();
      } else {
        c.geometry.kernel_h = c.geometry.kernel_w = k.get<std::size_t>();
      }
      c.geometry.stride = lj.value("stride", std::size_t{1});
      c.geometry.pad = lj.value("pad", std::size_t{0});
      const std::size_t count = c.out_channels * channels * c.geometry.kernel_h * c.geometry.kernel_w;
      if (lj.contains("weights")) {
        c.weights = lj.at("weights").get<std::vector<double>>();
      } else {
        c.weights = gaussian_values(count, rng);
      }
      parse_override(lj).apply(c);
      net.layers.push_back({name, c});
      channels = c.out_channels;
    } else if (type == "relu") {
      net.layers.push_back({name, ReluLayer{}});
    } else if (type == "maxpool") {
      MaxPoolLayer p;
      p.window = lj.value("window", std::size_t{2});
      p.stride = lj.value("stride", std::size_t{2});
      net.layers.push_back({name, p});
    } else {
      throw std::domain_error("unknown layer type '" + type + "'");
    }
  }
  validate(net);
  return net;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(f);
}

}  // namespace bfpcnn::cli
