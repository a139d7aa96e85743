#pragma once

#include <winmix/model.hpp>

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace winmix {

struct CostRow {
  std::string path;
  std::uint64_t params = 0;
  std::uint64_t flops = 0; // multiply-accumulates
};

struct CostReport {
  std::string model;
  std::size_t height = 0, width = 0; // input resolution of the flop column
  std::vector<CostRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
};

/// Closed-form parameter count of each layer; no model is instantiated.
CostReport count_params(const ModelConfig &cfg);

/// Closed-form multiply-accumulate count at batch 1. Norms, softmax, GELU,
/// additions, means and the attention scale are not counted; permutations
/// and padding cost nothing. Also fills the parameter column.
CostReport count_flops(const ModelConfig &cfg, std::size_t height, std::size_t width);

/// Multiplies counted by running the scalar reference forward on one image.
/// Meant for desk-scale configs.
std::uint64_t flops_oracle(const ModelConfig &cfg, std::size_t height, std::size_t width);

nlohmann::json to_json(const CostReport &report);
std::string to_table(const CostReport &report);

struct ThroughputReport {
  std::size_t batch = 0, repeats = 0;
  double median_images_per_second = 0;
  double iqr_images_per_second = 0;
  std::vector<double> samples; // images per second, one per repeat
};

/// Warmup pass, then `repeats` timed forward passes on a fixed batch.
ThroughputReport bench_throughput(const Model<float> &model, std::size_t batch, std::size_t repeats,
                                  std::size_t height, std::size_t width);

nlohmann::json to_json(const ThroughputReport &report);

} // namespace winmix
