#pragma once

#include <winmix/aggregators.hpp>

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace winmix {

/// Cross-window communication applied on odd-indexed blocks of a stage.
enum class CommKind { none, shift, shuffle, msg };

std::string to_string(CommKind kind);
CommKind parse_comm(const std::string &name);

struct ModelConfig {
  std::string name = "custom";
  std::size_t width = 96;
  std::array<std::size_t, 4> depths{2, 2, 6, 2};
  std::size_t window = 7;
  AggregatorKind aggregator = AggregatorKind::linear;
  CommKind comm = CommKind::shift;
  std::size_t ffn_ratio = 4;
  std::size_t classes = 1000;
  std::size_t groups = 32;   // target #Groups per stage for the axial kinds
  std::size_t head_dim = 32; // mhsa heads = max(1, C_stage / head_dim)
  std::size_t mlp_ratio = 4;
  std::size_t messengers = 1;
  std::size_t region = 2;
  AxialLayout layout = AxialLayout::symmetric;
  std::size_t patch = 4;
  std::size_t in_chans = 3;
  std::size_t image_size = 224;

  std::size_t stage_channels(std::size_t stage) const { return width << stage; }
  /// Largest divisor of the stage's channels that does not exceed `groups`.
  std::size_t stage_groups(std::size_t stage) const;
  std::size_t group_size(std::size_t stage) const { return stage_channels(stage) / stage_groups(stage); }
  std::size_t heads(std::size_t stage) const;
  std::size_t stage_messengers() const { return comm == CommKind::msg ? messengers : 0; }
  std::size_t total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }
  AggregatorSpec aggregator_spec(std::size_t stage) const;

  /// Throws ConfigError naming the offending field. Zero-depth stages are
  /// rejected unless `allow_empty_stages`.
  void validate(bool allow_empty_stages = false) const;
};

/// Token grid extents after the stem and after each merge, for a square or
/// rectangular input.
struct StageGrid {
  std::size_t height, width;
};
std::array<StageGrid, 4> stage_grids(const ModelConfig &cfg, std::size_t image_h, std::size_t image_w);

/// Padding and messenger region used by every block of a stage.
struct BlockGeometry {
  std::size_t height, width; // unpadded token grid
  std::size_t padded_h, padded_w;
  std::size_t window;
  std::size_t region; // effective messenger exchange region
  std::size_t windows_h() const { return padded_h / window; }
  std::size_t windows_w() const { return padded_w / window; }
};
BlockGeometry block_geometry(const ModelConfig &cfg, std::size_t height, std::size_t width);

void to_json(nlohmann::json &j, const ModelConfig &cfg);
void from_json(const nlohmann::json &j, ModelConfig &cfg);

std::vector<std::string> preset_names();
/// Throws ConfigError listing the available names when `name` is unknown.
ModelConfig preset(const std::string &name);
/// A preset name or a path to a JSON config file.
ModelConfig load_config(const std::string &preset_or_path);

} // namespace winmix
