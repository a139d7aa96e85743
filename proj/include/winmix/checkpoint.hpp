#pragma once

#include <winmix/config.hpp>
#include <winmix/params.hpp>

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace winmix {

/// One tensor of a checkpoint, kept as raw little-endian bytes so a
/// load/save cycle never converts values.
struct TensorRecord {
  std::string name;
  DType dtype = DType::float32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  template <typename T> static TensorRecord from(std::string name, const Tensor<T> &t);
  /// Throws DimensionError if the stored dtype is not T.
  template <typename T> Tensor<T> to() const;
  bool operator==(const TensorRecord &) const = default;
};

/// WMIX file: magic "WMIX", u32 version, u32 header length, header JSON
/// {"config": ..., "state": ...}, then per tensor: u32 name length, name,
/// u8 dtype, u8 rank, u64 dims[rank], raw data.
struct Checkpoint {
  ModelConfig config;
  nlohmann::json state = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord &find(const std::string &name) const;
};

inline constexpr std::uint32_t checkpoint_version = 1;

void save_checkpoint(const std::string &path, const Checkpoint &ckpt);
/// Throws std::runtime_error on a malformed or truncated file.
Checkpoint load_checkpoint(const std::string &path);

template <typename T> void append_params(Checkpoint &ckpt, const ParamTable<T> &table, const std::string &prefix = "");
/// Reads tensors named prefix + name for every entry of `shapes`.
template <typename T>
ParamTable<T> read_params(const Checkpoint &ckpt, const std::vector<ParamShape> &shapes, const std::string &prefix = "");

} // namespace winmix
