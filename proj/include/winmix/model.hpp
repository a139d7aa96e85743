#pragma once

#include <winmix/config.hpp>
#include <winmix/geometry.hpp>

#include <optional>

namespace winmix {

/// Every trainable tensor of a config, in forward-consumption order:
/// stem, then per stage (messengers, blocks), merges between stages, head.
std::vector<ParamShape> model_param_shapes(const ModelConfig &cfg);

/// Index of `name` in model_param_shapes order; throws if absent.
std::size_t param_index(const std::vector<ParamShape> &shapes, const std::string &name);

template <typename T> struct Model {
  ModelConfig config;
  ParamTable<T> params;
};

/// Deterministic per seed. Throws ConfigError on an invalid config.
template <typename T> Model<T> build_model(const ModelConfig &cfg, std::uint64_t seed);

/// Hands out parameters in model_param_shapes order.
template <typename T> class ParamCursor {
public:
  explicit ParamCursor(std::span<const Var<T>> params, std::size_t start = 0) : params_(params), pos_(start) {}
  const Var<T> &next() {
    if (pos_ >= params_.size())
      throw DimensionError("model consumed more parameters than were supplied");
    return params_[pos_++];
  }
  std::span<const Var<T>> take(std::size_t n) {
    if (pos_ + n > params_.size())
      throw DimensionError("model consumed more parameters than were supplied");
    auto s = params_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

private:
  std::span<const Var<T>> params_;
  std::size_t pos_;
};

/// Token grid [B, H, W, C] plus the messengers of its windows, if any.
template <typename T> struct BlockState {
  Var<T> x;
  std::optional<Var<T>> messengers; // [B * windows, m, C]
};

/// images [B, H, W, in_chans] -> tokens [B, ceil(H/patch), ceil(W/patch), width].
template <typename T> Var<T> stem_forward(const ModelConfig &cfg, ParamCursor<T> &params, const Var<T> &images);

/// One block: pad, comm on odd `index`, partition, attach messengers,
/// norm/aggregate/residual, norm/ffn/residual, detach, reverse, undo comm, crop.
template <typename T>
BlockState<T> block_forward(const ModelConfig &cfg, std::size_t stage, std::size_t index, ParamCursor<T> &params,
                            BlockState<T> state);

/// All blocks of a stage, including the stage's messenger parameters.
template <typename T> Var<T> stage_forward(const ModelConfig &cfg, std::size_t stage, ParamCursor<T> &params, const Var<T> &x);

/// 2x2 neighbourhood concat, layer norm and linear 4C -> 2C.
template <typename T> Var<T> merge_forward(const ModelConfig &cfg, std::size_t stage, ParamCursor<T> &params, const Var<T> &x);

/// Final norm, mean over tokens, linear classifier.
template <typename T> Var<T> head_forward(const ModelConfig &cfg, ParamCursor<T> &params, const Var<T> &x);

/// Logits [B, classes]; `params` follows model_param_shapes order.
template <typename T>
Var<T> model_forward(const ModelConfig &cfg, std::span<const Var<T>> params, const Var<T> &images);

/// Eager convenience wrapper.
template <typename T> Tensor<T> forward(const Model<T> &model, const Tensor<T> &images);

/// Maps used by the blocks, exposed for tests and the connectivity analysis.
/// Entry: [B, H, W, C] -> windows [B * nW, ws*ws, C]; exit is its reverse.
IndexMap block_entry_map(const ModelConfig &cfg, std::size_t index, std::size_t batch, std::size_t height,
                         std::size_t width, std::size_t channels);
IndexMap block_exit_map(const ModelConfig &cfg, std::size_t index, std::size_t batch, std::size_t height,
                        std::size_t width, std::size_t channels);
/// Image [B, H, W, c] -> patches [B, H/p, W/p, p*p*c] ordered (kh, kw, c).
IndexMap patchify_map(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels,
                      std::size_t patch);
/// [B, H, W, C] -> [B, H/2, W/2, 4C] ordered (0,0), (1,0), (0,1), (1,1).
IndexMap merge_map(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels);

} // namespace winmix
