#pragma once

#include <winmix/autograd.hpp>
#include <winmix/params.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace winmix {

/// Intra-window content aggregation layer.
enum class AggregatorKind { mhsa, linear, dw_linear, mlp };

/// How the width branch of the axial maps reads its input. `symmetric` mixes
/// (group channel, width) per row, mirroring the height branch. `faithful`
/// reproduces the literal row-major reinterpretation of a group's
/// (channel, token) buffer into rows of gs*ws consecutive elements.
enum class AxialLayout { symmetric, faithful };

std::string to_string(AggregatorKind kind);
AggregatorKind parse_aggregator(const std::string &name);
std::string to_string(AxialLayout layout);
AxialLayout parse_layout(const std::string &name);

struct AggregatorSpec {
  AggregatorKind kind = AggregatorKind::linear;
  std::size_t channels = 1;
  std::size_t window = 1;
  std::size_t group_size = 1; // channels per group (axial kinds)
  std::size_t heads = 1;      // mhsa
  std::size_t mlp_ratio = 4;  // mlp hidden expansion over gs*ws
  std::size_t messengers = 0; // extra tokens appended after the ws*ws window tokens
  AxialLayout layout = AxialLayout::symmetric;

  std::size_t groups() const { return channels / group_size; }
  std::size_t axial_width() const { return group_size * window; }
  std::size_t window_tokens() const { return window * window; }
  std::size_t tokens() const { return window * window + messengers; }

  /// Throws ConfigError when a divisibility constraint of the kind fails.
  void validate() const;
};

/// Parameter names, shapes and init rules in canonical order.
std::vector<ParamShape> aggregator_param_shapes(const AggregatorSpec &spec);

/// Truncated-normal(0.02) weights, zero biases and zero position-bias
/// table; identical output for identical seeds.
template <typename T> ParamTable<T> init_aggregator(const AggregatorSpec &spec, std::uint64_t seed);

/// Aggregates every window of token-major input [num_windows, tokens, C].
/// `params` follows aggregator_param_shapes order.
template <typename T> Var<T> aggregate(const AggregatorSpec &spec, std::span<const Var<T>> params, const Var<T> &x);

// Typed parameter views of the four kinds.

template <typename T> struct LinMapperParams {
  Tensor<T> w_h, b_h; // [n, n], [n] with n = gs*ws
  Tensor<T> w_w, b_w;
  Tensor<T> w_p, b_p; // [C, C], [C]
  ParamTable<T> table() const;
};

/// Same fields as LinMapperParams with one axial map per group:
/// w_* of shape [C/gs, n, n] and b_* of shape [C/gs, n].
template <typename T> struct DWLinMapperParams : LinMapperParams<T> {};

template <typename T> struct WindowMlpParams {
  Tensor<T> h_w1, h_b1, h_w2, h_b2; // [rho*n, n], [rho*n], [n, rho*n], [n]
  Tensor<T> w_w1, w_b1, w_w2, w_b2;
  Tensor<T> w_p, b_p;
  ParamTable<T> table() const;
};

template <typename T> struct WindowMhsaParams {
  Tensor<T> w_qkv, b_qkv; // [3C, C], [3C]
  Tensor<T> w_o, b_o;     // [C, C], [C]
  Tensor<T> rel_bias;     // [(2ws-1)^2, heads]
  ParamTable<T> table() const;
};

// Standalone forward passes on channel-major windows [B, C, ws*ws] (axial
// kinds) or token-major windows [B, ws*ws, C] (mhsa).

template <typename T>
Tensor<T> linmapper_forward(const Tensor<T> &x, const LinMapperParams<T> &p, std::size_t window,
                            std::size_t group_size, AxialLayout layout = AxialLayout::symmetric);
template <typename T>
Tensor<T> dw_linmapper_forward(const Tensor<T> &x, const DWLinMapperParams<T> &p, std::size_t window,
                               std::size_t group_size, AxialLayout layout = AxialLayout::symmetric);
template <typename T>
Tensor<T> window_mlp_forward(const Tensor<T> &x, const WindowMlpParams<T> &p, std::size_t window,
                             std::size_t group_size, AxialLayout layout = AxialLayout::symmetric);
template <typename T>
Tensor<T> window_mhsa_forward(const Tensor<T> &x, const WindowMhsaParams<T> &p, std::size_t window,
                              std::size_t heads);

/// Index maps used by the axial kinds: gather [B, tokens, C] into rows of
/// length gs*ws laid out [groups, B * ws, gs*ws].
IndexMap axial_height_map(std::size_t batch, const AggregatorSpec &spec);
IndexMap axial_width_map(std::size_t batch, const AggregatorSpec &spec);

/// Adjoint placement of an injective gather: maps the gathered layout back
/// onto the source layout, leaving never-read source elements zero.
IndexMap scatter_back(const IndexMap &map);

} // namespace winmix
