#pragma once

#include <winmix/autograd.hpp>
#include <winmix/tensor.hpp>

#include <cstddef>
#include <utility>

namespace winmix {

/// Extents of a channels-last feature map [batch, height, width, channels].
struct GridShape {
  std::size_t batch = 1, height = 1, width = 1, channels = 1;

  Shape shape() const { return {batch, height, width, channels}; }
  static GridShape of(const Shape &s);
  bool operator==(const GridShape &) const = default;
};

/// Zero padding appended at the bottom/right edges.
struct PadRecord {
  std::size_t height = 0, width = 0; // extents before padding
  std::size_t pad_h = 0, pad_w = 0;
};

/// Bookkeeping to undo a window partition.
struct WindowOrigin {
  std::size_t batch = 1;
  std::size_t grid_h = 1, grid_w = 1; // windows per axis
  std::size_t window = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

template <typename T> struct WindowSet {
  Tensor<T> windows; // [num_windows, ws*ws, channels]
  WindowOrigin origin;
};

/// Messenger tokens attached to each window, plus the window grid they live
/// on so that exchange knows which windows are neighbours.
template <typename T> struct MessengerState {
  Tensor<T> tokens; // [num_windows, m, channels]
  std::size_t batch = 1, grid_h = 1, grid_w = 1;
  std::size_t region = 2;
};

std::size_t round_up(std::size_t value, std::size_t multiple);

// Index maps. Each one is a pure function of its arguments and describes
// a permutation, possibly with zero fill.

IndexMap pad_map(const GridShape &in, std::size_t pad_h, std::size_t pad_w);
IndexMap crop_map(const GridShape &padded, std::size_t height, std::size_t width);
/// [B, H, W, C] -> [B * H/ws * W/ws, ws*ws, C], windows and tokens row-major.
IndexMap partition_map(const GridShape &in, std::size_t ws);
/// torus roll: output (h + dy, w + dx) takes input (h, w).
IndexMap shift_map(const GridShape &in, long dy, long dx);
/// Token (a*(H/ws)+b, c*(W/ws)+d) moves to (b*ws+a, d*ws+c).
IndexMap shuffle_map(const GridShape &in, std::size_t ws);
/// Transposes (window-in-region, channel-group) within every r x r region of
/// windows, for tokens laid out [B * gh * gw, m, C].
IndexMap exchange_map(std::size_t batch, std::size_t grid_h, std::size_t grid_w, std::size_t messengers,
                      std::size_t channels, std::size_t region);

// Tensor-level operations.

template <typename T> std::pair<Tensor<T>, PadRecord> pad_to_multiple(const Tensor<T> &x, std::size_t ws);
template <typename T> Tensor<T> crop(const Tensor<T> &x, const PadRecord &pad);
template <typename T> WindowSet<T> window_partition(const Tensor<T> &x, std::size_t ws, const PadRecord &pad = {});
template <typename T> Tensor<T> window_reverse(const WindowSet<T> &w);
template <typename T> Tensor<T> cyclic_shift(const Tensor<T> &x, long dy, long dx);
template <typename T> Tensor<T> spatial_shuffle(const Tensor<T> &x, std::size_t ws);
template <typename T> Tensor<T> spatial_unshuffle(const Tensor<T> &x, std::size_t ws);

/// [nW, ws*ws, C] + [nW, m, C] -> [nW, ws*ws + m, C].
template <typename T> Tensor<T> messenger_attach(const WindowSet<T> &w, const MessengerState<T> &m);
/// Splits attached tokens back into (window tokens, messenger tokens).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> messenger_detach(const Tensor<T> &attached, std::size_t window_tokens);
template <typename T> MessengerState<T> messenger_exchange(const MessengerState<T> &m);
template <typename T> MessengerState<T> messenger_unexchange(const MessengerState<T> &m);

} // namespace winmix
