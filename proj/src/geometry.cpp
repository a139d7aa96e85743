#include <winmix/geometry.hpp>

namespace winmix {

GridShape GridShape::of(const Shape &s) {
  if (s.size() != 4)
    throw DimensionError("feature map must be [batch, height, width, channels], got " + to_string(s));
  return {s[0], s[1], s[2], s[3]};
}

std::size_t round_up(std::size_t value, std::size_t multiple) {
  return (value + multiple - 1) / multiple * multiple;
}

namespace {

void require_divisible(const GridShape &g, std::size_t ws, const char *op) {
  if (ws == 0 || g.height % ws != 0 || g.width % ws != 0)
    throw DimensionError(std::string(op) + ": grid " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                         " is not divisible by window size " + std::to_string(ws));
}

std::int64_t flat(const GridShape &g, std::size_t b, std::size_t h, std::size_t w) {
  return static_cast<std::int64_t>(((b * g.height + h) * g.width + w) * g.channels);
}

// Builds a token-level map: `src(b, h, w)` gives the source token of output
// token (b, h, w), or -1 for zero fill.
template <typename F> IndexMap token_map(const GridShape &in, const GridShape &out, F &&src) {
  IndexMap m{in.shape(), out.shape(), std::vector<std::int64_t>(numel(out.shape()))};
  std::size_t i = 0;
  for (std::size_t b = 0; b < out.batch; ++b)
    for (std::size_t h = 0; h < out.height; ++h)
      for (std::size_t w = 0; w < out.width; ++w) {
        const std::int64_t s = src(b, h, w);
        for (std::size_t c = 0; c < out.channels; ++c)
          m.source[i++] = s < 0 ? -1 : s + static_cast<std::int64_t>(c);
      }
  return m;
}

} // namespace

IndexMap pad_map(const GridShape &in, std::size_t pad_h, std::size_t pad_w) {
  GridShape out = in;
  out.height += pad_h;
  out.width += pad_w;
  return token_map(in, out, [&](std::size_t b, std::size_t h, std::size_t w) -> std::int64_t {
    return h < in.height && w < in.width ? flat(in, b, h, w) : -1;
  });
}

IndexMap crop_map(const GridShape &padded, std::size_t height, std::size_t width) {
  if (height > padded.height || width > padded.width)
    throw DimensionError("crop extents exceed the padded grid");
  GridShape out = padded;
  out.height = height;
  out.width = width;
  return token_map(padded, out, [&](std::size_t b, std::size_t h, std::size_t w) { return flat(padded, b, h, w); });
}

IndexMap partition_map(const GridShape &in, std::size_t ws) {
  require_divisible(in, ws, "window_partition");
  const std::size_t gh = in.height / ws, gw = in.width / ws;
  IndexMap m{in.shape(), {in.batch * gh * gw, ws * ws, in.channels}, {}};
  m.source.resize(numel(m.out_shape));
  std::size_t i = 0;
  for (std::size_t b = 0; b < in.batch; ++b)
    for (std::size_t wy = 0; wy < gh; ++wy)
      for (std::size_t wx = 0; wx < gw; ++wx)
        for (std::size_t ty = 0; ty < ws; ++ty)
          for (std::size_t tx = 0; tx < ws; ++tx) {
            const std::int64_t s = flat(in, b, wy * ws + ty, wx * ws + tx);
            for (std::size_t c = 0; c < in.channels; ++c)
              m.source[i++] = s + static_cast<std::int64_t>(c);
          }
  return m;
}

IndexMap shift_map(const GridShape &in, long dy, long dx) {
  const long H = static_cast<long>(in.height), W = static_cast<long>(in.width);
  auto wrap = [](long v, long n) { return static_cast<std::size_t>(((v % n) + n) % n); };
  return token_map(in, in, [&](std::size_t b, std::size_t h, std::size_t w) {
    return flat(in, b, wrap(static_cast<long>(h) - dy, H), wrap(static_cast<long>(w) - dx, W));
  });
}

IndexMap shuffle_map(const GridShape &in, std::size_t ws) {
  require_divisible(in, ws, "spatial_shuffle");
  const std::size_t sh = in.height / ws, sw = in.width / ws;
  // Output (b*ws + a, d*ws + c) reads input (a*sh + b, c*sw + d).
  return token_map(in, in, [&](std::size_t bt, std::size_t h, std::size_t w) {
    const std::size_t a = h % ws, b = h / ws, c = w % ws, d = w / ws;
    return flat(in, bt, a * sh + b, c * sw + d);
  });
}

IndexMap exchange_map(std::size_t batch, std::size_t grid_h, std::size_t grid_w, std::size_t messengers,
                      std::size_t channels, std::size_t region) {
  if (region == 0 || grid_h % region != 0 || grid_w % region != 0)
    throw DimensionError("messenger exchange: window grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                         " is not divisible by region " + std::to_string(region));
  const std::size_t groups = region * region;
  if (channels % groups != 0)
    throw DimensionError("messenger exchange: " + std::to_string(channels) + " channels cannot be split into " +
                         std::to_string(groups) + " groups");
  const std::size_t gsz = channels / groups;
  const Shape shape{batch * grid_h * grid_w, messengers, channels};
  IndexMap m{shape, shape, std::vector<std::int64_t>(numel(shape))};
  auto window_index = [&](std::size_t b, std::size_t wy, std::size_t wx) { return (b * grid_h + wy) * grid_w + wx; };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t wy = 0; wy < grid_h; ++wy)
      for (std::size_t wx = 0; wx < grid_w; ++wx) {
        const std::size_t ry = wy / region, rx = wx / region;
        const std::size_t q = (wy % region) * region + (wx % region);
        const std::size_t dst_window = window_index(b, wy, wx);
        for (std::size_t p = 0; p < groups; ++p) {
          const std::size_t src_window = window_index(b, ry * region + p / region, rx * region + p % region);
          for (std::size_t k = 0; k < messengers; ++k)
            for (std::size_t e = 0; e < gsz; ++e) {
              const std::size_t dst = (dst_window * messengers + k) * channels + p * gsz + e;
              const std::size_t src = (src_window * messengers + k) * channels + q * gsz + e;
              m.source[dst] = static_cast<std::int64_t>(src);
            }
        }
      }
  return m;
}

template <typename T> std::pair<Tensor<T>, PadRecord> pad_to_multiple(const Tensor<T> &x, std::size_t ws) {
  if (ws == 0)
    throw DimensionError("pad_to_multiple: window size must be positive");
  const GridShape g = GridShape::of(x.shape());
  PadRecord rec{g.height, g.width, round_up(g.height, ws) - g.height, round_up(g.width, ws) - g.width};
  if (rec.pad_h == 0 && rec.pad_w == 0)
    return {x, rec};
  return {gather(x, pad_map(g, rec.pad_h, rec.pad_w)), rec};
}

template <typename T> Tensor<T> crop(const Tensor<T> &x, const PadRecord &pad) {
  if (pad.pad_h == 0 && pad.pad_w == 0)
    return x;
  return gather(x, crop_map(GridShape::of(x.shape()), pad.height, pad.width));
}

template <typename T> WindowSet<T> window_partition(const Tensor<T> &x, std::size_t ws, const PadRecord &pad) {
  const GridShape g = GridShape::of(x.shape());
  WindowSet<T> out{gather(x, partition_map(g, ws)), {g.batch, g.height / ws, g.width / ws, ws, pad.pad_h, pad.pad_w}};
  return out;
}

template <typename T> Tensor<T> window_reverse(const WindowSet<T> &w) {
  const auto &o = w.origin;
  const Shape &s = w.windows.shape();
  if (s.size() != 3 || s[0] != o.batch * o.grid_h * o.grid_w || s[1] != o.window * o.window)
    throw DimensionError("window_reverse: windows " + to_string(s) + " inconsistent with origin record");
  const GridShape g{o.batch, o.grid_h * o.window, o.grid_w * o.window, s[2]};
  if (o.pad_h >= g.height || o.pad_w >= g.width)
    throw DimensionError("window_reverse: padding exceeds the grid");
  Tensor<T> grid = gather(w.windows, invert(partition_map(g, o.window)));
  return crop(grid, PadRecord{g.height - o.pad_h, g.width - o.pad_w, o.pad_h, o.pad_w});
}

template <typename T> Tensor<T> cyclic_shift(const Tensor<T> &x, long dy, long dx) {
  return gather(x, shift_map(GridShape::of(x.shape()), dy, dx));
}

template <typename T> Tensor<T> spatial_shuffle(const Tensor<T> &x, std::size_t ws) {
  return gather(x, shuffle_map(GridShape::of(x.shape()), ws));
}

template <typename T> Tensor<T> spatial_unshuffle(const Tensor<T> &x, std::size_t ws) {
  return gather(x, invert(shuffle_map(GridShape::of(x.shape()), ws)));
}

template <typename T> Tensor<T> messenger_attach(const WindowSet<T> &w, const MessengerState<T> &m) {
  const Shape &ws = w.windows.shape(), &ms = m.tokens.shape();
  if (ms.size() != 3 || ms[0] != ws[0] || ms[2] != ws[2])
    throw DimensionError("messenger_attach: messengers " + to_string(ms) + " do not match windows " + to_string(ws));
  return concat(w.windows, m.tokens, 1);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> messenger_detach(const Tensor<T> &attached, std::size_t window_tokens) {
  if (attached.rank() != 3 || attached.dim(1) <= window_tokens)
    throw DimensionError("messenger_detach: " + to_string(attached.shape()) + " holds no messenger tokens");
  return {slice(attached, 1, 0, window_tokens), slice(attached, 1, window_tokens, attached.dim(1) - window_tokens)};
}

namespace {

template <typename T> IndexMap exchange_map_for(const MessengerState<T> &m) {
  const Shape &s = m.tokens.shape();
  if (s.size() != 3 || s[0] != m.batch * m.grid_h * m.grid_w)
    throw DimensionError("messenger state " + to_string(s) + " does not match its window grid");
  return exchange_map(m.batch, m.grid_h, m.grid_w, s[1], s[2], m.region);
}

} // namespace

template <typename T> MessengerState<T> messenger_exchange(const MessengerState<T> &m) {
  MessengerState<T> out = m;
  out.tokens = gather(m.tokens, exchange_map_for(m));
  return out;
}

template <typename T> MessengerState<T> messenger_unexchange(const MessengerState<T> &m) {
  MessengerState<T> out = m;
  out.tokens = gather(m.tokens, invert(exchange_map_for(m)));
  return out;
}

#define WINMIX_INSTANTIATE(T)                                                                                          \
  template std::pair<Tensor<T>, PadRecord> pad_to_multiple(const Tensor<T> &, std::size_t);                            \
  template Tensor<T> crop(const Tensor<T> &, const PadRecord &);                                                       \
  template WindowSet<T> window_partition(const Tensor<T> &, std::size_t, const PadRecord &);                           \
  template Tensor<T> window_reverse(const WindowSet<T> &);                                                             \
  template Tensor<T> cyclic_shift(const Tensor<T> &, long, long);                                                      \
  template Tensor<T> spatial_shuffle(const Tensor<T> &, std::size_t);                                                  \
  template Tensor<T> spatial_unshuffle(const Tensor<T> &, std::size_t);                                                \
  template Tensor<T> messenger_attach(const WindowSet<T> &, const MessengerState<T> &);                                \
  template std::pair<Tensor<T>, Tensor<T>> messenger_detach(const Tensor<T> &, std::size_t);                           \
  template MessengerState<T> messenger_exchange(const MessengerState<T> &);                                            \
  template MessengerState<T> messenger_unexchange(const MessengerState<T> &);

WINMIX_INSTANTIATE(float)
WINMIX_INSTANTIATE(double)

} // namespace winmix
