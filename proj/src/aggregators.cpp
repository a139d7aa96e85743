#include <winmix/aggregators.hpp>

#include "map_cache.hpp"

#include <cmath>

namespace winmix {

std::string to_string(AggregatorKind kind) {
  switch (kind) {
  case AggregatorKind::mhsa:
    return "mhsa";
  case AggregatorKind::linear:
    return "linear";
  case AggregatorKind::dw_linear:
    return "dw_linear";
  case AggregatorKind::mlp:
    return "mlp";
  }
  return "?";
}

AggregatorKind parse_aggregator(const std::string &name) {
  for (auto k : {AggregatorKind::mhsa, AggregatorKind::linear, AggregatorKind::dw_linear, AggregatorKind::mlp})
    if (to_string(k) == name)
      return k;
  throw ConfigError("unknown aggregator '" + name + "' (expected mhsa, linear, dw_linear or mlp)");
}

std::string to_string(AxialLayout layout) { return layout == AxialLayout::symmetric ? "symmetric" : "faithful"; }

AxialLayout parse_layout(const std::string &name) {
  if (name == "symmetric")
    return AxialLayout::symmetric;
  if (name == "faithful")
    return AxialLayout::faithful;
  throw ConfigError("unknown axial layout '" + name + "' (expected symmetric or faithful)");
}

void AggregatorSpec::validate() const {
  if (channels == 0 || window == 0)
    throw ConfigError("aggregator needs positive channels and window");
  if (kind == AggregatorKind::mhsa) {
    if (heads == 0 || channels % heads != 0)
      throw ConfigError(std::to_string(channels) + " channels are not divisible by " + std::to_string(heads) +
                        " heads");
  } else {
    if (group_size == 0 || channels % group_size != 0)
      throw ConfigError(std::to_string(channels) + " channels are not divisible by group size " +
                        std::to_string(group_size));
    if (kind == AggregatorKind::mlp && mlp_ratio == 0)
      throw ConfigError("mlp hidden ratio must be positive");
  }
}

std::vector<ParamShape> aggregator_param_shapes(const AggregatorSpec &spec) {
  spec.validate();
  using I = ParamShape::Init;
  const std::size_t c = spec.channels, n = spec.axial_width(), g = spec.groups();
  std::vector<ParamShape> out;
  switch (spec.kind) {
  case AggregatorKind::mhsa: {
    const std::size_t side = 2 * spec.window - 1;
    out = {{"w_qkv", {3 * c, c}, I::trunc_normal},
           {"b_qkv", {3 * c}, I::zeros},
           {"w_o", {c, c}, I::trunc_normal},
           {"b_o", {c}, I::zeros},
           {"rel_bias", {side * side, spec.heads}, I::zeros}};
    return out;
  }
  case AggregatorKind::linear:
    out = {{"w_h", {n, n}, I::trunc_normal}, {"b_h", {n}, I::zeros},
           {"w_w", {n, n}, I::trunc_normal}, {"b_w", {n}, I::zeros}};
    break;
  case AggregatorKind::dw_linear:
    out = {{"w_h", {g, n, n}, I::trunc_normal}, {"b_h", {g, n}, I::zeros},
           {"w_w", {g, n, n}, I::trunc_normal}, {"b_w", {g, n}, I::zeros}};
    break;
  case AggregatorKind::mlp: {
    const std::size_t hid = spec.mlp_ratio * n;
    for (const char *axis : {"h", "w"}) {
      const std::string a(axis);
      out.push_back({a + "_w1", {hid, n}, I::trunc_normal});
      out.push_back({a + "_b1", {hid}, I::zeros});
      out.push_back({a + "_w2", {n, hid}, I::trunc_normal});
      out.push_back({a + "_b2", {n}, I::zeros});
    }
    break;
  }
  }
  out.push_back({"w_p", {c, c}, I::trunc_normal});
  out.push_back({"b_p", {c}, I::zeros});
  return out;
}

template <typename T> ParamTable<T> init_aggregator(const AggregatorSpec &spec, std::uint64_t seed) {
  Rng rng(seed);
  return init_params<T>(aggregator_param_shapes(spec), rng);
}

IndexMap scatter_back(const IndexMap &map) {
  IndexMap back{map.out_shape, map.source_shape, std::vector<std::int64_t>(numel(map.source_shape), -1)};
  for (std::size_t i = 0; i < map.source.size(); ++i) {
    const auto s = map.source[i];
    if (s < 0)
      continue;
    if (back.source[static_cast<std::size_t>(s)] >= 0)
      throw DimensionError("scatter_back needs an injective index map");
    back.source[static_cast<std::size_t>(s)] = static_cast<std::int64_t>(i);
  }
  return back;
}

namespace {

// row(b, fixed), col k -> source element, for every group g.
template <typename F> IndexMap axial_map(std::size_t batch, const AggregatorSpec &spec, F &&source_token_channel) {
  const std::size_t ws = spec.window, gs = spec.group_size, n = spec.axial_width(), g = spec.groups();
  const std::size_t t = spec.tokens(), c = spec.channels;
  IndexMap m{{batch, t, c}, {g, batch * ws, n}, std::vector<std::int64_t>(g * batch * ws * n)};
  std::size_t i = 0;
  for (std::size_t grp = 0; grp < g; ++grp)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t fixed = 0; fixed < ws; ++fixed)
        for (std::size_t k = 0; k < n; ++k) {
          const auto [token, ch] = source_token_channel(fixed, k);
          m.source[i++] = static_cast<std::int64_t>((b * t + token) * c + grp * gs + ch);
        }
  return m;
}

} // namespace

IndexMap axial_height_map(std::size_t batch, const AggregatorSpec &spec) {
  const std::size_t ws = spec.window;
  // Fixed column w; entry k = (channel-in-group, height).
  return axial_map(batch, spec, [ws](std::size_t w, std::size_t k) {
    const std::size_t ch = k / ws, h = k % ws;
    return std::pair{h * ws + w, ch};
  });
}

IndexMap axial_width_map(std::size_t batch, const AggregatorSpec &spec) {
  const std::size_t ws = spec.window, n = spec.axial_width();
  if (spec.layout == AxialLayout::faithful) {
    // Chunk j of the group's flat (channel, token) buffer.
    return axial_map(batch, spec, [ws, n](std::size_t j, std::size_t k) {
      const std::size_t f = j * n + k;
      return std::pair{f % (ws * ws), f / (ws * ws)};
    });
  }
  // Fixed row h; entry k = (channel-in-group, width).
  return axial_map(batch, spec, [ws](std::size_t h, std::size_t k) {
    const std::size_t ch = k / ws, w = k % ws;
    return std::pair{h * ws + w, ch};
  });
}

namespace {

std::string spec_key(const char *what, std::size_t batch, const AggregatorSpec &s) {
  return std::string(what) + ':' + std::to_string(batch) + ':' + std::to_string(s.channels) + ':' +
         std::to_string(s.window) + ':' + std::to_string(s.group_size) + ':' + std::to_string(s.heads) + ':' +
         std::to_string(s.messengers) + ':' + to_string(s.layout);
}

template <typename T>
Var<T> axial_branch(const AggregatorSpec &spec, std::span<const Var<T>> p, const Var<T> &x, IndexMapPtr rows,
                    IndexMapPtr back) {
  Var<T> v = gather(x, rows);
  if (spec.kind == AggregatorKind::mlp) {
    v = linear(v, p[0], &p[1]);
    v = gelu(v);
    v = linear(v, p[2], &p[3]);
  } else {
    v = linear(v, p[0], &p[1]);
  }
  return gather(v, back);
}

// Messenger slots read the mean of the window tokens; window tokens read the
// mean of the messengers. Parameter-free; the point-wise projection follows.
template <typename T> Var<T> messenger_bridge(const AggregatorSpec &spec, const Var<T> &x) {
  const std::size_t b = x.shape()[0], c = spec.channels, wt = spec.window_tokens(), m = spec.messengers;
  Var<T> spatial_mean = reshape(mean_axis(slice(x, 1, 0, wt), 1), {b, 1, c});
  Var<T> msg_mean = reshape(mean_axis(slice(x, 1, wt, m), 1), {b, 1, c});
  return concat(broadcast_to(msg_mean, {b, wt, c}), broadcast_to(spatial_mean, {b, m, c}), 1);
}

template <typename T> Var<T> axial_aggregate(const AggregatorSpec &spec, std::span<const Var<T>> p, const Var<T> &x) {
  const std::size_t batch = x.shape()[0];
  auto hmap = detail::cached_map(spec_key("ah", batch, spec), [&] { return axial_height_map(batch, spec); });
  auto hback = detail::cached_map(spec_key("ahb", batch, spec), [&] { return scatter_back(*hmap); });
  auto wmap = detail::cached_map(spec_key("aw", batch, spec), [&] { return axial_width_map(batch, spec); });
  auto wback = detail::cached_map(spec_key("awb", batch, spec), [&] { return scatter_back(*wmap); });
  const std::size_t per_axis = spec.kind == AggregatorKind::mlp ? 4 : 2;
  Var<T> hf = axial_branch(spec, p.subspan(0, per_axis), x, hmap, hback);
  Var<T> wf = axial_branch(spec, p.subspan(per_axis, per_axis), x, wmap, wback);
  Var<T> u = add(hf, wf);
  if (spec.messengers > 0)
    u = add(u, messenger_bridge(spec, x));
  return linear(u, p[2 * per_axis], &p[2 * per_axis + 1]);
}

// qkv [B, T, 3C] -> [B * heads, T, d] (or [B * heads, d, T] when transposed).
IndexMap head_split_map(std::size_t batch, std::size_t tokens, std::size_t channels, std::size_t heads,
                        std::size_t which, bool transposed) {
  const std::size_t d = channels / heads;
  IndexMap m{{batch, tokens, 3 * channels},
             transposed ? Shape{batch * heads, d, tokens} : Shape{batch * heads, tokens, d},
             std::vector<std::int64_t>(batch * tokens * channels)};
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < (transposed ? d : tokens); ++r)
        for (std::size_t s = 0; s < (transposed ? tokens : d); ++s) {
          const std::size_t t = transposed ? s : r, e = transposed ? r : s;
          m.source[i++] = static_cast<std::int64_t>((b * tokens + t) * 3 * channels + which * channels + h * d + e);
        }
  return m;
}

// [B * heads, T, d] -> [B, T, heads * d].
IndexMap head_merge_map(std::size_t batch, std::size_t tokens, std::size_t channels, std::size_t heads) {
  const std::size_t d = channels / heads;
  IndexMap m{{batch * heads, tokens, d}, {batch, tokens, channels}, std::vector<std::int64_t>(batch * tokens * channels)};
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t e = 0; e < d; ++e)
          m.source[i++] = static_cast<std::int64_t>(((b * heads + h) * tokens + t) * d + e);
  return m;
}

// Relative position table [(2ws-1)^2, heads] -> [heads, T, T]; pairs that
// involve a messenger token get no bias.
IndexMap relative_bias_map(const AggregatorSpec &spec) {
  const std::size_t ws = spec.window, t = spec.tokens(), wt = spec.window_tokens(), heads = spec.heads;
  const std::size_t side = 2 * ws - 1;
  IndexMap m{{side * side, heads}, {heads, t, t}, std::vector<std::int64_t>(heads * t * t, -1)};
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < wt; ++i)
      for (std::size_t j = 0; j < wt; ++j) {
        const std::size_t dy = i / ws + ws - 1 - j / ws, dx = i % ws + ws - 1 - j % ws;
        m.source[(h * t + i) * t + j] = static_cast<std::int64_t>((dy * side + dx) * heads + h);
      }
  return m;
}

template <typename T> Var<T> mhsa_aggregate(const AggregatorSpec &spec, std::span<const Var<T>> p, const Var<T> &x) {
  const std::size_t b = x.shape()[0], t = spec.tokens(), c = spec.channels, heads = spec.heads;
  const std::size_t d = c / heads;
  const std::string key = spec_key("mh", b, spec);
  auto qmap = detail::cached_map(key + ":q", [&] { return head_split_map(b, t, c, heads, 0, false); });
  auto kmap = detail::cached_map(key + ":k", [&] { return head_split_map(b, t, c, heads, 1, true); });
  auto vmap = detail::cached_map(key + ":v", [&] { return head_split_map(b, t, c, heads, 2, false); });
  auto merge = detail::cached_map(key + ":m", [&] { return head_merge_map(b, t, c, heads); });
  auto bias = detail::cached_map(spec_key("rb", 0, spec), [&] { return relative_bias_map(spec); });

  Var<T> qkv = linear(x, p[0], &p[1]);
  Var<T> scores = matmul(gather(qkv, qmap), gather(qkv, kmap));
  scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  scores = add_broadcast(reshape(scores, {b, heads, t, t}), gather(p[4], bias));
  Var<T> attn = reshape(softmax_last_axis(scores), {b * heads, t, t});
  Var<T> mixed = gather(matmul(attn, gather(qkv, vmap)), merge);
  return linear(mixed, p[2], &p[3]);
}

} // namespace

template <typename T> Var<T> aggregate(const AggregatorSpec &spec, std::span<const Var<T>> params, const Var<T> &x) {
  const Shape &s = x.shape();
  if (s.size() != 3 || s[1] != spec.tokens() || s[2] != spec.channels)
    throw DimensionError("aggregator expects [windows, " + std::to_string(spec.tokens()) + ", " +
                         std::to_string(spec.channels) + "], got " + to_string(s));
  const std::size_t expected = aggregator_param_shapes(spec).size();
  if (params.size() != expected)
    throw DimensionError("aggregator expects " + std::to_string(expected) + " parameter tensors, got " +
                         std::to_string(params.size()));
  if (spec.kind == AggregatorKind::mhsa)
    return mhsa_aggregate(spec, params, x);
  return axial_aggregate(spec, params, x);
}

template <typename T> ParamTable<T> LinMapperParams<T>::table() const {
  return {{"w_h", w_h}, {"b_h", b_h}, {"w_w", w_w}, {"b_w", b_w}, {"w_p", w_p}, {"b_p", b_p}};
}

template <typename T> ParamTable<T> WindowMlpParams<T>::table() const {
  return {{"h_w1", h_w1}, {"h_b1", h_b1}, {"h_w2", h_w2}, {"h_b2", h_b2}, {"w_w1", w_w1},
          {"w_b1", w_b1}, {"w_w2", w_w2}, {"w_b2", w_b2}, {"w_p", w_p},   {"b_p", b_p}};
}

template <typename T> ParamTable<T> WindowMhsaParams<T>::table() const {
  return {{"w_qkv", w_qkv}, {"b_qkv", b_qkv}, {"w_o", w_o}, {"b_o", b_o}, {"rel_bias", rel_bias}};
}

namespace {

template <typename T>
Tensor<T> run_standalone(const AggregatorSpec &spec, const ParamTable<T> &table, const Tensor<T> &tokens) {
  const auto shapes = aggregator_param_shapes(spec);
  Graph<T> g;
  std::vector<Var<T>> vars;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (i >= shapes.size() || table[i].value.shape() != shapes[i].shape)
      throw DimensionError("parameter '" + table[i].name + "' has shape " + to_string(table[i].value.shape()) +
                           ", expected " + (i < shapes.size() ? to_string(shapes[i].shape) : "nothing"));
    vars.push_back(g.constant(table[i].value));
  }
  return aggregate<T>(spec, vars, g.constant(tokens)).value();
}

template <typename T>
Tensor<T> axial_standalone(AggregatorKind kind, const Tensor<T> &x, const ParamTable<T> &table, std::size_t window,
                           std::size_t group_size, AxialLayout layout, std::size_t mlp_ratio) {
  if (x.rank() != 3 || x.dim(2) != window * window)
    throw DimensionError("expected windows [B, C, " + std::to_string(window * window) + "], got " +
                         to_string(x.shape()));
  AggregatorSpec spec{kind, x.dim(1), window, group_size, 1, mlp_ratio, 0, layout};
  return transpose_last2(run_standalone(spec, table, transpose_last2(x)));
}

} // namespace

template <typename T>
Tensor<T> linmapper_forward(const Tensor<T> &x, const LinMapperParams<T> &p, std::size_t window,
                            std::size_t group_size, AxialLayout layout) {
  return axial_standalone(AggregatorKind::linear, x, p.table(), window, group_size, layout, 1);
}

template <typename T>
Tensor<T> dw_linmapper_forward(const Tensor<T> &x, const DWLinMapperParams<T> &p, std::size_t window,
                               std::size_t group_size, AxialLayout layout) {
  return axial_standalone(AggregatorKind::dw_linear, x, p.table(), window, group_size, layout, 1);
}

template <typename T>
Tensor<T> window_mlp_forward(const Tensor<T> &x, const WindowMlpParams<T> &p, std::size_t window,
                             std::size_t group_size, AxialLayout layout) {
  const std::size_t n = group_size * window;
  if (p.h_w1.rank() != 2 || n == 0 || p.h_w1.dim(0) % n != 0)
    throw DimensionError("mlp first-layer weight " + to_string(p.h_w1.shape()) + " does not match gs*ws = " +
                         std::to_string(n));
  return axial_standalone(AggregatorKind::mlp, x, p.table(), window, group_size, layout, p.h_w1.dim(0) / n);
}

template <typename T>
Tensor<T> window_mhsa_forward(const Tensor<T> &x, const WindowMhsaParams<T> &p, std::size_t window,
                              std::size_t heads) {
  if (x.rank() != 3 || x.dim(1) != window * window)
    throw DimensionError("expected windows [B, " + std::to_string(window * window) + ", C], got " +
                         to_string(x.shape()));
  AggregatorSpec spec{AggregatorKind::mhsa, x.dim(2), window, 1, heads, 1, 0, AxialLayout::symmetric};
  return run_standalone(spec, p.table(), x);
}

#define WINMIX_INSTANTIATE(T)                                                                                          \
  template ParamTable<T> init_aggregator<T>(const AggregatorSpec &, std::uint64_t);                                    \
  template Var<T> aggregate(const AggregatorSpec &, std::span<const Var<T>>, const Var<T> &);                          \
  template struct LinMapperParams<T>;                                                                                  \
  template struct WindowMlpParams<T>;                                                                                  \
  template struct WindowMhsaParams<T>;                                                                                 \
  template Tensor<T> linmapper_forward(const Tensor<T> &, const LinMapperParams<T> &, std::size_t, std::size_t,        \
                                       AxialLayout);                                                                   \
  template Tensor<T> dw_linmapper_forward(const Tensor<T> &, const DWLinMapperParams<T> &, std::size_t, std::size_t,   \
                                          AxialLayout);                                                                \
  template Tensor<T> window_mlp_forward(const Tensor<T> &, const WindowMlpParams<T> &, std::size_t, std::size_t,       \
                                        AxialLayout);                                                                  \
  template Tensor<T> window_mhsa_forward(const Tensor<T> &, const WindowMhsaParams<T> &, std::size_t, std::size_t);

WINMIX_INSTANTIATE(float)
WINMIX_INSTANTIATE(double)

} // namespace winmix
