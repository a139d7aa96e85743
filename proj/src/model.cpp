#include <winmix/model.hpp>

#include "map_cache.hpp"

namespace winmix {

namespace {

constexpr double kNormEps = 1e-5;

using I = ParamShape::Init;

void add_norm(std::vector<ParamShape> &out, const std::string &prefix, std::size_t c) {
  out.push_back({prefix + ".gamma", {c}, I::ones});
  out.push_back({prefix + ".beta", {c}, I::zeros});
}

std::string stage_prefix(std::size_t s) { return "stages." + std::to_string(s); }

std::size_t shift_offset(const ModelConfig &cfg) { return cfg.window / 2; }

std::string grid_key(const char *what, const ModelConfig &cfg, std::size_t index, std::size_t b, std::size_t h,
                     std::size_t w, std::size_t c) {
  return std::string(what) + ':' + to_string(cfg.comm) + ':' + std::to_string(cfg.window) + ':' +
         std::to_string(cfg.region) + ':' + std::to_string(index % 2) + ':' + std::to_string(b) + ':' +
         std::to_string(h) + ':' + std::to_string(w) + ':' + std::to_string(c);
}

} // namespace

std::vector<ParamShape> model_param_shapes(const ModelConfig &cfg) {
  cfg.validate(true);
  std::vector<ParamShape> out;
  const std::size_t c0 = cfg.width, patch_dim = cfg.patch * cfg.patch * cfg.in_chans;
  out.push_back({"stem.proj.weight", {c0, patch_dim}, I::trunc_normal});
  out.push_back({"stem.proj.bias", {c0}, I::zeros});
  add_norm(out, "stem.norm", c0);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t c = cfg.stage_channels(s), hidden = cfg.ffn_ratio * c;
    const std::string sp = stage_prefix(s);
    if (cfg.comm == CommKind::msg && cfg.depths[s] > 0)
      out.push_back({sp + ".messengers", {cfg.messengers, c}, I::trunc_normal});
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      const std::string bp = sp + ".blocks." + std::to_string(b);
      add_norm(out, bp + ".norm1", c);
      for (auto p : aggregator_param_shapes(cfg.aggregator_spec(s))) {
        p.name = bp + ".agg." + p.name;
        out.push_back(std::move(p));
      }
      add_norm(out, bp + ".norm2", c);
      out.push_back({bp + ".ffn.fc1.weight", {hidden, c}, I::trunc_normal});
      out.push_back({bp + ".ffn.fc1.bias", {hidden}, I::zeros});
      out.push_back({bp + ".ffn.fc2.weight", {c, hidden}, I::trunc_normal});
      out.push_back({bp + ".ffn.fc2.bias", {c}, I::zeros});
    }
    if (s < 3) {
      const std::string mp = "merges." + std::to_string(s);
      add_norm(out, mp + ".norm", 4 * c);
      out.push_back({mp + ".reduce.weight", {2 * c, 4 * c}, I::trunc_normal});
    }
  }
  const std::size_t c3 = cfg.stage_channels(3);
  add_norm(out, "head.norm", c3);
  out.push_back({"head.fc.weight", {cfg.classes, c3}, I::trunc_normal});
  out.push_back({"head.fc.bias", {cfg.classes}, I::zeros});
  return out;
}

std::size_t param_index(const std::vector<ParamShape> &shapes, const std::string &name) {
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (shapes[i].name == name)
      return i;
  throw ConfigError("no parameter named '" + name + "'");
}

template <typename T> Model<T> build_model(const ModelConfig &cfg, std::uint64_t seed) {
  Rng rng(seed);
  return {cfg, init_params<T>(model_param_shapes(cfg), rng)};
}

IndexMap patchify_map(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels,
                      std::size_t patch) {
  const std::size_t ph = round_up(height, patch), pw = round_up(width, patch);
  const std::size_t oh = ph / patch, ow = pw / patch, dim = patch * patch * channels;
  IndexMap m{{batch, ph, pw, channels}, {batch, oh, ow, dim}, std::vector<std::int64_t>(batch * oh * ow * dim)};
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t kh = 0; kh < patch; ++kh)
          for (std::size_t kw = 0; kw < patch; ++kw)
            for (std::size_t c = 0; c < channels; ++c)
              m.source[i++] =
                  static_cast<std::int64_t>(((b * ph + y * patch + kh) * pw + x * patch + kw) * channels + c);
  const GridShape in{batch, height, width, channels};
  return compose(pad_map(in, ph - height, pw - width), m);
}

IndexMap merge_map(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels) {
  const std::size_t ph = round_up(height, 2), pw = round_up(width, 2), oh = ph / 2, ow = pw / 2;
  IndexMap m{{batch, ph, pw, channels}, {batch, oh, ow, 4 * channels},
             std::vector<std::int64_t>(batch * oh * ow * 4 * channels)};
  const std::size_t dy[4] = {0, 1, 0, 1}, dx[4] = {0, 0, 1, 1};
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t q = 0; q < 4; ++q)
          for (std::size_t c = 0; c < channels; ++c)
            m.source[i++] = static_cast<std::int64_t>(((b * ph + 2 * y + dy[q]) * pw + 2 * x + dx[q]) * channels + c);
  const GridShape in{batch, height, width, channels};
  return compose(pad_map(in, ph - height, pw - width), m);
}

IndexMap block_entry_map(const ModelConfig &cfg, std::size_t index, std::size_t batch, std::size_t height,
                         std::size_t width, std::size_t channels) {
  const BlockGeometry geo = block_geometry(cfg, height, width);
  const GridShape in{batch, height, width, channels};
  const GridShape padded{batch, geo.padded_h, geo.padded_w, channels};
  IndexMap m = pad_map(in, geo.padded_h - height, geo.padded_w - width);
  if (index % 2 == 1) {
    const long s = static_cast<long>(shift_offset(cfg));
    if (cfg.comm == CommKind::shift)
      m = compose(m, shift_map(padded, -s, -s));
    else if (cfg.comm == CommKind::shuffle)
      m = compose(m, shuffle_map(padded, cfg.window));
  }
  return compose(m, partition_map(padded, cfg.window));
}

IndexMap block_exit_map(const ModelConfig &cfg, std::size_t index, std::size_t batch, std::size_t height,
                        std::size_t width, std::size_t channels) {
  const BlockGeometry geo = block_geometry(cfg, height, width);
  const GridShape padded{batch, geo.padded_h, geo.padded_w, channels};
  IndexMap m = invert(partition_map(padded, cfg.window));
  if (index % 2 == 1) {
    const long s = static_cast<long>(shift_offset(cfg));
    if (cfg.comm == CommKind::shift)
      m = compose(m, shift_map(padded, s, s));
    else if (cfg.comm == CommKind::shuffle)
      m = compose(m, invert(shuffle_map(padded, cfg.window)));
  }
  return compose(m, crop_map(padded, height, width));
}

template <typename T> Var<T> stem_forward(const ModelConfig &cfg, ParamCursor<T> &params, const Var<T> &images) {
  const Shape &s = images.shape();
  if (s.size() != 4 || s[3] != cfg.in_chans)
    throw DimensionError("images must be [batch, height, width, " + std::to_string(cfg.in_chans) + "], got " +
                         to_string(s));
  auto map = detail::cached_map("patch:" + std::to_string(cfg.patch) + ':' + to_string(s),
                                [&] { return patchify_map(s[0], s[1], s[2], s[3], cfg.patch); });
  const Var<T> &w = params.next();
  const Var<T> &b = params.next();
  Var<T> x = linear(gather(images, map), w, &b);
  const Var<T> &gamma = params.next();
  const Var<T> &beta = params.next();
  return layer_norm(x, gamma, beta, static_cast<T>(kNormEps));
}

template <typename T>
BlockState<T> block_forward(const ModelConfig &cfg, std::size_t stage, std::size_t index, ParamCursor<T> &params,
                            BlockState<T> state) {
  const Shape s = state.x.shape();
  const std::size_t batch = s[0], height = s[1], width = s[2], c = s[3];
  if (c != cfg.stage_channels(stage))
    throw DimensionError("stage " + std::to_string(stage) + " expects " + std::to_string(cfg.stage_channels(stage)) +
                         " channels, got " + to_string(s));
  const BlockGeometry geo = block_geometry(cfg, height, width);
  const AggregatorSpec spec = cfg.aggregator_spec(stage);
  const std::size_t wt = spec.window_tokens();

  auto entry = detail::cached_map(grid_key("in", cfg, index, batch, height, width, c),
                                  [&] { return block_entry_map(cfg, index, batch, height, width, c); });
  auto exit = detail::cached_map(grid_key("out", cfg, index, batch, height, width, c),
                                 [&] { return block_exit_map(cfg, index, batch, height, width, c); });

  Var<T> tokens = gather(state.x, entry);
  if (spec.messengers > 0) {
    if (!state.messengers)
      throw DimensionError("msg block called without messenger tokens");
    Var<T> m = *state.messengers;
    if (index % 2 == 1 && geo.region > 1) {
      auto ex = detail::cached_map(grid_key("msg", cfg, index, batch, height, width, c) + ':' +
                                       std::to_string(spec.messengers),
                                   [&] {
                                     return exchange_map(batch, geo.windows_h(), geo.windows_w(), spec.messengers, c,
                                                         geo.region);
                                   });
      m = gather(m, ex);
    }
    tokens = concat(tokens, m, 1);
  }

  const Var<T> &g1 = params.next();
  const Var<T> &b1 = params.next();
  Var<T> normed = layer_norm(tokens, g1, b1, static_cast<T>(kNormEps));
  const std::size_t n_agg = aggregator_param_shapes(spec).size();
  tokens = add(tokens, aggregate<T>(spec, params.take(n_agg), normed));

  const Var<T> &g2 = params.next();
  const Var<T> &b2 = params.next();
  const Var<T> &w1 = params.next();
  const Var<T> &c1 = params.next();
  const Var<T> &w2 = params.next();
  const Var<T> &c2 = params.next();
  Var<T> h = gelu(linear(layer_norm(tokens, g2, b2, static_cast<T>(kNormEps)), w1, &c1));
  tokens = add(tokens, linear(h, w2, &c2));

  BlockState<T> out;
  if (spec.messengers > 0) {
    out.messengers = slice(tokens, 1, wt, spec.messengers);
    tokens = slice(tokens, 1, 0, wt);
  }
  out.x = gather(tokens, exit);
  return out;
}

template <typename T>
Var<T> stage_forward(const ModelConfig &cfg, std::size_t stage, ParamCursor<T> &params, const Var<T> &x) {
  BlockState<T> state{x, std::nullopt};
  if (cfg.depths[stage] == 0)
    return x;
  if (cfg.comm == CommKind::msg) {
    const Shape &s = x.shape();
    const BlockGeometry geo = block_geometry(cfg, s[1], s[2]);
    const std::size_t windows = s[0] * geo.windows_h() * geo.windows_w();
    const Var<T> &m = params.next();
    state.messengers = broadcast_to(reshape(m, {1, cfg.messengers, s[3]}), {windows, cfg.messengers, s[3]});
  }
  for (std::size_t i = 0; i < cfg.depths[stage]; ++i)
    state = block_forward(cfg, stage, i, params, std::move(state));
  return state.x;
}

template <typename T>
Var<T> merge_forward(const ModelConfig &cfg, std::size_t stage, ParamCursor<T> &params, const Var<T> &x) {
  const Shape &s = x.shape();
  if (s.size() != 4 || s[3] != cfg.stage_channels(stage))
    throw DimensionError("merge after stage " + std::to_string(stage) + " got " + to_string(s));
  auto map = detail::cached_map("merge:" + to_string(s), [&] { return merge_map(s[0], s[1], s[2], s[3]); });
  const Var<T> &gamma = params.next();
  const Var<T> &beta = params.next();
  const Var<T> &w = params.next();
  return linear(layer_norm(gather(x, map), gamma, beta, static_cast<T>(kNormEps)), w, static_cast<const Var<T> *>(nullptr));
}

template <typename T> Var<T> head_forward(const ModelConfig &cfg, ParamCursor<T> &params, const Var<T> &x) {
  const Shape &s = x.shape();
  if (s.size() != 4 || s[3] != cfg.stage_channels(3))
    throw DimensionError("head expects [batch, height, width, " + std::to_string(cfg.stage_channels(3)) + "], got " +
                         to_string(s));
  const Var<T> &gamma = params.next();
  const Var<T> &beta = params.next();
  Var<T> pooled = mean_axis(reshape(layer_norm(x, gamma, beta, static_cast<T>(kNormEps)), {s[0], s[1] * s[2], s[3]}), 1);
  const Var<T> &w = params.next();
  const Var<T> &b = params.next();
  return linear(pooled, w, &b);
}

template <typename T>
Var<T> model_forward(const ModelConfig &cfg, std::span<const Var<T>> params, const Var<T> &images) {
  ParamCursor<T> cursor(params);
  Var<T> x = stem_forward(cfg, cursor, images);
  for (std::size_t s = 0; s < 4; ++s) {
    x = stage_forward(cfg, s, cursor, x);
    if (s < 3)
      x = merge_forward(cfg, s, cursor, x);
  }
  Var<T> logits = head_forward(cfg, cursor, x);
  if (cursor.position() != params.size())
    throw DimensionError("model used " + std::to_string(cursor.position()) + " of " + std::to_string(params.size()) +
                         " parameter tensors");
  return logits;
}

template <typename T> Tensor<T> forward(const Model<T> &model, const Tensor<T> &images) {
  Graph<T> g;
  std::vector<Var<T>> vars;
  vars.reserve(model.params.size());
  for (const auto &p : model.params)
    vars.push_back(g.constant(p.value));
  return model_forward<T>(model.config, vars, g.constant(images)).value();
}

#define WINMIX_INSTANTIATE(T)                                                                                          \
  template Model<T> build_model<T>(const ModelConfig &, std::uint64_t);                                                \
  template Var<T> stem_forward(const ModelConfig &, ParamCursor<T> &, const Var<T> &);                                 \
  template BlockState<T> block_forward(const ModelConfig &, std::size_t, std::size_t, ParamCursor<T> &, BlockState<T>); \
  template Var<T> stage_forward(const ModelConfig &, std::size_t, ParamCursor<T> &, const Var<T> &);                   \
  template Var<T> merge_forward(const ModelConfig &, std::size_t, ParamCursor<T> &, const Var<T> &);                   \
  template Var<T> head_forward(const ModelConfig &, ParamCursor<T> &, const Var<T> &);                                 \
  template Var<T> model_forward(const ModelConfig &, std::span<const Var<T>>, const Var<T> &);                         \
  template Tensor<T> forward(const Model<T> &, const Tensor<T> &);

WINMIX_INSTANTIATE(float)
WINMIX_INSTANTIATE(double)

} // namespace winmix
