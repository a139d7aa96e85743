#include <winmix/config.hpp>
#include <winmix/geometry.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <set>

namespace winmix {

std::string to_string(CommKind kind) {
  switch (kind) {
  case CommKind::none:
    return "none";
  case CommKind::shift:
    return "shift";
  case CommKind::shuffle:
    return "shuffle";
  case CommKind::msg:
    return "msg";
  }
  return "?";
}

CommKind parse_comm(const std::string &name) {
  for (auto k : {CommKind::none, CommKind::shift, CommKind::shuffle, CommKind::msg})
    if (to_string(k) == name)
      return k;
  throw ConfigError("unknown comm '" + name + "' (expected none, shift, shuffle or msg)");
}

std::size_t ModelConfig::stage_groups(std::size_t stage) const {
  const std::size_t c = stage_channels(stage);
  for (std::size_t g = std::min(groups, c); g > 1; --g)
    if (c % g == 0)
      return g;
  return 1;
}

std::size_t ModelConfig::heads(std::size_t stage) const {
  return std::max<std::size_t>(1, stage_channels(stage) / head_dim);
}

AggregatorSpec ModelConfig::aggregator_spec(std::size_t stage) const {
  AggregatorSpec s;
  s.kind = aggregator;
  s.channels = stage_channels(stage);
  s.window = window;
  s.group_size = group_size(stage);
  s.heads = heads(stage);
  s.mlp_ratio = mlp_ratio;
  s.messengers = stage_messengers();
  s.layout = layout;
  return s;
}

void ModelConfig::validate(bool allow_empty_stages) const {
  auto positive = [](std::size_t v, const char *field) {
    if (v == 0)
      throw ConfigError(std::string(field) + " must be positive");
  };
  positive(width, "width");
  positive(window, "window");
  positive(ffn_ratio, "ffn_ratio");
  positive(classes, "classes");
  positive(groups, "groups");
  positive(head_dim, "head_dim");
  positive(mlp_ratio, "mlp_ratio");
  positive(patch, "patch");
  positive(in_chans, "in_chans");
  positive(image_size, "image_size");
  if (comm == CommKind::msg) {
    positive(messengers, "messengers");
    positive(region, "region");
  }
  for (std::size_t s = 0; s < 4; ++s)
    if (depths[s] == 0 && !allow_empty_stages)
      throw ConfigError("depths[" + std::to_string(s) + "] must be at least 1");
  if (comm == CommKind::msg && stage_channels(0) % (region * region) != 0)
    throw ConfigError("msg exchange splits channels into region^2 = " + std::to_string(region * region) +
                      " slices, which does not divide width " + std::to_string(width));
  if (aggregator == AggregatorKind::mhsa)
    for (std::size_t s = 0; s < 4; ++s)
      if (stage_channels(s) % heads(s) != 0)
        throw ConfigError("stage " + std::to_string(s + 1) + " channels " + std::to_string(stage_channels(s)) +
                          " are not divisible by " + std::to_string(heads(s)) + " heads");
}

std::array<StageGrid, 4> stage_grids(const ModelConfig &cfg, std::size_t image_h, std::size_t image_w) {
  std::array<StageGrid, 4> g{};
  g[0] = {(image_h + cfg.patch - 1) / cfg.patch, (image_w + cfg.patch - 1) / cfg.patch};
  for (std::size_t s = 1; s < 4; ++s)
    g[s] = {(g[s - 1].height + 1) / 2, (g[s - 1].width + 1) / 2};
  return g;
}

BlockGeometry block_geometry(const ModelConfig &cfg, std::size_t height, std::size_t width) {
  const std::size_t ws = cfg.window;
  BlockGeometry b{height, width, round_up(height, ws), round_up(width, ws), ws, 1};
  if (cfg.comm == CommKind::msg && (b.padded_h > ws || b.padded_w > ws) && cfg.region > 1) {
    b.region = cfg.region;
    b.padded_h = round_up(height, ws * b.region);
    b.padded_w = round_up(width, ws * b.region);
  }
  return b;
}

void to_json(nlohmann::json &j, const ModelConfig &c) {
  j = nlohmann::json{{"name", c.name},
                     {"width", c.width},
                     {"depths", c.depths},
                     {"window", c.window},
                     {"aggregator", to_string(c.aggregator)},
                     {"comm", to_string(c.comm)},
                     {"ffn_ratio", c.ffn_ratio},
                     {"classes", c.classes},
                     {"groups", c.groups},
                     {"head_dim", c.head_dim},
                     {"mlp_ratio", c.mlp_ratio},
                     {"messengers", c.messengers},
                     {"region", c.region},
                     {"layout", to_string(c.layout)},
                     {"patch", c.patch},
                     {"in_chans", c.in_chans},
                     {"image_size", c.image_size}};
}

void from_json(const nlohmann::json &j, ModelConfig &c) {
  if (!j.is_object())
    throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"name",   "width",     "depths",     "window",     "aggregator", "comm",
                                           "ffn_ratio", "classes", "groups",     "head_dim",   "mlp_ratio",
                                           "messengers", "region", "layout",     "patch",      "in_chans",
                                           "image_size"};
  for (const auto &[key, _] : j.items())
    if (!known.count(key))
      throw ConfigError("unknown config field '" + key + "'");
  try {
    auto get = [&](const char *key, auto &dst) {
      if (j.contains(key))
        j.at(key).get_to(dst);
    };
    get("name", c.name);
    get("width", c.width);
    if (j.contains("depths")) {
      auto d = j.at("depths").get<std::vector<std::size_t>>();
      if (d.size() != 4)
        throw ConfigError("depths must have exactly 4 entries, got " + std::to_string(d.size()));
      std::copy(d.begin(), d.end(), c.depths.begin());
    }
    get("window", c.window);
    if (j.contains("aggregator"))
      c.aggregator = parse_aggregator(j.at("aggregator").get<std::string>());
    if (j.contains("comm"))
      c.comm = parse_comm(j.at("comm").get<std::string>());
    get("ffn_ratio", c.ffn_ratio);
    get("classes", c.classes);
    get("groups", c.groups);
    get("head_dim", c.head_dim);
    get("mlp_ratio", c.mlp_ratio);
    get("messengers", c.messengers);
    get("region", c.region);
    if (j.contains("layout"))
      c.layout = parse_layout(j.at("layout").get<std::string>());
    get("patch", c.patch);
    get("in_chans", c.in_chans);
    get("image_size", c.image_size);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

namespace {

ModelConfig make(std::string name, std::size_t width, std::array<std::size_t, 4> depths, AggregatorKind agg,
                 CommKind comm, std::size_t groups = 32) {
  ModelConfig c;
  c.name = std::move(name);
  c.width = width;
  c.depths = depths;
  c.aggregator = agg;
  c.comm = comm;
  c.groups = groups;
  return c;
}

ModelConfig desk(const std::string &name, AggregatorKind agg, CommKind comm) {
  ModelConfig c = make(name, 16, {1, 1, 2, 1}, agg, comm);
  c.window = 4;
  c.classes = 4;
  c.image_size = 32;
  return c;
}

// Smallest useful model; used by gradient checks and the loop oracle.
ModelConfig micro(const std::string &name, AggregatorKind agg, CommKind comm) {
  ModelConfig c = make(name, 8, {1, 1, 1, 1}, agg, comm);
  c.window = 2;
  c.classes = 4;
  c.image_size = 16;
  return c;
}

const std::map<std::string, std::function<ModelConfig()>> &registry() {
  using A = AggregatorKind;
  using K = CommKind;
  static const std::map<std::string, std::function<ModelConfig()>> r = [] {
    std::map<std::string, std::function<ModelConfig()>> m;
    const std::array<std::size_t, 4> deep{2, 4, 22, 4}, swin_t{2, 2, 6, 2};
    auto add = [&](const std::string &name, std::function<ModelConfig(const std::string &)> f) {
      m[name] = [name, f] { return f(name); };
    };
    add("swin-linmapper-tiny", [=](auto &n) { return make(n, 64, deep, A::linear, K::shift); });
    add("swin-linmapper-tiny-deep", [=](auto &n) { return make(n, 64, deep, A::linear, K::shift); });
    add("shuffle-linmapper-tiny", [=](auto &n) { return make(n, 64, deep, A::linear, K::shuffle); });
    add("msg-linmapper-tiny", [=](auto &n) { return make(n, 64, deep, A::linear, K::msg); });
    add("swin-linmapper-small", [=](auto &n) { return make(n, 96, deep, A::linear, K::shift); });
    add("swin-linmapper-base", [=](auto &n) { return make(n, 128, deep, A::linear, K::shift); });
    add("swin-t-mhsa", [=](auto &n) { return make(n, 96, swin_t, A::mhsa, K::shift); });
    add("swin-linmapper-tiny-baseline", [=](auto &n) { return make(n, 96, swin_t, A::linear, K::shift, 16); });
    add("swin-linmapper-tiny-wide", [=](auto &n) { return make(n, 112, swin_t, A::linear, K::shift, 16); });
    for (std::size_t g : {96, 48, 32, 16, 8})
      add("groups-" + std::to_string(g) + "-linmapper",
          [=](auto &n) { return make(n, 96, swin_t, A::linear, K::shift, g); });
    for (std::size_t g : {48, 32})
      add("groups-" + std::to_string(g) + "-dw-linmapper",
          [=](auto &n) { return make(n, 96, swin_t, A::dw_linear, K::shift, g); });
    add("swin-mlp-tiny", [=](auto &n) { return make(n, 96, swin_t, A::mlp, K::shift); });
    for (auto agg : {A::mhsa, A::linear, A::dw_linear, A::mlp})
      for (auto comm : {K::none, K::shift, K::shuffle, K::msg})
        add("desk-" + to_string(agg) + "-" + to_string(comm), [=](auto &n) { return desk(n, agg, comm); });
    for (auto agg : {A::mhsa, A::linear, A::dw_linear, A::mlp})
      for (auto comm : {K::none, K::shift, K::shuffle, K::msg})
        add("micro-" + to_string(agg) + "-" + to_string(comm), [=](auto &n) { return micro(n, agg, comm); });
    return m;
  }();
  return r;
}

} // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto &[name, _] : registry())
    names.push_back(name);
  return names;
}

ModelConfig preset(const std::string &name) {
  const auto &r = registry();
  if (auto it = r.find(name); it != r.end())
    return it->second();
  std::string list;
  for (const auto &n : preset_names())
    list += (list.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "'; available presets: " + list);
}

ModelConfig load_config(const std::string &preset_or_path) {
  if (registry().count(preset_or_path))
    return preset(preset_or_path);
  std::ifstream in(preset_or_path);
  if (!in)
    return preset(preset_or_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("cannot parse " + preset_or_path + ": " + e.what());
  }
  ModelConfig c = j.get<ModelConfig>();
  c.validate();
  return c;
}

} // namespace winmix
