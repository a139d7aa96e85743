#include <winmix/analytics.hpp>
#include <winmix/reference.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

namespace winmix {

namespace {

using u64 = std::uint64_t;

u64 aggregator_params(const ModelConfig &cfg, std::size_t s) {
  const u64 c = cfg.stage_channels(s), ws = cfg.window;
  switch (cfg.aggregator) {
  case AggregatorKind::mhsa: {
    const u64 side = 2 * ws - 1;
    return 3 * c * c + 3 * c + c * c + c + side * side * cfg.heads(s);
  }
  case AggregatorKind::linear:
  case AggregatorKind::dw_linear: {
    const u64 n = cfg.group_size(s) * ws;
    const u64 copies = cfg.aggregator == AggregatorKind::dw_linear ? cfg.stage_groups(s) : 1;
    return copies * 2 * (n * n + n) + c * c + c;
  }
  case AggregatorKind::mlp: {
    const u64 n = cfg.group_size(s) * ws, rho = cfg.mlp_ratio;
    return 2 * (rho * n * n + rho * n + rho * n * n + n) + c * c + c;
  }
  }
  return 0;
}

u64 aggregator_flops(const ModelConfig &cfg, std::size_t s, u64 windows) {
  const u64 c = cfg.stage_channels(s), ws = cfg.window, t = ws * ws + cfg.stage_messengers();
  if (cfg.aggregator == AggregatorKind::mhsa)
    return windows * (3 * t * c * c + 2 * t * t * c + t * c * c);
  const u64 n = cfg.group_size(s) * ws, groups = cfg.stage_groups(s);
  const u64 per_map = cfg.aggregator == AggregatorKind::mlp ? 2 * cfg.mlp_ratio * n * n : n * n;
  return windows * (2 * groups * ws * per_map + t * c * c);
}

CostReport build(const ModelConfig &cfg, std::size_t height, std::size_t width, bool with_flops) {
  cfg.validate(true);
  CostReport r;
  r.model = cfg.name;
  r.height = height;
  r.width = width;
  const auto grids = stage_grids(cfg, height, width);
  auto row = [&](std::string path, u64 params, u64 flops) {
    r.rows.push_back({std::move(path), params, with_flops ? flops : 0});
  };

  const u64 c0 = cfg.width, patch_dim = cfg.patch * cfg.patch * cfg.in_chans;
  row("stem.proj", patch_dim * c0 + c0, u64(grids[0].height) * grids[0].width * patch_dim * c0);
  row("stem.norm", 2 * c0, 0);
  for (std::size_t s = 0; s < 4; ++s) {
    const u64 c = cfg.stage_channels(s), hidden = cfg.ffn_ratio * c;
    const BlockGeometry geo = block_geometry(cfg, grids[s].height, grids[s].width);
    const u64 windows = u64(geo.windows_h()) * geo.windows_w();
    const u64 tokens = windows * (u64(cfg.window) * cfg.window + cfg.stage_messengers());
    const std::string sp = "stages." + std::to_string(s);
    if (cfg.comm == CommKind::msg && cfg.depths[s] > 0)
      row(sp + ".messengers", cfg.messengers * c, 0);
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      const std::string bp = sp + ".blocks." + std::to_string(b);
      row(bp + ".norm1", 2 * c, 0);
      row(bp + ".agg", aggregator_params(cfg, s), aggregator_flops(cfg, s, windows));
      row(bp + ".norm2", 2 * c, 0);
      row(bp + ".ffn", 2 * c * hidden + hidden + c, tokens * 2 * c * hidden);
    }
    if (s < 3) {
      const u64 merged = u64(grids[s + 1].height) * grids[s + 1].width;
      row("merges." + std::to_string(s), 2 * 4 * c + 4 * c * 2 * c, merged * 4 * c * 2 * c);
    }
  }
  const u64 c3 = cfg.stage_channels(3);
  row("head.norm", 2 * c3, 0);
  row("head.fc", c3 * cfg.classes + cfg.classes, c3 * cfg.classes);
  for (const auto &x : r.rows) {
    r.total_params += x.params;
    r.total_flops += x.flops;
  }
  return r;
}

} // namespace

CostReport count_params(const ModelConfig &cfg) { return build(cfg, cfg.image_size, cfg.image_size, false); }

CostReport count_flops(const ModelConfig &cfg, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0)
    throw ConfigError("resolution must be positive");
  return build(cfg, height, width, true);
}

std::uint64_t flops_oracle(const ModelConfig &cfg, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0)
    throw ConfigError("resolution must be positive");
  Model<double> model = build_model<double>(cfg, 0);
  Tensor<double> image({1, height, width, cfg.in_chans});
  reference::Forward<reference::CountingScalar> ref(cfg, model.params);
  reference::multiply_count() = 0;
  reference::counting_enabled() = true;
  ref.logits(image);
  return reference::multiply_count();
}

nlohmann::json to_json(const CostReport &r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto &x : r.rows)
    rows.push_back({{"path", x.path}, {"params", x.params}, {"flops", x.flops}});
  return {{"model", r.model},
          {"resolution", {r.height, r.width}},
          {"rows", rows},
          {"total_params", r.total_params},
          {"total_flops", r.total_flops},
          {"params_millions", double(r.total_params) / 1e6},
          {"gflops", double(r.total_flops) / 1e9}};
}

std::string to_table(const CostReport &r) {
  std::size_t width = 5;
  for (const auto &x : r.rows)
    width = std::max(width, x.path.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %14s %16s\n", int(width), "layer", "params", "flops");
  os << buf;
  for (const auto &x : r.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %14llu %16llu\n", int(width), x.path.c_str(),
                  static_cast<unsigned long long>(x.params), static_cast<unsigned long long>(x.flops));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %14llu %16llu\n", int(width), "total",
                static_cast<unsigned long long>(r.total_params), static_cast<unsigned long long>(r.total_flops));
  os << buf;
  std::snprintf(buf, sizeof buf, "%s: %.2fM params, %.3fG MACs at %zux%zu\n", r.model.c_str(), r.total_params / 1e6,
                r.total_flops / 1e9, r.height, r.width);
  os << buf;
  return os.str();
}

namespace {

double quantile(std::vector<double> sorted, double q) {
  if (sorted.empty())
    return 0;
  const double pos = q * double(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

ThroughputReport bench_throughput(const Model<float> &model, std::size_t batch, std::size_t repeats,
                                  std::size_t height, std::size_t width) {
  if (batch == 0 || repeats == 0)
    throw ConfigError("bench needs a positive batch and repeat count");
  Rng rng(1234);
  std::uniform_real_distribution<float> dist(0.f, 1.f);
  std::vector<float> pixels(batch * height * width * model.config.in_chans);
  for (auto &v : pixels)
    v = dist(rng);
  const Tensor<float> images({batch, height, width, model.config.in_chans}, std::move(pixels));
  forward(model, images);
  ThroughputReport r;
  r.batch = batch;
  r.repeats = repeats;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    forward(model, images);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    r.samples.push_back(double(batch) / std::max(dt.count(), 1e-12));
  }
  std::vector<double> sorted = r.samples;
  std::sort(sorted.begin(), sorted.end());
  r.median_images_per_second = quantile(sorted, 0.5);
  r.iqr_images_per_second = quantile(sorted, 0.75) - quantile(sorted, 0.25);
  return r;
}

nlohmann::json to_json(const ThroughputReport &r) {
  return {{"batch", r.batch},
          {"repeats", r.repeats},
          {"median_images_per_second", r.median_images_per_second},
          {"iqr_images_per_second", r.iqr_images_per_second},
          {"samples", r.samples}};
}

} // namespace winmix
