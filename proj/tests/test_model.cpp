#include "test_util.hpp"

#include <winmix/aggregators.hpp>
#include <winmix/analytics.hpp>
#include <winmix/gradcheck.hpp>
#include <winmix/model.hpp>
#include <winmix/reference.hpp>

#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

using namespace winmix;
using namespace winmix::testing;

namespace {

const AggregatorKind kKinds[] = {AggregatorKind::mhsa, AggregatorKind::linear, AggregatorKind::dw_linear,
                                 AggregatorKind::mlp};
const CommKind kComms[] = {CommKind::none, CommKind::shift, CommKind::shuffle, CommKind::msg};

std::string combo(const char *prefix, AggregatorKind k, CommKind c) {
  return std::string(prefix) + "-" + to_string(k) + "-" + to_string(c);
}

// Every parameter nudged away from its init so zero biases and unit gains
// do not hide ordering mistakes.
ParamTable<double> perturbed(const ModelConfig &cfg, std::uint64_t seed, double scale = 0.1) {
  ParamTable<double> t = build_model<double>(cfg, seed).params;
  std::uint64_t k = seed * 1000;
  for (auto &p : t) {
    const Tensor<double> noise = random_tensor(p.value.shape(), ++k, scale);
    auto d = p.value.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] += noise[i];
  }
  return t;
}

struct BlockRun {
  Tensor<double> x;
  std::optional<Tensor<double>> messengers;
};

BlockRun run_block(const ModelConfig &cfg, std::size_t stage, std::size_t index, const ParamTable<double> &params,
                   const Tensor<double> &x, const std::optional<Tensor<double>> &messengers = std::nullopt) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto &p : params)
    vars.push_back(g.constant(p.value));
  const auto start = param_index(model_param_shapes(cfg), "stages." + std::to_string(stage) + ".blocks." +
                                                              std::to_string(index) + ".norm1.gamma");
  ParamCursor<double> cursor(vars, start);
  BlockState<double> state{g.constant(x), std::nullopt};
  if (messengers)
    state.messengers = g.constant(*messengers);
  BlockState<double> out = block_forward(cfg, stage, index, cursor, state);
  BlockRun r{out.x.value(), std::nullopt};
  if (out.messengers)
    r.messengers = out.messengers->value();
  return r;
}

const Tensor<double> &param(const ParamTable<double> &t, const std::string &name) {
  for (const auto &p : t)
    if (p.name == name)
      return p.value;
  FAIL("no parameter " << name);
  return t.front().value;
}

ModelConfig grid_config(AggregatorKind k, CommKind c) {
  ModelConfig cfg;
  cfg.name = "grid14";
  cfg.width = 8;
  cfg.depths = {2, 1, 1, 1};
  cfg.window = 7;
  cfg.aggregator = k;
  cfg.comm = c;
  cfg.groups = 4;
  cfg.head_dim = 4;
  cfg.classes = 3;
  cfg.image_size = 56;
  return cfg;
}

} // namespace

TEST_CASE("presets build with the expected shapes") {
  const ModelConfig tiny = preset("swin-linmapper-tiny");
  CHECK(tiny.width == 64);
  CHECK(tiny.depths == std::array<std::size_t, 4>{2, 4, 22, 4});
  CHECK(tiny.aggregator == AggregatorKind::linear);
  CHECK(tiny.comm == CommKind::shift);
  const ModelConfig mhsa = preset("swin-t-mhsa");
  CHECK(mhsa.width == 96);
  CHECK(mhsa.depths == std::array<std::size_t, 4>{2, 2, 6, 2});
  CHECK(mhsa.aggregator == AggregatorKind::mhsa);
  CHECK(mhsa.heads(0) == 3);
  CHECK(mhsa.heads(3) == 24);
  const ModelConfig shuffle = preset("shuffle-linmapper-tiny");
  CHECK(shuffle.comm == CommKind::shuffle);
  CHECK(shuffle.width == 64);
  CHECK(shuffle.depths == tiny.depths);
  const ModelConfig msg = preset("msg-linmapper-tiny");
  CHECK(msg.comm == CommKind::msg);
  CHECK(msg.depths == tiny.depths);
  CHECK(preset("swin-linmapper-small").width == 96);
  CHECK(preset("swin-linmapper-base").width == 128);
  CHECK(preset("swin-linmapper-tiny-wide").width == 112);
  CHECK(tiny.window == 7);
  CHECK(tiny.ffn_ratio == 4);
}

TEST_CASE("unknown preset names list the available ones") {
  try {
    preset("no-such-preset");
    FAIL("expected ConfigError");
  } catch (const ConfigError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("no-such-preset") != std::string::npos);
    CHECK(msg.find("swin-linmapper-tiny") != std::string::npos);
    CHECK(msg.find("swin-t-mhsa") != std::string::npos);
  }
}

TEST_CASE("every preset builds a valid config whose JSON round-trips") {
  for (const auto &name : preset_names()) {
    const ModelConfig cfg = preset(name);
    CHECK_NOTHROW(cfg.validate());
    const ModelConfig back = nlohmann::json(cfg).get<ModelConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(cfg));
  }
}

TEST_CASE("configuration contradictions are named") {
  ModelConfig cfg = preset("desk-mhsa-shift");
  cfg.head_dim = 3; // 16 channels do not split into heads of 3
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = preset("desk-linear-msg");
  cfg.region = 3; // 9 groups do not divide 16 channels
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("region"), ConfigError);
  cfg = preset("desk-linear-shift");
  cfg.depths[2] = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"width", 8}, {"colour", "red"}}).get<ModelConfig>(), ConfigError);
}

TEST_CASE("build_model is deterministic per seed") {
  const ModelConfig cfg = preset("desk-mhsa-msg");
  const auto a = build_model<float>(cfg, 7), b = build_model<float>(cfg, 7), c = build_model<float>(cfg, 8);
  REQUIRE(a.params.size() == b.params.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].name == b.params[i].name);
    CHECK(a.params[i].value.bit_equal(b.params[i].value));
    any_diff |= !a.params[i].value.bit_equal(c.params[i].value);
  }
  CHECK(any_diff);
}

TEST_CASE("parameter table names are unique and match the declared shapes") {
  for (const char *name : {"swin-linmapper-tiny", "msg-linmapper-tiny", "swin-t-mhsa", "swin-mlp-tiny"}) {
    const ModelConfig cfg = preset(name);
    const auto shapes = model_param_shapes(cfg);
    std::set<std::string> seen;
    for (const auto &s : shapes)
      CHECK(seen.insert(s.name).second);
    CHECK(param_index(shapes, "head.fc.weight") == shapes.size() - 2);
    CHECK_THROWS(param_index(shapes, "nope"));
  }
}

TEST_CASE("stem: 224 input gives a 56 grid and the stage grids halve") {
  const ModelConfig cfg = preset("swin-linmapper-tiny");
  const auto grids = stage_grids(cfg, 224, 224);
  const std::size_t want[] = {56, 28, 14, 7};
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(grids[s].height == want[s]);
    CHECK(grids[s].width == want[s]);
  }
}

TEST_CASE("stem: zero image and zero bias give beta after the norm") {
  const ModelConfig cfg = preset("micro-linear-shift");
  ParamTable<double> params = perturbed(cfg, 3);
  params[1].value = Tensor<double>(params[1].value.shape()); // stem.proj.bias
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto &p : params)
    vars.push_back(g.constant(p.value));
  ParamCursor<double> cursor(vars);
  const Tensor<double> out = stem_forward(cfg, cursor, g.constant(Tensor<double>({2, 8, 8, 3}))).value();
  const Tensor<double> &beta = param(params, "stem.norm.beta");
  REQUIRE(out.shape() == Shape{2, 2, 2, cfg.width});
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < cfg.width; ++c)
      CHECK(out[t * cfg.width + c] == doctest::Approx(beta[c]).epsilon(1e-12));
}

TEST_CASE("stem: random 8x8 image matches a loop oracle") {
  const ModelConfig cfg = preset("micro-linear-shift");
  const ParamTable<double> params = perturbed(cfg, 4);
  const Tensor<double> img = random_tensor({1, 8, 8, 3}, 11);
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto &p : params)
    vars.push_back(g.constant(p.value));
  ParamCursor<double> cursor(vars);
  const Tensor<double> out = stem_forward(cfg, cursor, g.constant(img)).value();
  const auto &w = param(params, "stem.proj.weight"), &b = param(params, "stem.proj.bias");
  const auto &gamma = param(params, "stem.norm.gamma"), &beta = param(params, "stem.norm.beta");
  const std::size_t C = cfg.width;
  for (std::size_t ty = 0; ty < 2; ++ty)
    for (std::size_t tx = 0; tx < 2; ++tx) {
      std::vector<double> f(C);
      for (std::size_t o = 0; o < C; ++o) {
        double acc = b[o];
        std::size_t k = 0;
        for (std::size_t ky = 0; ky < 4; ++ky)
          for (std::size_t kx = 0; kx < 4; ++kx)
            for (std::size_t c = 0; c < 3; ++c, ++k)
              acc += w.at({o, k}) * img.at({0, ty * 4 + ky, tx * 4 + kx, c});
        f[o] = acc;
      }
      const double mean = std::accumulate(f.begin(), f.end(), 0.0) / double(C);
      double var = 0;
      for (double v : f)
        var += (v - mean) * (v - mean);
      var /= double(C);
      for (std::size_t o = 0; o < C; ++o) {
        const double want = (f[o] - mean) / std::sqrt(var + 1e-5) * gamma[o] + beta[o];
        CHECK(out.at({0, ty, tx, o}) == doctest::Approx(want).epsilon(1e-10));
      }
    }
}

TEST_CASE("identity at zero: zero aggregator and FFN weights make every block the identity") {
  for (auto k : kKinds)
    for (auto c : kComms) {
      const ModelConfig cfg = grid_config(k, c);
      ParamTable<double> params = build_model<double>(cfg, 1).params;
      for (auto &p : params)
        if (p.name.find(".agg.") != std::string::npos || p.name.find(".ffn.") != std::string::npos)
          p.value = Tensor<double>(p.value.shape());
      const Tensor<double> x = random_tensor({2, 14, 14, 8}, 5);
      std::optional<Tensor<double>> m;
      const std::size_t windows = 2 * 4;
      if (c == CommKind::msg)
        m = random_tensor({windows, 1, 8}, 6);
      for (std::size_t index : {0u, 1u}) {
        const BlockRun r = run_block(cfg, 0, index, params, x, m);
        CAPTURE(cfg.aggregator);
        CAPTURE(cfg.comm);
        CAPTURE(index);
        CHECK(r.x.bit_equal(x));
        if (m && index == 0)
          CHECK(r.messengers->bit_equal(*m));
      }
    }
}

TEST_CASE("identity at zero: the model output depends only on stem, merges and head") {
  ModelConfig cfg = preset("desk-linear-shuffle");
  ParamTable<double> params = perturbed(cfg, 2);
  for (auto &p : params)
    if (p.name.find(".agg.") != std::string::npos || p.name.find(".ffn.") != std::string::npos)
      p.value = Tensor<double>(p.value.shape());
    else if (p.name.find(".norm1.") != std::string::npos || p.name.find(".norm2.") != std::string::npos)
      p.value = Tensor<double>(p.value.shape());
  ModelConfig empty = cfg;
  empty.depths = {0, 0, 0, 0};
  ParamTable<double> kept;
  for (const auto &s : model_param_shapes(empty))
    kept.push_back({s.name, param(params, s.name)});
  const Tensor<double> img = random_tensor({2, 32, 32, 3}, 9);
  const Tensor<double> a = forward(Model<double>{cfg, params}, img);
  const Tensor<double> b = forward(Model<double>{empty, kept}, img);
  CHECK(a.bit_equal(b));
}

TEST_CASE("comm schedule: only odd blocks permute") {
  for (auto c : kComms) {
    const ModelConfig cfg = grid_config(AggregatorKind::linear, c);
    const IndexMap plain = partition_map({1, 14, 14, 1}, 7);
    const IndexMap even = block_entry_map(cfg, 0, 1, 14, 14, 1);
    const IndexMap odd = block_entry_map(cfg, 1, 1, 14, 14, 1);
    const IndexMap odd3 = block_entry_map(cfg, 3, 1, 14, 14, 1);
    CHECK(even.source == plain.source);
    CHECK(odd.source == odd3.source);
    const bool permutes = c == CommKind::shift || c == CommKind::shuffle;
    CHECK((odd.source != plain.source) == permutes);
  }
}

TEST_CASE("comm schedule: shift moves by half a window") {
  const ModelConfig cfg = grid_config(AggregatorKind::linear, CommKind::shift);
  const IndexMap odd = block_entry_map(cfg, 1, 1, 14, 14, 1);
  // The first token of the first window is grid position (3, 3).
  CHECK(odd.source[0] == 3 * 14 + 3);
}

TEST_CASE("one block on a 14x14 grid equals the composition of the individual ops") {
  for (auto k : kKinds)
    for (auto c : kComms)
      for (std::size_t index : {0u, 1u}) {
        const ModelConfig cfg = grid_config(k, c);
        const ParamTable<double> params = perturbed(cfg, 21);
        const std::size_t start = param_index(model_param_shapes(cfg), "stages.0.blocks." + std::to_string(index) +
                                                                             ".norm1.gamma");
        const Tensor<double> x = random_tensor({2, 14, 14, 8}, 22);
        std::optional<Tensor<double>> m;
        if (c == CommKind::msg)
          m = random_tensor({8, 1, 8}, 23);
        const BlockRun got = run_block(cfg, 0, index, params, x, m);

        // Oracle from the standalone geometry functions.
        const bool odd = index % 2 == 1;
        Tensor<double> y = x;
        if (odd && c == CommKind::shift)
          y = cyclic_shift(y, -3, -3);
        if (odd && c == CommKind::shuffle)
          y = spatial_shuffle(y, 7);
        const WindowSet<double> ws = window_partition(y, 7);
        Tensor<double> tokens = ws.windows;
        MessengerState<double> ms;
        if (m) {
          ms = {*m, 2, 2, 2, 2};
          if (odd)
            ms = messenger_exchange(ms);
          tokens = messenger_attach(ws, ms);
        }
        Graph<double> g;
        std::vector<Var<double>> vars;
        for (const auto &p : params)
          vars.push_back(g.constant(p.value));
        const AggregatorSpec spec = cfg.aggregator_spec(0);
        const std::size_t n_agg = aggregator_param_shapes(spec).size();
        const Var<double> t = g.constant(tokens);
        const Var<double> h1 = add(
            t, aggregate<double>(spec, std::span<const Var<double>>(vars).subspan(start + 2, n_agg),
                                 layer_norm(t, vars[start], vars[start + 1], 1e-5)));
        const std::size_t f = start + 2 + n_agg;
        const Var<double> h2 = add(
            h1, linear(gelu(linear(layer_norm(h1, vars[f], vars[f + 1], 1e-5), vars[f + 2], &vars[f + 3])),
                       vars[f + 4], &vars[f + 5]));
        Tensor<double> win = h2.value();
        if (m) {
          auto [w_only, msgs] = messenger_detach(win, 49);
          win = w_only;
          CHECK(max_abs_diff(msgs, *got.messengers) < 1e-12);
        }
        Tensor<double> back = window_reverse(WindowSet<double>{win, ws.origin});
        if (odd && c == CommKind::shift)
          back = cyclic_shift(back, 3, 3);
        if (odd && c == CommKind::shuffle)
          back = spatial_unshuffle(back, 7);
        CAPTURE(k);
        CAPTURE(c);
        CAPTURE(index);
        CHECK(max_abs_diff(back, got.x) < 1e-12);
      }
}

TEST_CASE("patch merge: shapes, quadrant order and a loop oracle") {
  const ModelConfig cfg = preset("micro-linear-shift");
  ParamTable<double> params = perturbed(cfg, 5);
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto &p : params)
    vars.push_back(g.constant(p.value));
  const auto shapes = model_param_shapes(cfg);
  const std::size_t C = cfg.width;

  SUBCASE("56x56xC -> 28x28x2C") {
    ParamCursor<double> cursor(vars, param_index(shapes, "merges.0.norm.gamma"));
    const Var<double> out = merge_forward(cfg, 0, cursor, g.constant(random_tensor({1, 56, 56, C}, 1)));
    CHECK(out.shape() == Shape{1, 28, 28, 2 * C});
  }
  SUBCASE("random case vs loop oracle") {
    const Tensor<double> x = random_tensor({2, 6, 4, C}, 2);
    ParamCursor<double> cursor(vars, param_index(shapes, "merges.0.norm.gamma"));
    const Tensor<double> out = merge_forward(cfg, 0, cursor, g.constant(x)).value();
    const auto &gamma = param(params, "merges.0.norm.gamma"), &beta = param(params, "merges.0.norm.beta");
    const auto &w = param(params, "merges.0.reduce.weight");
    const std::size_t dy[] = {0, 1, 0, 1}, dx[] = {0, 0, 1, 1};
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t xx = 0; xx < 2; ++xx) {
          std::vector<double> cat;
          for (std::size_t q = 0; q < 4; ++q)
            for (std::size_t c = 0; c < C; ++c)
              cat.push_back(x.at({b, 2 * y + dy[q], 2 * xx + dx[q], c}));
          const double mean = std::accumulate(cat.begin(), cat.end(), 0.0) / double(cat.size());
          double var = 0;
          for (double v : cat)
            var += (v - mean) * (v - mean);
          var /= double(cat.size());
          for (std::size_t i = 0; i < cat.size(); ++i)
            cat[i] = (cat[i] - mean) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
          for (std::size_t o = 0; o < 2 * C; ++o) {
            double acc = 0;
            for (std::size_t i = 0; i < 4 * C; ++i)
              acc += w.at({o, i}) * cat[i];
            CHECK(out.at({b, y, xx, o}) == doctest::Approx(acc).epsilon(1e-10));
          }
        }
  }
  SUBCASE("identity-selecting weights reproduce a chosen quadrant") {
    const std::size_t shift = 2 * C; // quadrant (0, 1), the third in concat order
    for (auto &p : params) {
      if (p.name == "merges.0.norm.gamma")
        p.value = Tensor<double>::full(p.value.shape(), 1.0);
      if (p.name == "merges.0.norm.beta")
        p.value = Tensor<double>(p.value.shape());
      if (p.name == "merges.0.reduce.weight") {
        Tensor<double> w(p.value.shape());
        for (std::size_t o = 0; o < C; ++o)
          w.mutable_data()[o * 4 * C + shift + o] = 1.0;
        p.value = w;
      }
    }
    Graph<double> g2;
    std::vector<Var<double>> v2;
    for (const auto &p : params)
      v2.push_back(g2.constant(p.value));
    // Every 2x2 neighbourhood holds zero-mean unit-variance values, so the
    // norm leaves them unchanged and the output is the (0, 1) token.
    Tensor<double> x({1, 2, 2, C});
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t c = 0; c < C; ++c)
        x.mutable_data()[q * C + c] = ((q * C + c) % 2 == 0 ? 1.0 : -1.0);
    ParamCursor<double> cursor(v2, param_index(shapes, "merges.0.norm.gamma"));
    const Tensor<double> out = merge_forward(cfg, 0, cursor, g2.constant(x)).value();
    const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t o = 0; o < C; ++o)
      CHECK(out[o] == doctest::Approx(x.at({0, 1, 0, o}) * scale).epsilon(1e-12));
    for (std::size_t o = C; o < 2 * C; ++o)
      CHECK(out[o] == 0.0);
  }
}

TEST_CASE("zero-initialised head gives zero logits for any input") {
  const ModelConfig cfg = preset("desk-mhsa-shift");
  const Model<float> model = build_model<float>(cfg, 3);
  for (const auto &p : model.params)
    if (p.name.rfind("head.fc", 0) == 0 && p.name.find("bias") != std::string::npos)
      CHECK(p.value.bit_equal(Tensor<float>(p.value.shape())));
  Model<float> zeroed = model;
  for (auto &p : zeroed.params)
    if (p.name.rfind("head.fc", 0) == 0)
      p.value = Tensor<float>(p.value.shape());
  const Tensor<float> logits = forward(zeroed, random_tensor<float>({3, 32, 32, 3}, 4));
  CHECK(logits.shape() == Shape{3, 4});
  for (float v : logits.data())
    CHECK(v == 0.0f);
}

TEST_CASE("batch permutation permutes the logits") {
  for (const char *name : {"desk-linear-shift", "desk-mhsa-msg", "desk-mlp-shuffle"}) {
    const Model<double> model{preset(name), perturbed(preset(name), 6)};
    const Tensor<double> img = random_tensor({4, 32, 32, 3}, 7);
    const std::size_t order[] = {2, 0, 3, 1};
    const std::size_t per = 32 * 32 * 3;
    Tensor<double> swapped(img.shape());
    for (std::size_t i = 0; i < 4; ++i)
      std::copy_n(img.ptr() + order[i] * per, per, swapped.mutable_data().data() + i * per);
    const Tensor<double> a = forward(model, img), b = forward(model, swapped);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(b.at({i, c}) == doctest::Approx(a.at({order[i], c})).epsilon(1e-12));
  }
}

TEST_CASE("tiny config forward matches the fully looped re-implementation") {
  for (auto k : kKinds)
    for (auto c : kComms) {
      const ModelConfig cfg = preset(combo("micro", k, c));
      const ParamTable<double> params = perturbed(cfg, 8);
      const Tensor<double> img = random_tensor({2, 16, 16, 3}, 9);
      const Tensor<double> fast = forward(Model<double>{cfg, params}, img);
      reference::Forward<double> ref(cfg, params);
      const std::vector<double> slow = ref.logits(img);
      const Tensor<double> slow_t(fast.shape(), slow);
      CAPTURE(cfg.name);
      CHECK(max_rel_error(fast, slow_t) <= 1e-4);
      CHECK(max_abs_diff(fast, slow_t) < 1e-10);
    }
}

TEST_CASE("desk configs match the looped re-implementation, padding included") {
  for (auto k : kKinds)
    for (auto c : {CommKind::shift, CommKind::shuffle, CommKind::msg}) {
      const ModelConfig cfg = preset(combo("desk", k, c));
      const ParamTable<double> params = perturbed(cfg, 10);
      const Tensor<double> img = random_tensor({1, 36, 28, 3}, 11);
      const Tensor<double> fast = forward(Model<double>{cfg, params}, img);
      reference::Forward<double> ref(cfg, params);
      const Tensor<double> slow(fast.shape(), ref.logits(img));
      CAPTURE(cfg.name);
      CHECK(max_rel_error(fast, slow) <= 1e-4);
    }
}

TEST_CASE("resolution robustness: any input at least 4 windows wide runs") {
  std::mt19937_64 rng(12);
  for (auto k : kKinds)
    for (auto c : kComms) {
      const ModelConfig cfg = preset(combo("desk", k, c));
      const Model<float> model = build_model<float>(cfg, 1);
      for (int trial = 0; trial < 2; ++trial) {
        const std::size_t h = 16 + rng() % 30, w = 16 + rng() % 30;
        CAPTURE(cfg.name);
        CAPTURE(h);
        CAPTURE(w);
        const Tensor<float> logits = forward(model, random_tensor<float>({1, h, w, 3}, rng()));
        CHECK(logits.shape() == Shape{1, 4});
        CHECK(logits.all_finite());
      }
    }
}

TEST_CASE("non-finite inputs are reported") {
  const Model<float> model = build_model<float>(preset("desk-linear-shift"), 1);
  Tensor<float> img({1, 32, 32, 3});
  img.mutable_data()[17] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(forward(model, img), NumericError);
}

TEST_CASE("end-to-end gradient check on the tiny config, 10 seeds") {
  for (const char *name : {"micro-linear-shift", "micro-mhsa-msg", "micro-mlp-shuffle", "micro-dw_linear-none"})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const GradCheckResult r = gradient_check_model(preset(name), seed, 1e-4, 6);
      CAPTURE(name);
      CAPTURE(seed);
      CAPTURE(r.worst_param);
      CHECK(r.max_rel_error < 1e-4);
    }
}
