#pragma once

// Scalar-by-scalar re-implementation of the model forward pass. Slow and
// independent of the tape and index-map machinery; used to check the fast
// path and, instantiated with CountingScalar, to count multiplies.

#include <winmix/config.hpp>
#include <winmix/params.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace winmix::reference {

inline std::uint64_t &multiply_count() {
  thread_local std::uint64_t n = 0;
  return n;
}

inline bool &counting_enabled() {
  thread_local bool on = true;
  return on;
}

/// Multiplies inside this scope are not counted (norms, softmax, GELU,
/// means, the attention scale).
class NoCount {
public:
  NoCount() : previous_(counting_enabled()) { counting_enabled() = false; }
  ~NoCount() { counting_enabled() = previous_; }
  NoCount(const NoCount &) = delete;
  NoCount &operator=(const NoCount &) = delete;

private:
  bool previous_;
};

/// A double that counts every multiplication it takes part in.
struct CountingScalar {
  double v = 0;
  CountingScalar() = default;
  CountingScalar(double x) : v(x) {}
};

inline CountingScalar operator*(CountingScalar a, CountingScalar b) {
  if (counting_enabled())
    ++multiply_count();
  return {a.v * b.v};
}
inline CountingScalar operator+(CountingScalar a, CountingScalar b) { return {a.v + b.v}; }
inline CountingScalar operator-(CountingScalar a, CountingScalar b) { return {a.v - b.v}; }
inline CountingScalar &operator+=(CountingScalar &a, CountingScalar b) { return a = a + b; }

inline double value(double x) { return x; }
inline double value(CountingScalar x) { return x.v; }

template <typename S> class Forward {
public:
  Forward(const ModelConfig &cfg, const ParamTable<double> &params) : cfg_(cfg) {
    for (const auto &p : params)
      params_.emplace(p.name, p.value);
  }

  /// images [B, H, W, in_chans] -> logits, row-major [B, classes].
  std::vector<double> logits(const Tensor<double> &images) {
    const std::size_t batch = images.dim(0);
    std::vector<double> out;
    for (std::size_t b = 0; b < batch; ++b) {
      Grid g = stem(images, b);
      for (std::size_t s = 0; s < 4; ++s) {
        g = stage(g, s);
        if (s < 3)
          g = merge(g, s);
      }
      for (double v : head(g))
        out.push_back(v);
    }
    return out;
  }

private:
  struct Grid {
    std::size_t h = 0, w = 0, c = 0;
    std::vector<S> v;
    S &at(std::size_t y, std::size_t x, std::size_t ch) { return v[(y * w + x) * c + ch]; }
  };

  const ModelConfig &cfg_;
  std::map<std::string, Tensor<double>> params_;

  const Tensor<double> &p(const std::string &name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw ConfigError("reference forward: missing parameter " + name);
    return it->second;
  }

  // y[o] = bias[o] + sum_k W[o][k] x[k], W read at `offset`.
  std::vector<S> affine(const Tensor<double> &w, std::size_t offset, const Tensor<double> *bias, std::size_t bias_offset,
                        const std::vector<S> &x, std::size_t out) const {
    const std::size_t in = x.size();
    std::vector<S> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      S acc = bias ? S((*bias)[bias_offset + o]) : S(0.0);
      for (std::size_t k = 0; k < in; ++k)
        acc += S(w[offset + o * in + k]) * x[k];
      y[o] = acc;
    }
    return y;
  }

  void norm(S *x, std::size_t c, const std::string &prefix) const {
    NoCount guard;
    const auto &gamma = p(prefix + ".gamma"), &beta = p(prefix + ".beta");
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < c; ++i)
      mean += value(x[i]);
    mean /= double(c);
    for (std::size_t i = 0; i < c; ++i)
      var += (value(x[i]) - mean) * (value(x[i]) - mean);
    var /= double(c);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t i = 0; i < c; ++i)
      x[i] = S((value(x[i]) - mean) * inv * gamma[i] + beta[i]);
  }

  static S gelu(S x) {
    NoCount guard;
    const double v = value(x);
    return S(0.5 * v * std::erfc(-v / std::sqrt(2.0)));
  }

  Grid stem(const Tensor<double> &img, std::size_t b) const {
    const std::size_t ph = cfg_.patch, hh = img.dim(1), ww = img.dim(2), ci = img.dim(3);
    Grid g{(hh + ph - 1) / ph, (ww + ph - 1) / ph, cfg_.width, {}};
    g.v.resize(g.h * g.w * g.c);
    for (std::size_t y = 0; y < g.h; ++y)
      for (std::size_t x = 0; x < g.w; ++x) {
        std::vector<S> patch(ph * ph * ci, S(0.0));
        for (std::size_t kh = 0; kh < ph; ++kh)
          for (std::size_t kw = 0; kw < ph; ++kw)
            for (std::size_t c = 0; c < ci; ++c) {
              const std::size_t iy = y * ph + kh, ix = x * ph + kw;
              if (iy < hh && ix < ww)
                patch[(kh * ph + kw) * ci + c] = S(img[((b * hh + iy) * ww + ix) * ci + c]);
            }
        auto e = affine(p("stem.proj.weight"), 0, &p("stem.proj.bias"), 0, patch, g.c);
        norm(e.data(), g.c, "stem.norm");
        std::copy(e.begin(), e.end(), g.v.begin() + (y * g.w + x) * g.c);
      }
    return g;
  }

  Grid merge(Grid &g, std::size_t s) const {
    const std::string prefix = "merges." + std::to_string(s);
    Grid out{(g.h + 1) / 2, (g.w + 1) / 2, 2 * g.c, {}};
    out.v.resize(out.h * out.w * out.c);
    const std::size_t dy[4] = {0, 1, 0, 1}, dx[4] = {0, 0, 1, 1};
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) {
        std::vector<S> cat(4 * g.c, S(0.0));
        for (std::size_t q = 0; q < 4; ++q) {
          const std::size_t sy = 2 * y + dy[q], sx = 2 * x + dx[q];
          if (sy < g.h && sx < g.w)
            for (std::size_t c = 0; c < g.c; ++c)
              cat[q * g.c + c] = g.at(sy, sx, c);
        }
        norm(cat.data(), 4 * g.c, prefix + ".norm");
        auto r = affine(p(prefix + ".reduce.weight"), 0, nullptr, 0, cat, out.c);
        std::copy(r.begin(), r.end(), out.v.begin() + (y * out.w + x) * out.c);
      }
    return out;
  }

  std::vector<double> head(Grid &g) const {
    for (std::size_t t = 0; t < g.h * g.w; ++t)
      norm(g.v.data() + t * g.c, g.c, "head.norm");
    std::vector<S> pooled(g.c);
    {
      NoCount guard;
      for (std::size_t ch = 0; ch < g.c; ++ch) {
        double sum = 0;
        for (std::size_t t = 0; t < g.h * g.w; ++t)
          sum += value(g.v[t * g.c + ch]);
        pooled[ch] = S(sum / double(g.h * g.w));
      }
    }
    auto y = affine(p("head.fc.weight"), 0, &p("head.fc.bias"), 0, pooled, cfg_.classes);
    std::vector<double> out;
    for (auto v : y)
      out.push_back(value(v));
    return out;
  }

  // Messenger tokens of every window, window-major [wy][wx][m][C].
  using Messengers = std::vector<S>;

  Grid stage(Grid g, std::size_t s) const {
    const std::size_t depth = cfg_.depths[s];
    if (depth == 0)
      return g;
    const std::size_t ws = cfg_.window, m = cfg_.comm == CommKind::msg ? cfg_.messengers : 0;
    std::size_t region = 1, hp = (g.h + ws - 1) / ws * ws, wp = (g.w + ws - 1) / ws * ws;
    if (m > 0 && (hp > ws || wp > ws) && cfg_.region > 1) {
      region = cfg_.region;
      hp = (g.h + ws * region - 1) / (ws * region) * ws * region;
      wp = (g.w + ws * region - 1) / (ws * region) * ws * region;
    }
    const std::size_t gh = hp / ws, gw = wp / ws;
    Messengers msg;
    if (m > 0) {
      const auto &init = p("stages." + std::to_string(s) + ".messengers");
      for (std::size_t wdx = 0; wdx < gh * gw; ++wdx)
        for (std::size_t i = 0; i < m * g.c; ++i)
          msg.push_back(S(init[i]));
    }
    for (std::size_t i = 0; i < depth; ++i)
      g = block(g, s, i, hp, wp, region, msg);
    return g;
  }

  Messengers exchange(const Messengers &msg, std::size_t gh, std::size_t gw, std::size_t m, std::size_t c,
                      std::size_t r) const {
    Messengers out(msg.size());
    const std::size_t slice = c / (r * r);
    for (std::size_t wy = 0; wy < gh; ++wy)
      for (std::size_t wx = 0; wx < gw; ++wx) {
        const std::size_t q = (wy % r) * r + wx % r;
        for (std::size_t slot = 0; slot < r * r; ++slot) {
          const std::size_t sy = wy / r * r + slot / r, sx = wx / r * r + slot % r;
          for (std::size_t k = 0; k < m; ++k)
            for (std::size_t e = 0; e < slice; ++e)
              out[((wy * gw + wx) * m + k) * c + slot * slice + e] = msg[((sy * gw + sx) * m + k) * c + q * slice + e];
        }
      }
    return out;
  }

  Grid block(const Grid &g, std::size_t s, std::size_t index, std::size_t hp, std::size_t wp, std::size_t region,
             Messengers &msg) const {
    const std::size_t ws = cfg_.window, c = g.c, gh = hp / ws, gw = wp / ws, wt = ws * ws;
    const std::size_t m = cfg_.comm == CommKind::msg ? cfg_.messengers : 0, tokens = wt + m;
    const bool odd = index % 2 == 1;
    const std::size_t shift = ws / 2, sh = hp / ws, sw = wp / ws;
    const std::string prefix = "stages." + std::to_string(s) + ".blocks." + std::to_string(index);

    // Padded grid coordinate that feeds window-grid coordinate (y, x).
    auto source = [&](std::size_t y, std::size_t x) {
      if (odd && cfg_.comm == CommKind::shift)
        return std::pair{(y + shift) % hp, (x + shift) % wp};
      if (odd && cfg_.comm == CommKind::shuffle)
        return std::pair{(y % ws) * sh + y / ws, (x % ws) * sw + x / ws};
      return std::pair{y, x};
    };

    if (m > 0 && odd && region > 1)
      msg = exchange(msg, gh, gw, m, c, region);

    Grid out = g;
    for (std::size_t wy = 0; wy < gh; ++wy)
      for (std::size_t wx = 0; wx < gw; ++wx) {
        std::vector<S> tok(tokens * c, S(0.0));
        for (std::size_t t = 0; t < wt; ++t) {
          auto [py, px] = source(wy * ws + t / ws, wx * ws + t % ws);
          if (py < g.h && px < g.w)
            for (std::size_t ch = 0; ch < c; ++ch)
              tok[t * c + ch] = g.v[(py * g.w + px) * c + ch];
        }
        for (std::size_t k = 0; k < m; ++k)
          for (std::size_t ch = 0; ch < c; ++ch)
            tok[(wt + k) * c + ch] = msg[((wy * gw + wx) * m + k) * c + ch];

        std::vector<S> normed = tok;
        for (std::size_t t = 0; t < tokens; ++t)
          norm(normed.data() + t * c, c, prefix + ".norm1");
        auto mixed = aggregate(normed, s, prefix + ".agg.", tokens);
        for (std::size_t i = 0; i < tok.size(); ++i)
          tok[i] += mixed[i];
        for (std::size_t t = 0; t < tokens; ++t) {
          std::vector<S> row(tok.begin() + t * c, tok.begin() + (t + 1) * c);
          norm(row.data(), c, prefix + ".norm2");
          auto hidden = affine(p(prefix + ".ffn.fc1.weight"), 0, &p(prefix + ".ffn.fc1.bias"), 0, row, cfg_.ffn_ratio * c);
          for (auto &h : hidden)
            h = gelu(h);
          auto y = affine(p(prefix + ".ffn.fc2.weight"), 0, &p(prefix + ".ffn.fc2.bias"), 0, hidden, c);
          for (std::size_t ch = 0; ch < c; ++ch)
            tok[t * c + ch] += y[ch];
        }

        for (std::size_t t = 0; t < wt; ++t) {
          auto [py, px] = source(wy * ws + t / ws, wx * ws + t % ws);
          if (py < g.h && px < g.w)
            for (std::size_t ch = 0; ch < c; ++ch)
              out.v[(py * g.w + px) * c + ch] = tok[t * c + ch];
        }
        for (std::size_t k = 0; k < m; ++k)
          for (std::size_t ch = 0; ch < c; ++ch)
            msg[((wy * gw + wx) * m + k) * c + ch] = tok[(wt + k) * c + ch];
      }
    return out;
  }

  std::vector<S> axial_map(const std::string &prefix, const char *axis, std::size_t group,
                           const std::vector<S> &v) const {
    const std::size_t n = v.size();
    const std::string a(axis);
    if (cfg_.aggregator == AggregatorKind::mlp) {
      const std::size_t hidden = cfg_.mlp_ratio * n;
      auto h = affine(p(prefix + a + "_w1"), 0, &p(prefix + a + "_b1"), 0, v, hidden);
      for (auto &e : h)
        e = gelu(e);
      return affine(p(prefix + a + "_w2"), 0, &p(prefix + a + "_b2"), 0, h, n);
    }
    const bool dw = cfg_.aggregator == AggregatorKind::dw_linear;
    return affine(p(prefix + "w_" + a), dw ? group * n * n : 0, &p(prefix + "b_" + a), dw ? group * n : 0, v, n);
  }

  std::vector<S> aggregate(const std::vector<S> &tok, std::size_t s, const std::string &prefix,
                           std::size_t tokens) const {
    const std::size_t c = cfg_.stage_channels(s), ws = cfg_.window, wt = ws * ws;
    if (cfg_.aggregator == AggregatorKind::mhsa)
      return attention(tok, s, prefix, tokens);
    const std::size_t gs = cfg_.group_size(s), n = gs * ws, groups = c / gs;
    std::vector<S> fused(tokens * c, S(0.0));
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t col = 0; col < ws; ++col) {
        std::vector<S> v(n);
        for (std::size_t k = 0; k < n; ++k)
          v[k] = tok[((k % ws) * ws + col) * c + g * gs + k / ws];
        auto y = axial_map(prefix, "h", g, v);
        for (std::size_t k = 0; k < n; ++k)
          fused[((k % ws) * ws + col) * c + g * gs + k / ws] += y[k];
      }
      for (std::size_t row = 0; row < ws; ++row) {
        auto at = [&](std::size_t k) {
          if (cfg_.layout == AxialLayout::faithful) {
            const std::size_t f = row * n + k;
            return (f % wt) * c + g * gs + f / wt;
          }
          return (row * ws + k % ws) * c + g * gs + k / ws;
        };
        std::vector<S> v(n);
        for (std::size_t k = 0; k < n; ++k)
          v[k] = tok[at(k)];
        auto y = axial_map(prefix, "w", g, v);
        for (std::size_t k = 0; k < n; ++k)
          fused[at(k)] += y[k];
      }
    }
    if (tokens > wt) {
      NoCount guard;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double window_mean = 0, messenger_mean = 0;
        for (std::size_t t = 0; t < wt; ++t)
          window_mean += value(tok[t * c + ch]);
        for (std::size_t t = wt; t < tokens; ++t)
          messenger_mean += value(tok[t * c + ch]);
        window_mean /= double(wt);
        messenger_mean /= double(tokens - wt);
        for (std::size_t t = 0; t < tokens; ++t)
          fused[t * c + ch] += S(t < wt ? messenger_mean : window_mean);
      }
    }
    std::vector<S> out(tokens * c);
    for (std::size_t t = 0; t < tokens; ++t) {
      std::vector<S> row(fused.begin() + t * c, fused.begin() + (t + 1) * c);
      auto y = affine(p(prefix + "w_p"), 0, &p(prefix + "b_p"), 0, row, c);
      std::copy(y.begin(), y.end(), out.begin() + t * c);
    }
    return out;
  }

  std::vector<S> attention(const std::vector<S> &tok, std::size_t s, const std::string &prefix,
                           std::size_t tokens) const {
    const std::size_t c = cfg_.stage_channels(s), heads = cfg_.heads(s), d = c / heads, ws = cfg_.window;
    const std::size_t wt = ws * ws, side = 2 * ws - 1;
    std::vector<std::vector<S>> qkv(tokens);
    for (std::size_t t = 0; t < tokens; ++t)
      qkv[t] = affine(p(prefix + "w_qkv"), 0, &p(prefix + "b_qkv"), 0,
                      std::vector<S>(tok.begin() + t * c, tok.begin() + (t + 1) * c), 3 * c);
    const auto &bias = p(prefix + "rel_bias");
    std::vector<S> mixed(tokens * c, S(0.0));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < tokens; ++i) {
        std::vector<S> score(tokens);
        for (std::size_t j = 0; j < tokens; ++j) {
          S acc(0.0);
          for (std::size_t e = 0; e < d; ++e)
            acc += qkv[i][h * d + e] * qkv[j][c + h * d + e];
          score[j] = acc;
        }
        std::vector<S> weight(tokens);
        {
          NoCount guard;
          double mx = -1e300;
          std::vector<double> z(tokens);
          for (std::size_t j = 0; j < tokens; ++j) {
            z[j] = value(score[j]) / std::sqrt(double(d));
            if (i < wt && j < wt) {
              const std::size_t dy = i / ws + ws - 1 - j / ws, dx = i % ws + ws - 1 - j % ws;
              z[j] += bias[(dy * side + dx) * heads + h];
            }
            mx = std::max(mx, z[j]);
          }
          double total = 0;
          for (auto &e : z)
            total += (e = std::exp(e - mx));
          for (std::size_t j = 0; j < tokens; ++j)
            weight[j] = S(z[j] / total);
        }
        for (std::size_t j = 0; j < tokens; ++j)
          for (std::size_t e = 0; e < d; ++e)
            mixed[i * c + h * d + e] += weight[j] * qkv[j][2 * c + h * d + e];
      }
    std::vector<S> out(tokens * c);
    for (std::size_t t = 0; t < tokens; ++t) {
      auto y = affine(p(prefix + "w_o"), 0, &p(prefix + "b_o"), 0,
                      std::vector<S>(mixed.begin() + t * c, mixed.begin() + (t + 1) * c), c);
      std::copy(y.begin(), y.end(), out.begin() + t * c);
    }
    return out;
  }
};

} // namespace winmix::reference
