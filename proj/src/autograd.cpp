#include <winmix/autograd.hpp>

#include <algorithm>
#include <cmath>

namespace winmix {

template <typename T> const Tensor<T> &Gradients<T>::of(const Var<T> &leaf) const {
  if (leaf.graph != graph_ || leaf.id >= is_leaf_.size() || !is_leaf_[leaf.id])
    throw std::invalid_argument("gradient requested for a variable that is not a leaf of this graph");
  return grads_[leaf.id];
}

template <typename T> Var<T> Graph<T>::leaf(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T> Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(const char *op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  for (const auto &v : inputs) {
    if (v.graph != this)
      throw std::invalid_argument(std::string(op) + ": input belongs to a different graph");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad)
    n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T> Gradients<T> Graph<T>::backward(const Var<T> &loss) {
  if (loss.graph != this)
    throw std::invalid_argument("backward: loss belongs to a different graph");
  if (nodes_[loss.id].value.size() != 1)
    throw DimensionError("backward needs a scalar loss, got shape " + to_string(nodes_[loss.id].value.shape()));
  std::vector<Tensor<T>> grads(nodes_.size());
  grads[loss.id] = Tensor<T>::full(nodes_[loss.id].value.shape(), T(1));
  std::vector<Tensor<T> *> slots;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node &n = nodes_[i];
    if (grads[i].empty() || !n.backward)
      continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t in = n.inputs[k];
      if (!nodes_[in].requires_grad)
        continue;
      if (grads[in].empty())
        grads[in] = Tensor<T>(nodes_[in].value.shape());
      slots[k] = &grads[in];
    }
    n.backward(grads[i], slots);
    if (!n.leaf)
      grads[i] = Tensor<T>();
  }
  Gradients<T> out;
  out.graph_ = this;
  out.is_leaf_.resize(nodes_.size());
  out.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf)
      continue;
    out.is_leaf_[i] = true;
    out.grads_[i] = grads[i].empty() ? Tensor<T>(nodes_[i].value.shape()) : std::move(grads[i]);
  }
  return out;
}

namespace {

template <typename T> void accumulate(Tensor<T> *dst, const Tensor<T> &g) {
  if (!dst)
    return;
  auto d = dst->mutable_data();
  const T *src = g.ptr();
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] += src[i];
}

template <typename T> Graph<T> *graph_of(const Var<T> &v) {
  if (!v.graph)
    throw std::invalid_argument("operation on an unbound variable");
  return v.graph;
}

} // namespace

template <typename T> Var<T> matmul(const Var<T> &a, const Var<T> &b) {
  Tensor<T> av = a.value(), bv = b.value();
  Tensor<T> out = matmul(av, bv);
  return graph_of(a)->record("matmul", out, {a, b}, [av, bv](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
    const std::size_t m = av.dim(av.rank() - 2), k = av.dim(av.rank() - 1), n = bv.dim(bv.rank() - 1);
    const bool a_batched = av.rank() > 2, b_batched = bv.rank() > 2;
    const std::size_t batch = g.size() / (m * n);
    if (gi[0]) {
      Tensor<T> bt = transpose_last2(bv);
      auto d = gi[0]->mutable_data();
      for (std::size_t i = 0; i < batch; ++i)
        gemm(g.ptr() + i * m * n, bt.ptr() + (b_batched ? i * k * n : 0), d.data() + (a_batched ? i * m * k : 0), m,
             n, k, false, true);
    }
    if (gi[1]) {
      auto d = gi[1]->mutable_data();
      for (std::size_t i = 0; i < batch; ++i)
        gemm(av.ptr() + (a_batched ? i * m * k : 0), g.ptr() + i * m * n, d.data() + (b_batched ? i * k * n : 0), k,
             m, n, true, true);
    }
  });
}

template <typename T> Var<T> linear(const Var<T> &x, const Var<T> &w, const Var<T> *bias) {
  Tensor<T> xv = x.value(), wv = w.value();
  const bool grouped = wv.rank() == 3;
  if (wv.rank() != 2 && !grouped)
    throw DimensionError("linear weight must be [out, in] or [groups, out, in], got " + to_string(wv.shape()));
  const std::size_t groups = grouped ? wv.dim(0) : 1;
  const std::size_t out_f = wv.dim(wv.rank() - 2), in_f = wv.dim(wv.rank() - 1);
  if (xv.rank() == 0 || xv.dim(xv.rank() - 1) != in_f || (grouped && (xv.rank() < 2 || xv.dim(0) != groups)))
    throw DimensionError("linear input " + to_string(xv.shape()) + " does not match weight " + to_string(wv.shape()));
  Tensor<T> bv;
  if (bias) {
    bv = bias->value();
    const Shape want = grouped ? Shape{groups, out_f} : Shape{out_f};
    if (bv.shape() != want)
      throw DimensionError("linear bias " + to_string(bv.shape()) + " does not match weight " + to_string(wv.shape()));
  }
  const std::size_t rows = xv.size() / in_f / groups;
  Shape out_shape = xv.shape();
  out_shape.back() = out_f;
  Tensor<T> out(out_shape);
  {
    Tensor<T> wt = transpose_last2(wv);
    auto o = out.mutable_data();
    for (std::size_t g = 0; g < groups; ++g) {
      T *dst = o.data() + g * rows * out_f;
      if (bias)
        for (std::size_t r = 0; r < rows; ++r)
          std::copy(bv.ptr() + g * out_f, bv.ptr() + (g + 1) * out_f, dst + r * out_f);
      gemm(xv.ptr() + g * rows * in_f, wt.ptr() + g * in_f * out_f, dst, rows, in_f, out_f, false, true);
    }
  }
  std::vector<Var<T>> inputs{x, w};
  if (bias)
    inputs.push_back(*bias);
  return graph_of(x)->record(
      "linear", out, inputs, [xv, wv, groups, rows, in_f, out_f](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
        for (std::size_t grp = 0; grp < groups; ++grp) {
          const T *gp = g.ptr() + grp * rows * out_f;
          if (gi[0])
            gemm(gp, wv.ptr() + grp * out_f * in_f, gi[0]->mutable_data().data() + grp * rows * in_f, rows, out_f,
                 in_f, false, true);
          if (gi[1])
            gemm(gp, xv.ptr() + grp * rows * in_f, gi[1]->mutable_data().data() + grp * out_f * in_f, out_f, rows,
                 in_f, true, true);
          if (gi.size() > 2 && gi[2]) {
            T *db = gi[2]->mutable_data().data() + grp * out_f;
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < out_f; ++j)
                db[j] += gp[r * out_f + j];
          }
        }
      });
}

template <typename T> Var<T> transpose_last2(const Var<T> &a) {
  return graph_of(a)->record("transpose", transpose_last2(a.value()), {a},
                             [](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               accumulate(gi[0], transpose_last2(g));
                             });
}

template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b) {
  return graph_of(a)->record("add", add(a.value(), b.value()), {a, b},
                             [](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               accumulate(gi[0], g);
                               accumulate(gi[1], g);
                             });
}

template <typename T> Var<T> mul(const Var<T> &a, const Var<T> &b) {
  Tensor<T> av = a.value(), bv = b.value();
  return graph_of(a)->record("mul", mul(av, bv), {a, b}, [av, bv](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
    if (gi[0])
      accumulate(gi[0], mul(g, bv));
    if (gi[1])
      accumulate(gi[1], mul(g, av));
  });
}

template <typename T> Var<T> scale(const Var<T> &a, T factor) {
  return graph_of(a)->record("scale", scale(a.value(), factor), {a},
                             [factor](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               accumulate(gi[0], scale(g, factor));
                             });
}

template <typename T> Var<T> add_broadcast(const Var<T> &a, const Var<T> &b) {
  const Shape bs = b.shape();
  return graph_of(a)->record("add_broadcast", add_broadcast(a.value(), b.value()), {a, b},
                             [bs](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               accumulate(gi[0], g);
                               if (gi[1])
                                 accumulate(gi[1], sum_to_shape(g, bs));
                             });
}

template <typename T> Var<T> broadcast_to(const Var<T> &a, const Shape &shape) {
  const Shape as = a.shape();
  return graph_of(a)->record("broadcast_to", broadcast_to(a.value(), shape), {a},
                             [as](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               accumulate(gi[0], sum_to_shape(g, as));
                             });
}

template <typename T> Var<T> reshape(const Var<T> &a, Shape shape) {
  return graph_of(a)->record("reshape", a.value().reshape(std::move(shape)), {a},
                             [](const Tensor<T> &g, std::span<Tensor<T> *> gi) { accumulate(gi[0], g); });
}

template <typename T> Var<T> gather(const Var<T> &a, IndexMapPtr map) {
  Tensor<T> out = gather(a.value(), *map);
  return graph_of(a)->record("gather", std::move(out), {a},
                             [map](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               if (!gi[0])
                                 return;
                               auto d = gi[0]->mutable_data();
                               const T *gp = g.ptr();
                               for (std::size_t i = 0; i < map->source.size(); ++i) {
                                 const auto s = map->source[i];
                                 if (s >= 0)
                                   d[static_cast<std::size_t>(s)] += gp[i];
                               }
                             });
}

template <typename T> Var<T> concat(const Var<T> &a, const Var<T> &b, std::size_t axis) {
  const std::size_t na = a.shape()[axis], nb = b.shape()[axis];
  return graph_of(a)->record("concat", concat(a.value(), b.value(), axis), {a, b},
                             [axis, na, nb](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               if (gi[0])
                                 accumulate(gi[0], slice(g, axis, 0, na));
                               if (gi[1])
                                 accumulate(gi[1], slice(g, axis, na, nb));
                             });
}

template <typename T> Var<T> slice(const Var<T> &a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape as = a.shape();
  return graph_of(a)->record("slice", slice(a.value(), axis, start, length), {a},
                             [as, axis, start, length](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               if (!gi[0])
                                 return;
                               std::size_t outer = 1, inner = 1;
                               for (std::size_t i = 0; i < axis; ++i)
                                 outer *= as[i];
                               for (std::size_t i = axis + 1; i < as.size(); ++i)
                                 inner *= as[i];
                               auto d = gi[0]->mutable_data();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < length * inner; ++j)
                                   d[(o * as[axis] + start) * inner + j] += g[o * length * inner + j];
                             });
}

template <typename T> Var<T> mean_axis(const Var<T> &a, std::size_t axis) {
  const Shape as = a.shape();
  return graph_of(a)->record("mean_axis", mean_axis(a.value(), axis), {a},
                             [as, axis](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               if (!gi[0])
                                 return;
                               std::size_t outer = 1, inner = 1;
                               for (std::size_t i = 0; i < axis; ++i)
                                 outer *= as[i];
                               for (std::size_t i = axis + 1; i < as.size(); ++i)
                                 inner *= as[i];
                               const T inv = T(1) / static_cast<T>(as[axis]);
                               auto d = gi[0]->mutable_data();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t k = 0; k < as[axis]; ++k)
                                   for (std::size_t j = 0; j < inner; ++j)
                                     d[(o * as[axis] + k) * inner + j] += g[o * inner + j] * inv;
                             });
}

template <typename T> Var<T> sum(const Var<T> &a) {
  return graph_of(a)->record("sum", Tensor<T>::scalar(sum(a.value())), {a},
                             [](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                               if (!gi[0])
                                 return;
                               const T v = g[0];
                               for (auto &d : gi[0]->mutable_data())
                                 d += v;
                             });
}

template <typename T> Var<T> softmax_last_axis(const Var<T> &x) {
  Tensor<T> y = softmax_last_axis(x.value());
  return graph_of(x)->record("softmax", y, {x}, [y](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
    if (!gi[0])
      return;
    const std::size_t n = y.dim(y.rank() - 1);
    auto d = gi[0]->mutable_data();
    for (std::size_t r = 0; r < y.size(); r += n) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j)
        dot += g[r + j] * y[r + j];
      for (std::size_t j = 0; j < n; ++j)
        d[r + j] += y[r + j] * (g[r + j] - dot);
    }
  });
}

template <typename T> Var<T> gelu(const Var<T> &x) {
  Tensor<T> xv = x.value();
  return graph_of(x)->record("gelu", gelu(xv), {x}, [xv](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
    if (gi[0])
      accumulate(gi[0], gelu_grad(xv, g));
  });
}

template <typename T> Var<T> layer_norm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta, T eps) {
  auto r = layer_norm_forward(x.value(), gamma.value(), beta.value(), eps);
  Tensor<T> nrm = r.normalized, inv = r.inv_std, gv = gamma.value();
  return graph_of(x)->record(
      "layer_norm", r.out, {x, gamma, beta}, [nrm, inv, gv](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
        const std::size_t c = gv.size(), rows = nrm.size() / c;
        std::span<T> dx = gi[0] ? gi[0]->mutable_data() : std::span<T>();
        std::span<T> dg = gi[1] ? gi[1]->mutable_data() : std::span<T>();
        std::span<T> db = gi[2] ? gi[2]->mutable_data() : std::span<T>();
        for (std::size_t row = 0; row < rows; ++row) {
          const T *gr = g.ptr() + row * c;
          const T *hr = nrm.ptr() + row * c;
          if (!dx.empty()) {
            T mean_d = 0, mean_dh = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = gr[j] * gv[j];
              mean_d += d;
              mean_dh += d * hr[j];
            }
            mean_d /= static_cast<T>(c);
            mean_dh /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j)
              dx[row * c + j] += inv[row] * (gr[j] * gv[j] - mean_d - hr[j] * mean_dh);
          }
          for (std::size_t j = 0; j < c; ++j) {
            if (!dg.empty())
              dg[j] += gr[j] * hr[j];
            if (!db.empty())
              db[j] += gr[j];
          }
        }
      });
}

template <typename T> Var<T> cross_entropy(const Var<T> &logits, std::vector<int> labels, T smoothing) {
  Tensor<T> grad;
  const T loss = cross_entropy(logits.value(), std::span<const int>(labels), smoothing, &grad);
  return graph_of(logits)->record("cross_entropy", Tensor<T>::scalar(loss), {logits},
                                  [grad](const Tensor<T> &g, std::span<Tensor<T> *> gi) {
                                    if (gi[0])
                                      accumulate(gi[0], scale(grad, g[0]));
                                  });
}

template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T> &)> &f, const Tensor<T> &x, T h) {
  if (!(h > 0))
    throw std::invalid_argument("finite difference step must be positive");
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  auto gd = grad.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto p = probe.mutable_data();
    const T orig = p[i];
    p[i] = orig + h;
    const T up = f(probe);
    p = probe.mutable_data();
    p[i] = orig - h;
    const T down = f(probe);
    p = probe.mutable_data();
    p[i] = orig;
    gd[i] = (up - down) / (T(2) * h);
  }
  return grad;
}

#define WINMIX_INSTANTIATE(T)                                                                                          \
  template class Gradients<T>;                                                                                         \
  template class Graph<T>;                                                                                             \
  template Var<T> matmul(const Var<T> &, const Var<T> &);                                                              \
  template Var<T> linear(const Var<T> &, const Var<T> &, const Var<T> *);                                              \
  template Var<T> transpose_last2(const Var<T> &);                                                                     \
  template Var<T> add(const Var<T> &, const Var<T> &);                                                                 \
  template Var<T> mul(const Var<T> &, const Var<T> &);                                                                 \
  template Var<T> scale(const Var<T> &, T);                                                                            \
  template Var<T> add_broadcast(const Var<T> &, const Var<T> &);                                                       \
  template Var<T> broadcast_to(const Var<T> &, const Shape &);                                                         \
  template Var<T> reshape(const Var<T> &, Shape);                                                                      \
  template Var<T> gather(const Var<T> &, IndexMapPtr);                                                                 \
  template Var<T> concat(const Var<T> &, const Var<T> &, std::size_t);                                                 \
  template Var<T> slice(const Var<T> &, std::size_t, std::size_t, std::size_t);                                        \
  template Var<T> mean_axis(const Var<T> &, std::size_t);                                                              \
  template Var<T> sum(const Var<T> &);                                                                                 \
  template Var<T> softmax_last_axis(const Var<T> &);                                                                   \
  template Var<T> gelu(const Var<T> &);                                                                                \
  template Var<T> layer_norm(const Var<T> &, const Var<T> &, const Var<T> &, T);                                       \
  template Var<T> cross_entropy(const Var<T> &, std::vector<int>, T);                                                  \
  template Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T> &)> &, const Tensor<T> &, T);

WINMIX_INSTANTIATE(float)
WINMIX_INSTANTIATE(double)

} // namespace winmix
