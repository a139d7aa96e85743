#include <winmix/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace winmix {

std::size_t numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

std::string to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T> Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_ = std::make_shared<std::vector<T>>(numel(shape_), T(0));
}

template <typename T> Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  if (numel(shape_) != values.size())
    throw DimensionError("tensor of shape " + to_string(shape_) + " cannot hold " + std::to_string(values.size()) +
                         " values");
  data_ = std::make_shared<std::vector<T>>(std::move(values));
}

template <typename T> Tensor<T> Tensor<T>::full(Shape shape, T value) {
  std::vector<T> v(numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

template <typename T> std::span<const T> Tensor<T>::data() const {
  if (!data_)
    return {};
  return {data_->data(), data_->size()};
}

template <typename T> std::span<T> Tensor<T>::mutable_data() {
  if (!data_)
    return {};
  if (data_.use_count() > 1)
    data_ = std::make_shared<std::vector<T>>(*data_);
  return {data_->data(), data_->size()};
}

template <typename T> T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size())
    throw DimensionError("index rank " + std::to_string(index.size()) + " does not match shape " + to_string(shape_));
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis])
      throw DimensionError("index out of range for shape " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

template <typename T> T Tensor<T>::item() const {
  if (size() != 1)
    throw DimensionError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

template <typename T> Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (numel(shape) != size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template <typename T> bool Tensor<T>::all_finite() const {
  for (T v : data())
    if (!std::isfinite(v))
      return false;
  return true;
}

template <typename T> bool Tensor<T>::bit_equal(const Tensor &other) const {
  if (shape_ != other.shape_)
    return false;
  auto a = data(), b = other.data();
  return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                    [](T x, T y) { return std::memcmp(&x, &y, sizeof(T)) == 0; });
}

template <typename T> void require_finite(const Tensor<T> &t, const char *op) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op);
}

IndexMap invert(const IndexMap &map) {
  if (numel(map.source_shape) != numel(map.out_shape))
    throw DimensionError("cannot invert a non-square index map");
  IndexMap inv{map.out_shape, map.source_shape, std::vector<std::int64_t>(map.source.size(), -1)};
  for (std::size_t i = 0; i < map.source.size(); ++i) {
    auto s = map.source[i];
    if (s < 0 || inv.source[static_cast<std::size_t>(s)] >= 0)
      throw DimensionError("index map is not a permutation");
    inv.source[static_cast<std::size_t>(s)] = static_cast<std::int64_t>(i);
  }
  return inv;
}

IndexMap compose(const IndexMap &first, const IndexMap &second) {
  if (numel(first.out_shape) != numel(second.source_shape))
    throw DimensionError("cannot compose index maps " + to_string(first.out_shape) + " and " +
                         to_string(second.source_shape));
  IndexMap m{first.source_shape, second.out_shape, std::vector<std::int64_t>(second.source.size())};
  for (std::size_t i = 0; i < m.source.size(); ++i) {
    const auto s = second.source[i];
    m.source[i] = s < 0 ? -1 : first.source[static_cast<std::size_t>(s)];
  }
  return m;
}

namespace {

// C[m, n] += A[m, k] B[k, n], with A stored transposed when TransA. Each row
// is walked in column tiles held in registers; a tile starts from C, so every
// element still sums over p in ascending order.
template <typename T, bool TransA, std::size_t Width>
std::size_t gemm_tiles(const T *a, const T *b, T *c, std::size_t m, std::size_t k, std::size_t n, std::size_t i,
                       std::size_t j0) {
  for (; j0 + Width <= n; j0 += Width) {
    T acc[Width];
    for (std::size_t j = 0; j < Width; ++j)
      acc[j] = c[i * n + j0 + j];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = TransA ? a[p * m + i] : a[i * k + p];
      const T *brow = b + p * n + j0;
      for (std::size_t j = 0; j < Width; ++j)
        acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < Width; ++j)
      c[i * n + j0 + j] = acc[j];
  }
  return j0;
}

template <typename T, bool TransA>
void gemm_kernel(const T *a, const T *b, T *c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = gemm_tiles<T, TransA, 16>(a, b, c, m, k, n, i, 0);
    j = gemm_tiles<T, TransA, 4>(a, b, c, m, k, n, i, j);
    gemm_tiles<T, TransA, 1>(a, b, c, m, k, n, i, j);
  }
}

} // namespace

template <typename T>
void gemm(const T *a, const T *b, T *c, std::size_t m, std::size_t k, std::size_t n, bool trans_a, bool accumulate) {
  if (!accumulate)
    std::fill(c, c + m * n, T(0));
  if (trans_a)
    gemm_kernel<T, true>(a, b, c, m, k, n);
  else
    gemm_kernel<T, false>(a, b, c, m, k, n);
}

namespace {

Shape batch_of(const Shape &s) { return Shape(s.begin(), s.end() - 2); }

} // namespace

template <typename T> Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  const Shape ba = batch_of(a.shape()), bb = batch_of(b.shape());
  if (k != k2 || (!ba.empty() && !bb.empty() && ba != bb))
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Shape out_shape = ba.empty() ? bb : ba;
  const std::size_t batch = numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < batch; ++i) {
    const T *ap = a.ptr() + (ba.empty() ? 0 : i * m * k);
    const T *bp = b.ptr() + (bb.empty() ? 0 : i * k * n);
    gemm(ap, bp, o.data() + i * m * n, m, k, n, false, true);
  }
  return out;
}

template <typename T> Tensor<T> transpose_last2(const Tensor<T> &a) {
  if (a.rank() < 2)
    throw DimensionError("transpose needs rank >= 2, got " + to_string(a.shape()));
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  Shape s = a.shape();
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  Tensor<T> out(s);
  auto o = out.mutable_data();
  const std::size_t batch = a.size() / (r * c);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T *src = a.ptr() + bi * r * c;
    T *dst = o.data() + bi * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        dst[j * r + i] = src[i * c + j];
  }
  return out;
}

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = a[i] + b[i];
  return out;
}

template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = a[i] * b[i];
  return out;
}

template <typename T> Tensor<T> scale(const Tensor<T> &a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = a[i] * factor;
  return out;
}

namespace {

// Strides of `small` when broadcast against `big` (0 on broadcast axes).
Shape broadcast_strides(const Shape &small, const Shape &big) {
  if (small.size() > big.size())
    throw DimensionError("cannot broadcast " + to_string(small) + " to " + to_string(big));
  Shape strides(big.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < small.size(); ++i) {
    const std::size_t si = small.size() - 1 - i, bi = big.size() - 1 - i;
    if (small[si] != big[bi] && small[si] != 1)
      throw DimensionError("cannot broadcast " + to_string(small) + " to " + to_string(big));
    strides[bi] = small[si] == 1 ? 0 : stride;
    stride *= small[si];
  }
  return strides;
}

bool is_suffix(const Shape &small, const Shape &big) {
  return small.size() <= big.size() && std::equal(small.begin(), small.end(), big.end() - small.size());
}

// Calls f(big_index, small_index) for every element of `big` in order.
template <typename F> void for_each_broadcast(const Shape &small, const Shape &big, F &&f) {
  const Shape strides = broadcast_strides(small, big);
  const std::size_t total = numel(big);
  if (total == 0)
    return;
  std::vector<std::size_t> idx(big.size(), 0);
  std::size_t s = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, s);
    for (std::size_t ax = big.size(); ax-- > 0;) {
      ++idx[ax];
      s += strides[ax];
      if (idx[ax] < big[ax])
        break;
      s -= strides[ax] * big[ax];
      idx[ax] = 0;
    }
  }
}

} // namespace

template <typename T> Tensor<T> add_broadcast(const Tensor<T> &a, const Tensor<T> &b) {
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  if (is_suffix(b.shape(), a.shape())) {
    const std::size_t inner = b.size();
    for (std::size_t i = 0; i < o.size(); i += inner)
      for (std::size_t j = 0; j < inner; ++j)
        o[i + j] = a[i + j] + b[j];
    return out;
  }
  for_each_broadcast(b.shape(), a.shape(), [&](std::size_t i, std::size_t j) { o[i] = a[i] + b[j]; });
  return out;
}

template <typename T> Tensor<T> broadcast_to(const Tensor<T> &a, const Shape &shape) {
  Tensor<T> out(shape);
  auto o = out.mutable_data();
  for_each_broadcast(a.shape(), shape, [&](std::size_t i, std::size_t j) { o[i] = a[j]; });
  return out;
}

template <typename T> Tensor<T> sum_to_shape(const Tensor<T> &a, const Shape &shape) {
  Tensor<T> out(shape);
  auto o = out.mutable_data();
  if (is_suffix(shape, a.shape())) {
    const std::size_t inner = out.size();
    for (std::size_t i = 0; i < a.size(); i += inner)
      for (std::size_t j = 0; j < inner; ++j)
        o[j] += a[i + j];
    return out;
  }
  for_each_broadcast(shape, a.shape(), [&](std::size_t i, std::size_t j) { o[j] += a[i]; });
  return out;
}

template <typename T> Tensor<T> gather(const Tensor<T> &a, const IndexMap &map) {
  if (a.shape() != map.source_shape)
    throw DimensionError("index map expects " + to_string(map.source_shape) + ", got " + to_string(a.shape()));
  Tensor<T> out(map.out_shape);
  auto o = out.mutable_data();
  const T *src = a.ptr();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const auto s = map.source[i];
    o[i] = s >= 0 ? src[s] : T(0);
  }
  return out;
}

template <typename T> Tensor<T> scatter_add(const Tensor<T> &grad_out, const IndexMap &map) {
  Tensor<T> out(map.source_shape);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < map.source.size(); ++i) {
    const auto s = map.source[i];
    if (s >= 0)
      o[static_cast<std::size_t>(s)] += grad_out[i];
  }
  return out;
}

namespace {

struct AxisSplit {
  std::size_t outer, axis, inner;
};

AxisSplit split_at(const Shape &s, std::size_t axis) {
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i)
    r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i)
    r.inner *= s[i];
  return r;
}

} // namespace

template <typename T> Tensor<T> concat(const Tensor<T> &a, const Tensor<T> &b, std::size_t axis) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size())
    throw DimensionError("concat shape mismatch: " + to_string(sa) + " and " + to_string(sb));
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (i != axis && sa[i] != sb[i])
      throw DimensionError("concat shape mismatch: " + to_string(sa) + " and " + to_string(sb));
  Shape so = sa;
  so[axis] += sb[axis];
  const auto pa = split_at(sa, axis), pb = split_at(sb, axis);
  Tensor<T> out(so);
  auto o = out.mutable_data();
  std::size_t w = 0;
  for (std::size_t i = 0; i < pa.outer; ++i) {
    const T *ra = a.ptr() + i * pa.axis * pa.inner;
    const T *rb = b.ptr() + i * pb.axis * pb.inner;
    std::copy(ra, ra + pa.axis * pa.inner, o.data() + w);
    w += pa.axis * pa.inner;
    std::copy(rb, rb + pb.axis * pb.inner, o.data() + w);
    w += pb.axis * pb.inner;
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T> &a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto p = split_at(a.shape(), axis);
  if (start + length > p.axis)
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + to_string(a.shape()));
  Shape so = a.shape();
  so[axis] = length;
  Tensor<T> out(so);
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < p.outer; ++i) {
    const T *src = a.ptr() + (i * p.axis + start) * p.inner;
    std::copy(src, src + length * p.inner, o.data() + i * length * p.inner);
  }
  return out;
}

template <typename T> Tensor<T> mean_axis(const Tensor<T> &a, std::size_t axis) {
  const auto p = split_at(a.shape(), axis);
  Shape so = a.shape();
  so.erase(so.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(so);
  auto o = out.mutable_data();
  const T inv = T(1) / static_cast<T>(p.axis);
  for (std::size_t i = 0; i < p.outer; ++i) {
    T *dst = o.data() + i * p.inner;
    for (std::size_t k = 0; k < p.axis; ++k) {
      const T *src = a.ptr() + (i * p.axis + k) * p.inner;
      for (std::size_t j = 0; j < p.inner; ++j)
        dst[j] += src[j];
    }
    for (std::size_t j = 0; j < p.inner; ++j)
      dst[j] *= inv;
  }
  return out;
}

template <typename T> T sum(const Tensor<T> &a) {
  T s = 0;
  for (T v : a.data())
    s += v;
  return s;
}

template <typename T> Tensor<T> softmax_last_axis(const Tensor<T> &x) {
  if (x.rank() == 0 || x.dim(x.rank() - 1) == 0)
    throw DimensionError("softmax needs a non-empty last axis, got " + to_string(x.shape()));
  require_finite(x, "softmax input");
  const std::size_t n = x.dim(x.rank() - 1);
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < x.size(); r += n) {
    T mx = x[r];
    for (std::size_t j = 1; j < n; ++j)
      mx = std::max(mx, x[r + j]);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[r + j] = std::exp(x[r + j] - mx);
      s += o[r + j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < n; ++j)
      o[r + j] *= inv;
  }
  return out;
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

} // namespace

template <typename T> Tensor<T> gelu(const Tensor<T> &x) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = x[i];
    o[i] = static_cast<T>(v * normal_cdf(v));
  }
  return out;
}

template <typename T> Tensor<T> gelu_grad(const Tensor<T> &x, const Tensor<T> &grad_out) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = x[i];
    o[i] = static_cast<T>(grad_out[i] * (normal_cdf(v) + v * normal_pdf(v)));
  }
  return out;
}

template <typename T>
LayerNormResult<T> layer_norm_forward(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, T eps) {
  if (x.rank() == 0)
    throw DimensionError("layer_norm needs a channel axis");
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("layer_norm affine shape mismatch: x " + to_string(x.shape()) + ", gamma " +
                         to_string(gamma.shape()) + ", beta " + to_string(beta.shape()));
  if (!(eps > 0))
    throw DimensionError("layer_norm eps must be positive");
  const std::size_t rows = x.size() / c;
  LayerNormResult<T> r{Tensor<T>(x.shape()), Tensor<T>(x.shape()), Tensor<T>(Shape{rows})};
  auto o = r.out.mutable_data();
  auto nrm = r.normalized.mutable_data();
  auto inv = r.inv_std.mutable_data();
  for (std::size_t row = 0; row < rows; ++row) {
    const T *src = x.ptr() + row * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j)
      mean += src[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j)
      var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv[row] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (src[j] - mean) * is;
      nrm[row * c + j] = h;
      o[row * c + j] = h * gamma[j] + beta[j];
    }
  }
  return r;
}

template <typename T>
T cross_entropy(const Tensor<T> &logits, std::span<const int> labels, T smoothing, Tensor<T> *grad) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy expects [batch, classes] logits matching " + std::to_string(labels.size()) +
                         " labels, got " + to_string(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Tensor<T> probs = softmax_last_axis(logits);
  T loss = 0;
  const T off = smoothing / static_cast<T>(k);
  const T on = T(1) - smoothing + off;
  std::span<T> g;
  if (grad) {
    *grad = Tensor<T>(logits.shape());
    g = grad->mutable_data();
  }
  for (std::size_t i = 0; i < b; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw DimensionError("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
    const T *row = logits.ptr() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j)
      mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j)
      s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) {
      const T q = static_cast<std::size_t>(label) == j ? on : off;
      loss -= q * (row[j] - lse);
      if (grad)
        g[i * k + j] = (probs[i * k + j] - q) / static_cast<T>(b);
    }
  }
  loss /= static_cast<T>(b);
  if (!std::isfinite(loss))
    throw NumericError("non-finite cross entropy");
  return loss;
}

#define WINMIX_INSTANTIATE(T)                                                                                          \
  template class Tensor<T>;                                                                                            \
  template void require_finite(const Tensor<T> &, const char *);                                                       \
  template void gemm(const T *, const T *, T *, std::size_t, std::size_t, std::size_t, bool, bool);                    \
  template Tensor<T> matmul(const Tensor<T> &, const Tensor<T> &);                                                     \
  template Tensor<T> transpose_last2(const Tensor<T> &);                                                               \
  template Tensor<T> add(const Tensor<T> &, const Tensor<T> &);                                                        \
  template Tensor<T> mul(const Tensor<T> &, const Tensor<T> &);                                                        \
  template Tensor<T> scale(const Tensor<T> &, T);                                                                      \
  template Tensor<T> add_broadcast(const Tensor<T> &, const Tensor<T> &);                                              \
  template Tensor<T> broadcast_to(const Tensor<T> &, const Shape &);                                                   \
  template Tensor<T> sum_to_shape(const Tensor<T> &, const Shape &);                                                   \
  template Tensor<T> gather(const Tensor<T> &, const IndexMap &);                                                      \
  template Tensor<T> scatter_add(const Tensor<T> &, const IndexMap &);                                                 \
  template Tensor<T> concat(const Tensor<T> &, const Tensor<T> &, std::size_t);                                        \
  template Tensor<T> slice(const Tensor<T> &, std::size_t, std::size_t, std::size_t);                                  \
  template Tensor<T> mean_axis(const Tensor<T> &, std::size_t);                                                        \
  template T sum(const Tensor<T> &);                                                                                   \
  template Tensor<T> softmax_last_axis(const Tensor<T> &);                                                             \
  template Tensor<T> gelu(const Tensor<T> &);                                                                          \
  template Tensor<T> gelu_grad(const Tensor<T> &, const Tensor<T> &);                                                  \
  template LayerNormResult<T> layer_norm_forward(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, T);          \
  template T cross_entropy(const Tensor<T> &, std::span<const int>, T, Tensor<T> *);

WINMIX_INSTANTIATE(float)
WINMIX_INSTANTIATE(double)

} // namespace winmix
