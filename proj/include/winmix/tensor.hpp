#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace winmix {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape &shape);
std::string to_string(const Shape &shape);

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf produced by a forward op on finite inputs, or a diverged loss.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid architecture or run configuration.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

enum class DType : std::uint8_t { float32 = 0, float64 = 1 };

template <typename T> constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::float32; }
template <> constexpr DType dtype_of<double>() { return DType::float64; }

/// Dense row-major array. Copies share storage; writers go through
/// mutable_data(), which detaches shared storage first.
template <typename T> class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return !data_; }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  const T *ptr() const { return data_->data(); }

  const T &operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::initializer_list<std::size_t> index) const;
  T item() const;

  /// Zero-copy reinterpretation; element counts must agree.
  Tensor reshape(Shape shape) const;

  template <typename U> Tensor<U> cast() const {
    std::vector<U> out(size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<U>((*data_)[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;
  bool bit_equal(const Tensor &other) const;

private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

/// Output element i reads source element `source[i]`, or zero when it is -1.
/// Every permutation, pad, crop, slice and copy-reshape in the project is an
/// IndexMap, so each one gets the same scatter-add backward.
struct IndexMap {
  Shape source_shape;
  Shape out_shape;
  std::vector<std::int64_t> source;
};

using IndexMapPtr = std::shared_ptr<const IndexMap>;

/// The inverse of a bijective map over equal-size shapes.
IndexMap invert(const IndexMap &map);

/// Gathering with `first` and then `second`, as a single map.
IndexMap compose(const IndexMap &first, const IndexMap &second);

// Eager kernels. The autograd layer reuses them for forward and backward.

template <typename T> Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> transpose_last2(const Tensor<T> &a);
template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> scale(const Tensor<T> &a, T factor);
/// numpy-style broadcast of `b` onto the shape of `a`.
template <typename T> Tensor<T> add_broadcast(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> broadcast_to(const Tensor<T> &a, const Shape &shape);
/// Sum `a` down to `shape`, the adjoint of broadcast_to.
template <typename T> Tensor<T> sum_to_shape(const Tensor<T> &a, const Shape &shape);
template <typename T> Tensor<T> gather(const Tensor<T> &a, const IndexMap &map);
template <typename T> Tensor<T> scatter_add(const Tensor<T> &grad_out, const IndexMap &map);
template <typename T> Tensor<T> concat(const Tensor<T> &a, const Tensor<T> &b, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T> &a, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> mean_axis(const Tensor<T> &a, std::size_t axis);
template <typename T> T sum(const Tensor<T> &a);

template <typename T> Tensor<T> softmax_last_axis(const Tensor<T> &x);
template <typename T> Tensor<T> gelu(const Tensor<T> &x);
template <typename T> Tensor<T> gelu_grad(const Tensor<T> &x, const Tensor<T> &grad_out);

template <typename T> struct LayerNormResult {
  Tensor<T> out;
  Tensor<T> normalized;
  Tensor<T> inv_std;
};
template <typename T>
LayerNormResult<T> layer_norm_forward(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, T eps);
template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, T eps) {
  return layer_norm_forward(x, gamma, beta, eps).out;
}

/// Mean label-smoothed cross entropy over a [batch, classes] logit matrix.
template <typename T>
T cross_entropy(const Tensor<T> &logits, std::span<const int> labels, T smoothing, Tensor<T> *grad = nullptr);

/// Throws NumericError naming `op` when any element is NaN or Inf.
template <typename T> void require_finite(const Tensor<T> &t, const char *op);

// Raw row-major kernels: C[m,n] (+)= op(A) * B with A either [m,k] or, when
// `trans_a`, [k,m]. Summation order over k is fixed.
template <typename T>
void gemm(const T *a, const T *b, T *c, std::size_t m, std::size_t k, std::size_t n, bool trans_a, bool accumulate);

} // namespace winmix
