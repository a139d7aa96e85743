#pragma once

#include <winmix/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace winmix {

template <typename T> struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// Ordered, exhaustive list of a model's (or layer's) trainable tensors.
template <typename T> using ParamTable = std::vector<NamedTensor<T>>;

struct ParamShape {
  std::string name;
  Shape shape;
  enum class Init { trunc_normal, zeros, ones } init = Init::trunc_normal;
};

template <typename T> std::size_t total_params(const ParamTable<T> &table) {
  std::size_t n = 0;
  for (const auto &p : table)
    n += p.value.size();
  return n;
}

using Rng = std::mt19937_64;

/// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
template <typename T> Tensor<T> trunc_normal(const Shape &shape, double std, Rng &rng) {
  std::normal_distribution<double> dist(0.0, std);
  std::vector<T> v(numel(shape));
  for (auto &x : v) {
    double s;
    do
      s = dist(rng);
    while (std::abs(s) > 2.0 * std);
    x = static_cast<T>(s);
  }
  return Tensor<T>(shape, std::move(v));
}

template <typename T> ParamTable<T> init_params(const std::vector<ParamShape> &shapes, Rng &rng, double std = 0.02) {
  ParamTable<T> out;
  out.reserve(shapes.size());
  for (const auto &s : shapes) {
    switch (s.init) {
    case ParamShape::Init::trunc_normal:
      out.push_back({s.name, trunc_normal<T>(s.shape, std, rng)});
      break;
    case ParamShape::Init::zeros:
      out.push_back({s.name, Tensor<T>(s.shape)});
      break;
    case ParamShape::Init::ones:
      out.push_back({s.name, Tensor<T>::full(s.shape, T(1))});
      break;
    }
  }
  return out;
}

template <typename U, typename T> ParamTable<U> cast_params(const ParamTable<T> &table) {
  ParamTable<U> out;
  out.reserve(table.size());
  for (const auto &p : table)
    out.push_back({p.name, p.value.template cast<U>()});
  return out;
}

} // namespace winmix
