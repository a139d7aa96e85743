#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace winmix;
using winmix::testing::gradient_check;
using winmix::testing::max_rel_error;
using winmix::testing::random_tensor;
using winmix::testing::weighted_sum;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 10;

Tensor<double> tensor(Shape shape, std::vector<double> v) { return Tensor<double>(std::move(shape), std::move(v)); }

Tensor<double> loop_matmul(const Tensor<double> &a, const Tensor<double> &b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  auto o = c.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p)
        s += a[i * k + p] * b[p * n + j];
      o[i * n + j] = s;
    }
  return c;
}

} // namespace

TEST_CASE("matmul") {
  SUBCASE("identity") {
    auto c = matmul(tensor({2, 2}, {1, 0, 0, 1}), tensor({2, 2}, {3, 4, 5, 6}));
    CHECK(c.bit_equal(tensor({2, 2}, {3, 4, 5, 6})));
  }
  SUBCASE("hand computed") { CHECK(matmul(tensor({1, 2}, {1, 2}), tensor({2, 1}, {3, 4})).item() == 11.0); }
  SUBCASE("triple loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto a = random_tensor({5, 7}, seed), b = random_tensor({7, 3}, seed + 100);
      CHECK(max_rel_error(matmul(a, b), loop_matmul(a, b)) < 1e-6);
      auto af = a.cast<float>(), bf = b.cast<float>();
      CHECK(max_rel_error(matmul(af, bf).cast<double>(), loop_matmul(a, b)) < 1e-6);
    }
  }
  SUBCASE("batched and shared right operand") {
    auto a = random_tensor({3, 4, 5}, 1), b = random_tensor({3, 5, 2}, 2), shared = random_tensor({5, 2}, 3);
    auto c = matmul(a, b), d = matmul(a, shared);
    for (std::size_t i = 0; i < 3; ++i) {
      auto ai = slice(a, 0, i, 1).reshape({4, 5});
      CHECK(max_rel_error(slice(c, 0, i, 1).reshape({4, 2}), loop_matmul(ai, slice(b, 0, i, 1).reshape({5, 2}))) <
            1e-12);
      CHECK(max_rel_error(slice(d, 0, i, 1).reshape({4, 2}), loop_matmul(ai, shared)) < 1e-12);
    }
  }
  SUBCASE("mismatch names both shapes") {
    try {
      matmul(random_tensor({2, 3}, 0), random_tensor({4, 2}, 0));
      FAIL("expected DimensionError");
    } catch (const DimensionError &e) {
      std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[4,2]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax_last_axis") {
  auto u = softmax_last_axis(tensor({3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(u[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto big = softmax_last_axis(tensor({2}, {1000, 0}));
  CHECK(std::abs(big[0] - 1.0) < 1e-12);
  CHECK(std::abs(big[1]) < 1e-12);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = random_tensor({4, 9}, seed, 5.0);
    auto s = softmax_last_axis(x);
    auto sf = softmax_last_axis(x.cast<float>());
    for (std::size_t r = 0; r < 4; ++r) {
      double denom = 0, total = 0, total_f = 0;
      for (std::size_t j = 0; j < 9; ++j)
        denom += std::exp(x[r * 9 + j]);
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(s[r * 9 + j] >= 0.0);
        CHECK(s[r * 9 + j] == doctest::Approx(std::exp(x[r * 9 + j]) / denom).epsilon(1e-12));
        CHECK(sf[r * 9 + j] == doctest::Approx(std::exp(x[r * 9 + j]) / denom).epsilon(1e-5));
        total += s[r * 9 + j];
        total_f += sf[r * 9 + j];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
      CHECK(std::abs(total_f - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer_norm") {
  auto ones = Tensor<double>::full({4}, 1.0), zeros = Tensor<double>({4});
  auto flat = layer_norm(Tensor<double>::full({3, 4}, 2.5), ones, zeros, 1e-5);
  for (double v : flat.data())
    CHECK(v == 0.0);

  auto b = tensor({4}, {0.5, -1, 2, 3});
  auto shifted = layer_norm(random_tensor({3, 4}, 7), zeros, b, 1e-5);
  for (std::size_t i = 0; i < shifted.size(); ++i)
    CHECK(shifted[i] == b[i % 4]);

  auto x = random_tensor({6, 32}, 11, 3.0);
  auto y = layer_norm(x, Tensor<double>::full({32}, 1.0), Tensor<double>({32}), 1e-5);
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 32; ++j)
      mean += y[r * 32 + j];
    mean /= 32;
    for (std::size_t j = 0; j < 32; ++j)
      var += (y[r * 32 + j] - mean) * (y[r * 32 + j] - mean);
    var /= 32;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("gelu") {
  auto y = gelu(tensor({3}, {0, 1, -10}));
  CHECK(y[0] == 0.0);
  CHECK(std::abs(y[1] - 0.841345) < 1e-5);
  // x * Phi(x) at -10: Phi(-10) = 7.6199e-24
  CHECK(y[2] < 0.0);
  CHECK(y[2] == doctest::Approx(-7.6199e-23).epsilon(1e-3));
  auto tail = gelu(tensor({3}, {-8, -9, -10}));
  CHECK(tail[0] < tail[1]);
  CHECK(tail[1] < tail[2]);
}

TEST_CASE("reshape is zero-copy and round-trips") {
  auto x = random_tensor({2, 3, 4}, 3);
  auto y = x.reshape({6, 4}).reshape({2, 3, 4});
  CHECK(y.bit_equal(x));
  CHECK(x.reshape({24}).ptr() == x.ptr());
  CHECK_THROWS_AS(x.reshape({5, 5}), DimensionError);
}

TEST_CASE("copy on write keeps copies independent") {
  auto x = random_tensor({4}, 1);
  auto y = x;
  y.mutable_data()[0] = 42;
  CHECK(x[0] != 42);
}

TEST_CASE("forward ops are pure") {
  auto a = random_tensor({3, 5, 8}, 1), b = random_tensor({3, 8, 6}, 2);
  CHECK(matmul(a, b).bit_equal(matmul(a, b)));
  CHECK(softmax_last_axis(a).bit_equal(softmax_last_axis(a)));
  CHECK(gelu(a).bit_equal(gelu(a)));
  auto g = Tensor<double>::full({8}, 1.0), be = Tensor<double>({8});
  CHECK(layer_norm(a, g, be, 1e-5).bit_equal(layer_norm(a, g, be, 1e-5)));
}

TEST_CASE("non-finite forward results are errors") {
  Graph<double> g;
  auto x = g.leaf(tensor({2}, {1e308, 1e308}));
  CHECK_THROWS_AS(add(x, x), NumericError);
  CHECK_THROWS_AS(require_finite(tensor({1}, {std::nan("")}), "probe"), NumericError);
}

TEST_CASE("backward") {
  SUBCASE("sum(W x) gives outer-product structure") {
    Graph<double> g;
    auto w = g.leaf(tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto x = g.constant(tensor({3, 1}, {7, 8, 9}));
    auto grads = g.backward(sum(matmul(w, x)));
    CHECK(grads.of(w).bit_equal(tensor({2, 3}, {7, 8, 9, 7, 8, 9})));
  }
  SUBCASE("sum(x) gives ones") {
    Graph<double> g;
    auto x = g.leaf(random_tensor({3, 4}, 0));
    auto grads = g.backward(sum(x));
    CHECK(grads.of(x).bit_equal(Tensor<double>::full({3, 4}, 1.0)));
  }
  SUBCASE("one gradient per leaf with the leaf's shape") {
    Graph<double> g;
    auto a = g.leaf(random_tensor({2, 3}, 0));
    auto unused = g.leaf(random_tensor({5}, 1));
    auto grads = g.backward(sum(a));
    CHECK(grads.of(a).shape() == Shape{2, 3});
    CHECK(grads.of(unused).shape() == Shape{5});
    CHECK(winmix::sum(grads.of(unused)) == 0.0);
  }
  SUBCASE("errors") {
    Graph<double> g, other;
    auto x = g.leaf(random_tensor({3}, 0));
    CHECK_THROWS_AS(g.backward(x), DimensionError);
    auto grads = g.backward(sum(x));
    auto stranger = other.leaf(random_tensor({3}, 0));
    CHECK_THROWS(grads.of(stranger));
    CHECK_THROWS(grads.of(sum(x)));
  }
  SUBCASE("deterministic") {
    auto run = [] {
      Graph<double> g;
      auto w = g.leaf(random_tensor({4, 6}, 3));
      auto x = g.constant(random_tensor({5, 6}, 4));
      auto y = gelu(linear<double>(x, w, nullptr));
      return g.backward(sum(softmax_last_axis(y))).of(w);
    };
    CHECK(run().bit_equal(run()));
  }
}

TEST_CASE("finite_difference_gradient") {
  std::function<double(const Tensor<double> &)> squares = [](const Tensor<double> &x) {
    double s = 0;
    for (double v : x.data())
      s += v * v;
    return s;
  };
  auto g = finite_difference_gradient(squares, tensor({2}, {1, 2}), 1e-4);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  std::function<double(const Tensor<double> &)> lin = [](const Tensor<double> &x) { return 3 * x[0] - 0.5 * x[1]; };
  for (double h : {1e-1, 1e-3}) {
    auto gl = finite_difference_gradient(lin, tensor({2}, {0.3, -0.7}), h);
    CHECK(gl[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(gl[1] == doctest::Approx(-0.5).epsilon(1e-9));
  }
}

TEST_CASE("gradient check of every differentiable op") {
  using V = Var<double>;
  using Vs = std::vector<V>;
  struct Case {
    const char *name;
    std::vector<Shape> shapes;
    std::function<V(Graph<double> &, const Vs &, std::uint64_t)> build;
  };
  const std::vector<Case> cases = {
      {"matmul", {{3, 4, 5}, {3, 5, 2}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, matmul(v[0], v[1]), s); }},
      {"matmul shared", {{2, 4, 5}, {5, 3}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, matmul(v[0], v[1]), s); }},
      {"linear", {{6, 5}, {4, 5}, {4}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, linear(v[0], v[1], &v[2]), s); }},
      {"linear grouped", {{3, 4, 5}, {3, 2, 5}, {3, 2}},
       [](auto &g, const Vs &v, auto s) { return weighted_sum(g, linear(v[0], v[1], &v[2]), s); }},
      {"transpose", {{2, 3, 4}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, transpose_last2(v[0]), s); }},
      {"add", {{3, 4}, {3, 4}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, add(v[0], v[1]), s); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, mul(v[0], v[1]), s); }},
      {"scale", {{3, 4}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, scale(v[0], -1.7), s); }},
      {"add_broadcast", {{2, 3, 4}, {4}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, add_broadcast(v[0], v[1]), s); }},
      {"broadcast_to", {{1, 3, 1}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, broadcast_to(v[0], {2, 3, 4}), s); }},
      {"reshape", {{2, 6}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, reshape(v[0], {3, 4}), s); }},
      {"gather",
       {{2, 3}},
       [](auto &g, const Vs &v, auto s) {
         auto map = std::make_shared<const IndexMap>(IndexMap{{2, 3}, {2, 4}, {5, 0, -1, 0, 3, 3, 1, -1}});
         return weighted_sum(g, gather(v[0], map), s);
       }},
      {"concat", {{2, 3}, {2, 2}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, concat(v[0], v[1], 1), s); }},
      {"slice", {{4, 5}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, slice(v[0], 1, 1, 3), s); }},
      {"mean_axis", {{3, 4, 2}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, mean_axis(v[0], 1), s); }},
      {"softmax", {{3, 6}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, softmax_last_axis(v[0]), s); }},
      {"gelu", {{4, 5}}, [](auto &g, const Vs &v, auto s) { return weighted_sum(g, gelu(v[0]), s); }},
      {"layer_norm", {{4, 6}, {6}, {6}},
       [](auto &g, const Vs &v, auto s) { return weighted_sum(g, layer_norm(v[0], v[1], v[2], 1e-5), s); }},
      {"cross_entropy", {{5, 4}}, [](auto &, const Vs &v, auto) { return cross_entropy(v[0], {0, 3, 1, 2, 3}, 0.1); }},
  };
  for (const auto &c : cases) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      std::vector<Tensor<double>> inputs;
      for (std::size_t i = 0; i < c.shapes.size(); ++i)
        inputs.push_back(random_tensor(c.shapes[i], seed * 31 + i));
      double err = gradient_check([&](Graph<double> &g, const Vs &v) { return c.build(g, v, 1000 + seed); }, inputs);
      INFO(c.name << " seed " << seed);
      CHECK(err < kGradTol);
    }
  }
}
