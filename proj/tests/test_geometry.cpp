#include "test_util.hpp"

#include <winmix/geometry.hpp>

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace winmix;
using winmix::testing::random_tensor;

namespace {

Tensor<double> iota(const Shape &shape) {
  std::vector<double> v(numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<double>(i);
  return Tensor<double>(shape, std::move(v));
}

double token(const Tensor<double> &x, std::size_t h, std::size_t w) { return x.at({0, h, w, 0}); }

std::vector<double> sorted_values(const Tensor<double> &x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  std::sort(v.begin(), v.end());
  return v;
}

} // namespace

TEST_CASE("pad_to_multiple") {
  auto [same, p0] = pad_to_multiple(random_tensor({1, 56, 56, 2}, 0), 7);
  CHECK(same.shape() == Shape{1, 56, 56, 2});
  CHECK((p0.pad_h == 0 && p0.pad_w == 0));

  auto [tall, p1] = pad_to_multiple(random_tensor({1, 57, 56, 2}, 0), 7);
  CHECK(tall.shape() == Shape{1, 63, 56, 2});
  CHECK((p1.pad_h == 6 && p1.pad_w == 0));

  auto x = random_tensor({2, 50, 50, 3}, 1);
  auto [padded, p2] = pad_to_multiple(x, 7);
  CHECK(padded.shape() == Shape{2, 56, 56, 3});
  CHECK(padded.at({1, 55, 55, 2}) == 0.0);
  CHECK(padded.at({1, 49, 49, 2}) == x.at({1, 49, 49, 2}));
  CHECK(crop(padded, p2).bit_equal(x));
}

TEST_CASE("window_partition and window_reverse") {
  SUBCASE("single window is the flattened grid") {
    auto x = iota({1, 3, 3, 2});
    auto w = window_partition(x, 3);
    CHECK(w.windows.shape() == Shape{1, 9, 2});
    CHECK(w.windows.reshape({18}).bit_equal(x.reshape({18})));
    CHECK(window_reverse(w).bit_equal(x));
  }
  SUBCASE("one-token windows in row-major order") {
    auto x = iota({1, 2, 2, 1});
    auto w = window_partition(x, 1);
    CHECK(w.windows.shape() == Shape{4, 1, 1});
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(w.windows[i] == double(i));
    CHECK(window_reverse(w).bit_equal(x));
  }
  SUBCASE("window order and token order") {
    auto x = iota({1, 4, 4, 1});
    auto w = window_partition(x, 2);
    // window 1 is the top-right 2x2 block
    CHECK(w.windows.at({1, 0, 0}) == token(x, 0, 2));
    CHECK(w.windows.at({1, 1, 0}) == token(x, 0, 3));
    CHECK(w.windows.at({1, 2, 0}) == token(x, 1, 2));
    CHECK(w.windows.at({2, 0, 0}) == token(x, 2, 0));
  }
  SUBCASE("random round trips") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto x = random_tensor({2, 14, 14, 3}, seed);
      auto w = window_partition(x, 7);
      CHECK(w.windows.dim(0) == 2 * 2 * 2);
      CHECK(window_reverse(w).bit_equal(x));
    }
    auto odd = random_tensor({1, 10, 13, 2}, 9);
    auto [padded, pad] = pad_to_multiple(odd, 4);
    auto w = window_partition(padded, 4, pad);
    CHECK(w.windows.dim(0) == 3 * 4);
    CHECK(window_reverse(w).bit_equal(odd));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(window_partition(random_tensor({1, 5, 6, 1}, 0), 3), DimensionError);
    auto w = window_partition(random_tensor({1, 4, 4, 1}, 0), 2);
    w.origin.grid_h = 3;
    CHECK_THROWS_AS(window_reverse(w), DimensionError);
  }
}

TEST_CASE("cyclic_shift") {
  auto x = random_tensor({2, 5, 6, 3}, 0);
  CHECK(cyclic_shift(x, 0, 0).bit_equal(x));

  auto g = iota({1, 2, 2, 1});
  auto s = cyclic_shift(g, 1, 1);
  CHECK(token(s, 0, 0) == token(g, 1, 1));
  CHECK(token(s, 1, 1) == token(g, 0, 0));
  CHECK(token(s, 0, 1) == token(g, 1, 0));
  CHECK(token(s, 1, 0) == token(g, 0, 1));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto r = random_tensor({1, 9, 11, 2}, seed);
    CHECK(cyclic_shift(cyclic_shift(r, 3, 5), -3, -5).bit_equal(r));
    CHECK(sorted_values(cyclic_shift(r, 3, 5)) == sorted_values(r));
  }
  // wraps modulo the grid
  CHECK(cyclic_shift(x, 5, -6).bit_equal(x));
}

TEST_CASE("cyclic_shift commutes with per-token channel maps") {
  auto x = random_tensor({1, 6, 6, 4}, 3);
  auto w = random_tensor({4, 4}, 4);
  auto channel_map = [&](const Tensor<double> &t) { return matmul(t.reshape({36, 4}), w).reshape({1, 6, 6, 4}); };
  CHECK(cyclic_shift(channel_map(x), -3, -3).bit_equal(channel_map(cyclic_shift(x, -3, -3))));
}

TEST_CASE("spatial_shuffle") {
  auto x = random_tensor({1, 3, 3, 2}, 0);
  CHECK(spatial_shuffle(x, 3).bit_equal(x));
  CHECK(spatial_unshuffle(x, 3).bit_equal(x));

  auto g = iota({1, 4, 4, 1});
  auto s = spatial_shuffle(g, 2);
  auto first = window_partition(s, 2).windows;
  std::vector<double> got{first[0], first[1], first[2], first[3]};
  std::vector<double> want{token(g, 0, 0), token(g, 0, 2), token(g, 2, 0), token(g, 2, 2)};
  CHECK(got == want);
  // index formula, checked element by element
  const std::size_t ws = 2, sh = 2, sw = 2;
  for (std::size_t a = 0; a < ws; ++a)
    for (std::size_t b = 0; b < sh; ++b)
      for (std::size_t c = 0; c < ws; ++c)
        for (std::size_t d = 0; d < sw; ++d)
          CHECK(token(s, b * ws + a, d * ws + c) == token(g, a * sh + b, c * sw + d));
  CHECK(spatial_unshuffle(s, 2).bit_equal(g));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto r = random_tensor({2, 12, 8, 3}, seed);
    CHECK(spatial_unshuffle(spatial_shuffle(r, 4), 4).bit_equal(r));
    CHECK(spatial_shuffle(spatial_unshuffle(r, 4), 4).bit_equal(r));
  }
  CHECK_THROWS_AS(spatial_shuffle(random_tensor({1, 6, 5, 1}, 0), 3), DimensionError);
}

TEST_CASE("spatial_shuffle is an involution when the grid is ws^2 with H/ws == ws") {
  for (std::size_t ws : {2, 3, 4}) {
    auto r = random_tensor({1, ws * ws, ws * ws, 2}, ws);
    CHECK(spatial_shuffle(spatial_shuffle(r, ws), ws).bit_equal(r));
  }
}

TEST_CASE("messenger attach and detach") {
  auto w = window_partition(random_tensor({1, 4, 4, 3}, 0), 2);
  MessengerState<double> m{random_tensor({4, 1, 3}, 1), 1, 2, 2, 2};
  auto attached = messenger_attach(w, m);
  CHECK(attached.shape() == Shape{4, 5, 3});
  auto [tokens, messengers] = messenger_detach(attached, 4);
  CHECK(tokens.bit_equal(w.windows));
  CHECK(messengers.bit_equal(m.tokens));
  MessengerState<double> wrong{random_tensor({4, 1, 2}, 1), 1, 2, 2, 2};
  CHECK_THROWS_AS(messenger_attach(w, wrong), DimensionError);
}

TEST_CASE("messenger exchange") {
  SUBCASE("region 1 is the identity") {
    MessengerState<double> m{random_tensor({6, 2, 4}, 0), 1, 2, 3, 1};
    CHECK(messenger_exchange(m).tokens.bit_equal(m.tokens));
  }
  SUBCASE("region 2 gives window 0 a quarter slice from each window") {
    // window k holds the constant k + 1 in every channel
    std::vector<double> v;
    for (int k = 0; k < 4; ++k)
      for (int c = 0; c < 8; ++c)
        v.push_back(k + 1);
    MessengerState<double> m{Tensor<double>({4, 1, 8}, v), 1, 2, 2, 2};
    auto e = messenger_exchange(m);
    for (int k = 0; k < 4; ++k)
      for (int c = 0; c < 2; ++c)
        CHECK(e.tokens.at({0, 0, std::size_t(2 * k + c)}) == k + 1);
    auto sorted_in = sorted_values(m.tokens), sorted_out = sorted_values(e.tokens);
    CHECK(sorted_in == sorted_out);
  }
  SUBCASE("round trip") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      MessengerState<double> m{random_tensor({2 * 4 * 6, 1, 12}, seed), 2, 4, 6, 2};
      CHECK(messenger_unexchange(messenger_exchange(m)).tokens.bit_equal(m.tokens));
    }
  }
  SUBCASE("errors") {
    MessengerState<double> m{random_tensor({6, 1, 4}, 0), 1, 2, 3, 2};
    CHECK_THROWS_AS(messenger_exchange(m), DimensionError);
  }
}

TEST_CASE("index maps are permutations") {
  const GridShape g{2, 6, 8, 3};
  for (const IndexMap &m : {shift_map(g, -3, 2), shuffle_map(g, 2), partition_map(g, 2)}) {
    std::vector<std::int64_t> src = m.source;
    std::sort(src.begin(), src.end());
    for (std::size_t i = 0; i < src.size(); ++i)
      CHECK(src[i] == std::int64_t(i));
  }
}
