/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <doctest.h>

#include <cmath>

#include "irrcnn/ops.hpp"
#include "test_util.hpp"

using namespace irrcnn;
using namespace irrcnn::test;

TEST_CASE("conv2d: zero kernel gives zeros") {
  auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto k = ConvKernel<double>::make({1, 1, 3, 3});
  auto y = conv2d(x, k, {1, 1}, Padding::Same);
  CHECK(y.shape == Shape{1, 1, 3, 3});
  CHECK(y.data.abs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d: 2x2 valid hand case") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto k = ConvKernel<double>::make({1, 1, 2, 2});
  k.weights = Tensor<double>::from({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = conv2d(x, k, {1, 1}, Padding::Valid);
  CHECK(y.shape == Shape{1, 1, 1, 1});
  CHECK(y.data[0] == doctest::Approx(5.0));  // 1*1 + 4*1
  CHECK(bit_equal(y, conv2d_oracle(x, k, {1, 1}, Padding::Valid)));
}

TEST_CASE("conv2d: 1x1 kernel is a pointwise affine map") {
  auto x = ramp<double>({1, 1, 4, 4});
  auto k = ConvKernel<double>::make({1, 1, 1, 1});
  k.weights.data[0] = 2.0;
  k.bias.data[0] = 1.0;
  auto y = conv2d(x, k, {1, 1}, Padding::Same);
  for (Index i = 0; i < 16; ++i) {
    CHECK(y.data[i] == doctest::Approx(2.0 * static_cast<double>(i) + 1.0));
  }
}

TEST_CASE("conv2d_oracle: zero input gives the bias plane") {
  auto x = Tensor<float>({2, 3, 5, 5});
  auto k = ConvKernel<float>::make({4, 3, 3, 3});
  k.bias = Tensor<float>::vec({0.5f, -1.0f, 2.0f, 0.0f});
  auto y = conv2d_oracle(x, k, {1, 1}, Padding::Same);
  for (Index n = 0; n < 2; ++n) {
    for (Index f = 0; f < 4; ++f) {
      for (Index i = 0; i < 25; ++i) {
        CHECK(y.data[(n * 4 + f) * 25 + i] == k.bias.data[f]);
      }
    }
  }
}

TEST_CASE("conv2d_oracle: identity 1x1 kernel reproduces the input") {
  Rng rng(7);
  auto x = random_tensor<float>({2, 1, 4, 4}, rng);
  auto k = ConvKernel<float>::make({1, 1, 1, 1});
  k.weights.data[0] = 1.0f;
  auto y = conv2d_oracle(x, k, {1, 1}, Padding::Same);
  CHECK(bit_equal(x, y));
}

TEST_CASE("conv2d matches the oracle on seeded random cases") {
  Rng rng(1234);
  int cases = 0;
  for (Index ks : {1, 3}) {
    for (Index stride : {1, 2}) {
      for (Padding pad : {Padding::Valid, Padding::Same}) {
        for (int rep = 0; rep < 7; ++rep) {
          const Index n = 1 + rng.below(2);
          const Index c = 1 + rng.below(4);
          const Index f = 1 + rng.below(5);
          const Index h = ks + rng.below(7);
          const Index w = ks + rng.below(7);
          const Shape xs{n, c, h, w}, ws{f, c, ks, ks}, bs{1, f, 1, 1};
          // standard precision, error relative to max(1, |a|, |b|)
          auto x = random_tensor<float>(xs, rng);
          auto kw = random_tensor<float>(ws, rng);
          auto kb = random_tensor<float>(bs, rng);
          auto fast = conv2d(x, kw, &kb, {stride, stride}, pad);
          auto ref = conv2d_oracle(x, kw, &kb, {stride, stride}, pad);
          CHECK(fast.shape == ref.shape);
          CHECK(max_rel_err(fast, ref, 1.0) <= 1e-5);
          // wide precision passes the strict relative bound outright
          auto xd = x.cast<double>(), kwd = kw.cast<double>(), kbd = kb.cast<double>();
          CHECK(max_rel_err(conv2d(xd, kwd, &kbd, {stride, stride}, pad),
                            conv2d_oracle(xd, kwd, &kbd, {stride, stride}, pad)) <=
                1e-5);
          ++cases;
        }
      }
    }
  }
  CHECK(cases >= 50);
}

TEST_CASE("conv2d: same padding with stride 1 preserves spatial dims") {
  Rng rng(99);
  for (Index ks : {1, 3}) {
    auto x = random_tensor<float>({1, 2, 6, 9}, rng);
    auto kw = random_tensor<float>({3, 2, ks, ks}, rng);
    auto y = conv2d(x, kw, {1, 1}, Padding::Same);
    CHECK(y.shape == Shape{1, 3, 6, 9});
  }
}

TEST_CASE("conv2d: channel mismatch and degenerate valid output raise") {
  auto x = Tensor<float>({1, 2, 4, 4});
  auto kw = Tensor<float>({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, kw, {1, 1}, Padding::Same), std::invalid_argument);
  auto kw2 = Tensor<float>({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d(x, kw2, {1, 1}, Padding::Valid),
                  std::invalid_argument);
}

TEST_CASE("max_pool: constant input stays constant") {
  auto x = Tensor<float>::full({1, 2, 5, 5}, 3.25f);
  auto y = max_pool(x, {3, 3}, {2, 2});
  CHECK(y.shape == Shape{1, 2, 2, 2});
  CHECK((y.data == 3.25f).all());
}

TEST_CASE("max_pool: 4x4 ramp reduces to 10") {
  auto x = ramp<double>({1, 1, 4, 4});
  auto y = max_pool(x, {3, 3}, {2, 2});
  CHECK(y.shape == Shape{1, 1, 1, 1});
  CHECK(y.data[0] == 10.0);
}

TEST_CASE("max_pool: 8x8 gives 3x3 output and undersized input throws") {
  auto x = Tensor<float>({1, 1, 8, 8});
  CHECK(max_pool(x, {3, 3}, {2, 2}).shape == Shape{1, 1, 3, 3});
  auto tiny = Tensor<float>({1, 1, 2, 2});
  CHECK_THROWS_AS(max_pool(tiny, {3, 3}, {2, 2}), std::invalid_argument);
}

TEST_CASE("avg_pool: constant stays constant under same padding") {
  auto x = Tensor<float>::full({2, 3, 7, 7}, -1.5f);
  auto y = avg_pool(x, {3, 3}, {1, 1}, Padding::Same);
  CHECK(y.shape == x.shape);
  for (Index i = 0; i < y.size(); ++i) CHECK(y.data[i] == doctest::Approx(-1.5f));
}

TEST_CASE("avg_pool: center of a 3x3 ramp is 4") {
  auto x = ramp<double>({1, 1, 3, 3});
  auto y = avg_pool(x, {3, 3}, {1, 1}, Padding::Same);
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(4.0));
  // Corner window sees only the 2x2 in-bounds part.
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx((0.0 + 1 + 3 + 4) / 4.0));
}

TEST_CASE("max_pool dominates avg_pool on identical valid settings") {
  Rng rng(4242);
  auto x = random_tensor<double>({2, 3, 9, 9}, rng);
  auto mx = max_pool(x, {3, 3}, {2, 2});
  auto av = avg_pool(x, {3, 3}, {2, 2}, Padding::Valid);
  REQUIRE(mx.shape == av.shape);
  CHECK((mx.data >= av.data).all());
}

TEST_CASE("global_avg_pool") {
  auto x = ramp<double>({1, 1, 4, 4});
  CHECK(global_avg_pool(x).data[0] == doctest::Approx(7.5));
  auto c = Tensor<float>::full({3, 2, 5, 5}, 2.5f);
  auto y = global_avg_pool(c);
  CHECK(y.shape == Shape{3, 2, 1, 1});
  for (Index i = 0; i < y.size(); ++i) CHECK(y.data[i] == doctest::Approx(2.5f));
  CHECK(global_avg_pool(Tensor<float>({2, 3, 8, 8})).shape == Shape{2, 3, 1, 1});
}

TEST_CASE("concat_channels: identity, widths, and layout") {
  Rng rng(31);
  auto a = random_tensor<float>({2, 2, 3, 3}, rng);
  auto b = random_tensor<float>({2, 4, 3, 3}, rng);
  auto c = random_tensor<float>({2, 2, 3, 3}, rng);

  auto lone = concat_channels<float>({&a});
  CHECK(bit_equal(lone, a));

  auto all = concat_channels<float>({&a, &b, &c});
  CHECK(all.shape == Shape{2, 8, 3, 3});
  // channel 5 of the result is channel 3 of the second part (c = 2 + 4 layout)
  for (Index n = 0; n < 2; ++n) {
    for (Index i = 0; i < 9; ++i) {
      CHECK(all.data[all.offset(n, 5, i / 3, i % 3)] ==
            b.data[b.offset(n, 3, i / 3, i % 3)]);
    }
  }
  // slicing recovers each part bit-exactly
  CHECK(bit_equal(slice_channels(all, 0, 2), a));
  CHECK(bit_equal(slice_channels(all, 2, 4), b));
  CHECK(bit_equal(slice_channels(all, 6, 2), c));

  auto bad = Tensor<float>({2, 2, 4, 3});
  CHECK_THROWS_AS(concat_channels<float>({&a, &bad}), std::invalid_argument);
}

TEST_CASE("add: zero, values, commutativity, mismatch") {
  auto a = Tensor<double>::from({1, 2, 1, 1}, {1, 2});
  auto b = Tensor<double>::from({1, 2, 1, 1}, {3, 4});
  auto sum = add(a, b);
  CHECK(sum.data[0] == 4.0);
  CHECK(sum.data[1] == 6.0);
  CHECK(bit_equal(add(a, Tensor<double>({1, 2, 1, 1})), a));

  Rng rng(5);
  auto r1 = random_tensor<double>({2, 3, 4, 4}, rng);
  auto r2 = random_tensor<double>({2, 3, 4, 4}, rng);
  CHECK(bit_equal(add(r1, r2), add(r2, r1)));

  auto odd = Tensor<double>({1, 3, 1, 1});
  CHECK_THROWS_AS(add(a, odd), std::invalid_argument);
}

TEST_CASE("relu and elu pointwise values") {
  auto x = Tensor<double>::from({1, 4, 1, 1}, {-2.0, 3.0, 0.0, -1.0});
  auto r = relu(x);
  CHECK(r.data[0] == 0.0);
  CHECK(r.data[1] == 3.0);
  CHECK(r.data[2] == 0.0);

  auto e = elu(x, 1.0);
  CHECK(e.data[0] == doctest::Approx(std::exp(-2.0) - 1.0));
  CHECK(e.data[1] == 3.0);
  CHECK(e.data[2] == 0.0);
  CHECK(e.data[3] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-9));
  CHECK(e.data[3] == doctest::Approx(-0.63212).epsilon(1e-4));
}

TEST_CASE("softmax: symmetry, closed form, shift invariance, simplex") {
  auto z = Tensor<double>::from({1, 2, 1, 1}, {0.0, 0.0});
  auto p = softmax(z);
  CHECK(p.data[0] == doctest::Approx(0.5));
  CHECK(p.data[1] == doctest::Approx(0.5));

  auto z2 = Tensor<double>::from({1, 2, 1, 1}, {std::log(2.0), 0.0});
  auto p2 = softmax(z2);
  CHECK(p2.data[0] == doctest::Approx(2.0 / 3.0));
  CHECK(p2.data[1] == doctest::Approx(1.0 / 3.0));

  Rng rng(8);
  auto logits = random_tensor<double>({3, 10, 1, 1}, rng, -4.0, 4.0);
  auto base = softmax(logits);
  auto shifted = logits;
  shifted.data += 17.5;
  CHECK(max_rel_err(softmax(shifted), base) < 1e-12);

  for (Index n = 0; n < 3; ++n) {
    double sum = 0.0;
    for (Index k = 0; k < 10; ++k) {
      const double v = base.data[n * 10 + k];
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}
