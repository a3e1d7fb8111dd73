// SPDX-License-Identifier: Apache-2.0
//
// Tensor, RNG and autodiff machinery: every differentiable op is checked
// against central finite differences before anything downstream trusts it.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "zsc/nn.hpp"

using namespace zsc;
using testutil::gradcheck;
using testutil::random_tensor;

TEST_CASE("tensor shape and indexing") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  t.at3(1, 2, 3) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK(t.shape_str() == "[2,3,4]");
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), std::invalid_argument);
  Tensor r = t.reshaped({24});
  CHECK(r[23] == 5.0);
}

TEST_CASE("rng determinism and distributions") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(42), d(43);
  bool any_diff = false;
  for (int i = 0; i < 16; ++i) any_diff |= (c.next_u64() != d.next_u64());
  CHECK(any_diff);

  Rng e(7);
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = e.normal();
  for (double x : xs) mean += x;
  mean /= n;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);

  Rng f(9);
  for (int i = 0; i < 1000; ++i) {
    const int v = f.uniform_int(3, 7);
    CHECK(v >= 3);
    CHECK(v <= 7);
  }
}

TEST_CASE("conv2d forward matches a hand-computed case") {
  // 1 input channel, 3x3 kernel, single valid output position.
  auto x = ad::leaf(Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  auto w = ad::leaf(Tensor::from({1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto b = ad::leaf(Tensor::from({1}, {0.5}));
  auto y = ad::conv2d(x, w, b, 1, 0);
  CHECK(y->value.numel() == 1);
  CHECK(y->value[0] == doctest::Approx(1 + 5 + 9 + 0.5));

  auto y_pad = ad::conv2d(x, w, b, 1, 1);
  CHECK(y_pad->value.dim(1) == 3);
  CHECK(y_pad->value.dim(2) == 3);
  auto y_stride = ad::conv2d(x, w, b, 2, 1);
  CHECK(y_stride->value.dim(1) == 2);
}

TEST_CASE("gradients of all core ops match finite differences") {
  Rng rng(11);
  auto x = ad::leaf(random_tensor({2, 6, 5}, rng), true);
  auto w = ad::leaf(random_tensor({3, 2, 3, 3}, rng), true);
  auto b = ad::leaf(random_tensor({3}, rng), true);
  auto v = ad::leaf(random_tensor({2}, rng), true);
  auto lw = ad::leaf(random_tensor({4, 6}, rng), true);
  auto lb = ad::leaf(random_tensor({4}, rng), true);

  SUBCASE("conv2d + relu + gap") {
    auto loss = [&] {
      return ad::sum(ad::global_avg_pool(ad::relu(ad::conv2d(x, w, b, 2, 1))));
    };
    CHECK(gradcheck({x, w, b}, loss) < 1e-6);
  }
  SUBCASE("correlate and concat") {
    auto loss = [&] {
      auto s = ad::correlate(x, v);
      auto cat = ad::concat_channels(x, s);
      return ad::sum(ad::square(cat));
    };
    CHECK(gradcheck({x, v}, loss) < 1e-6);
  }
  SUBCASE("upsample2x + crop_pad") {
    auto loss = [&] { return ad::sum(ad::square(ad::crop_pad(ad::upsample2x(x), 9, 13))); };
    CHECK(gradcheck({x}, loss) < 1e-6);
  }
  SUBCASE("linear + softmax cross entropy") {
    auto flat = ad::leaf(random_tensor({6}, rng), true);
    auto loss = [&] { return ad::softmax_cross_entropy(ad::linear(flat, lw, lb), 2); };
    CHECK(gradcheck({flat, lw, lb}, loss) < 1e-6);
  }
  SUBCASE("elementwise chain: exp, mul, scale, add_scalar, sse") {
    auto a2 = ad::leaf(random_tensor({5}, rng), true);
    auto b2 = ad::leaf(random_tensor({5}, rng), true);
    Tensor target = random_tensor({5}, rng);
    auto loss = [&] {
      auto z = ad::add(ad::mul(ad::exp(ad::scale(a2, 0.5)), b2), a2);
      return ad::sse(ad::add_scalar(z, 0.3), target);
    };
    CHECK(gradcheck({a2, b2}, loss) < 1e-6);
  }
  SUBCASE("leaky_relu and shifted_mean") {
    auto m1 = ad::leaf(random_tensor({1, 4, 4}, rng), true);
    auto m2 = ad::leaf(random_tensor({1, 4, 4}, rng), true);
    auto m3 = ad::leaf(random_tensor({1, 4, 4}, rng), true);
    auto loss = [&] {
      return ad::sum(ad::square(ad::shifted_mean(
          {ad::leaky_relu(m1, 0.2), ad::leaky_relu(m2, 0.2), ad::leaky_relu(m3, 0.2)})));
    };
    CHECK(gradcheck({m1, m2, m3}, loss) < 1e-6);
  }
  SUBCASE("concat_flat and reshape") {
    auto a2 = ad::leaf(random_tensor({4}, rng), true);
    auto b2 = ad::leaf(random_tensor({3}, rng), true);
    auto loss = [&] {
      return ad::sum(ad::square(ad::reshape(ad::concat_flat(a2, b2), {7, 1, 1})));
    };
    CHECK(gradcheck({a2, b2}, loss) < 1e-6);
  }
}

TEST_CASE("diamond graphs accumulate gradients once per path") {
  // y = sum(x*x + x), with x feeding two ops
  auto x = ad::leaf(Tensor::from({3}, {1.0, -2.0, 0.5}), true);
  auto loss = ad::sum(ad::add(ad::mul(x, x), x));
  ad::backward(loss);
  for (int i = 0; i < 3; ++i)
    CHECK(x->grad[i] == doctest::Approx(2.0 * x->value[i] + 1.0));
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  auto x = ad::leaf(Tensor::from({2}, {1.0, 2.0}), true);
  ad::backward(ad::sum(x));
  ad::backward(ad::sum(x));
  CHECK(x->grad[0] == doctest::Approx(2.0));
  x->zero_grad();
  CHECK(x->grad[0] == 0.0);
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  auto x = ad::leaf(Tensor::from({2}, {1.0, 2.0}), true);
  ad::NoGradGuard ng;
  auto y = ad::scale(x, 3.0);
  CHECK(y->value[1] == doctest::Approx(6.0));
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("softmax cross entropy matches the direct formula") {
  auto logits = ad::leaf(Tensor::from({3}, {1.0, 2.0, 0.5}));
  auto l = ad::softmax_cross_entropy(logits, 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  CHECK(l->value[0] == doctest::Approx(-std::log(std::exp(2.0) / z)));
}

TEST_CASE("AdamW determinism and decoupled decay") {
  auto make_param = [] { return ad::leaf(Tensor::from({2}, {1.0, -1.0}), true); };
  auto p1 = make_param();
  auto p2 = make_param();
  nn::AdamW o1({p1}, 1e-2, 0.1), o2({p2}, 1e-2, 0.1);
  for (int step = 0; step < 5; ++step) {
    for (auto& p : {p1, p2}) {
      p->zero_grad();
      ad::backward(ad::sum(ad::square(p)));
    }
    o1.step();
    o2.step();
  }
  CHECK(testutil::tensors_equal(p1->value, p2->value));

  // zero gradient still shrinks weights when decay is on (decoupled term)
  auto p3 = ad::leaf(Tensor::from({1}, {1.0}), true);
  nn::AdamW o3({p3}, 1e-2, 0.5);
  p3->zero_grad();
  o3.step();
  CHECK(p3->value[0] == doctest::Approx(1.0 - 1e-2 * 0.5));
}

TEST_CASE("upsample2x bilinear values on a ramp") {
  auto x = ad::leaf(Tensor::from({1, 1, 4}, {0.0, 1.0, 2.0, 3.0}));
  auto y = ad::upsample2x(x);
  CHECK(y->value.dim(1) == 2);
  CHECK(y->value.dim(2) == 8);
  // src = (j+0.5)/2 - 0.5
  CHECK(y->value.at3(0, 0, 2) == doctest::Approx(0.75));
  CHECK(y->value.at3(0, 0, 3) == doctest::Approx(1.25));
  CHECK(y->value.at3(0, 1, 4) == doctest::Approx(1.75));
  // clamped borders replicate
  CHECK(y->value.at3(0, 0, 0) == doctest::Approx(0.0));
  CHECK(y->value.at3(0, 1, 7) == doctest::Approx(3.0));
}
