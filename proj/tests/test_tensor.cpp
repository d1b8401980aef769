#include <cmath>
#include <functional>
#include <vector>

#include "dbl/rng.hpp"
#include "dbl/tensor.hpp"
#include "doctest.h"

using namespace dbl;

namespace {

// Central-difference gradient check. fn must rebuild the graph from the
// plain data vectors each call and return a scalar loss.
void check_grads(const std::function<Tensor(std::vector<Tensor>&)>& fn,
                 std::vector<std::vector<float>> data, std::vector<Shape> shapes,
                 float h = 1e-3f, float tol = 2e-3f) {
  auto build = [&](bool grad) {
    std::vector<Tensor> ts;
    for (size_t i = 0; i < data.size(); ++i) ts.push_back(Tensor::from(data[i], shapes[i], grad));
    return ts;
  };
  auto ts = build(true);
  Tensor loss = fn(ts);
  backward(loss);
  for (size_t i = 0; i < data.size(); ++i) {
    REQUIRE(ts[i].has_grad());
    for (size_t j = 0; j < data[i].size(); ++j) {
      const float orig = data[i][j];
      data[i][j] = orig + h;
      auto tp = build(false);
      const float fp = fn(tp).value();
      data[i][j] = orig - h;
      auto tm = build(false);
      const float fm = fn(tm).value();
      data[i][j] = orig;
      const float fd = (fp - fm) / (2 * h);
      const float ad = ts[i].grad()[j];
      const float err = std::abs(ad - fd) / std::max(1.f, std::abs(fd));
      CHECK_MESSAGE(err <= tol, "input ", i, " elem ", j, ": ad=", ad, " fd=", fd);
    }
  }
}

std::vector<float> rand_vec(RandomSource& r, size_t n, float lo, float hi) {
  std::vector<float> v(n);
  for (auto& x : v) x = r.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("factories and element access") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(z.at(5) == 0.f);
  Tensor f = Tensor::full({4}, 2.5f);
  for (int i = 0; i < 4; ++i) CHECK(f.at(i) == 2.5f);
  CHECK(Tensor::scalar(3.f).value() == 3.f);
  CHECK_THROWS_AS(Tensor::from({1.f, 2.f}, {3}), std::invalid_argument);
  CHECK_THROWS_AS((void)Tensor::zeros({2, 2}).value(), std::invalid_argument);
}

TEST_CASE("elementwise arithmetic values") {
  Tensor a = Tensor::from({1, 2, 3, 4}, {4});
  Tensor b = Tensor::from({4, 3, 2, 1}, {4});
  Tensor s = add(a, b);
  for (int i = 0; i < 4; ++i) CHECK(s.at(i) == 5.f);
  CHECK(sub(a, b).at(0) == -3.f);
  CHECK(mul(a, b).at(1) == 6.f);
  CHECK(div(a, b).at(3) == 4.f);
  CHECK(add(a, 10.f).at(0) == 11.f);
  CHECK(sub(1.f, a).at(2) == -2.f);
  CHECK(scale(a, -2.f).at(1) == -4.f);
  CHECK(neg(a).at(0) == -1.f);
  CHECK(square(a).at(2) == 9.f);
  CHECK(sqrt_t(square(a)).at(3) == doctest::Approx(4.f));
}

TEST_CASE("scalar broadcast in binary ops") {
  Tensor a = Tensor::from({2, 4, 6}, {3});
  Tensor s = Tensor::scalar(2.f);
  CHECK(mul(a, s).at(2) == 12.f);
  CHECK(mul(s, a).at(0) == 4.f);
  CHECK(div(a, s).at(1) == 2.f);
  CHECK(sub(s, a).at(0) == 0.f);
}

TEST_CASE("shape and domain violations throw") {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(div(a, Tensor::zeros({2, 2})), std::domain_error);
  CHECK_THROWS_AS(sqrt_t(Tensor::from({-1.f}, {1})), std::domain_error);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), std::invalid_argument);
}

TEST_CASE("reductions") {
  Tensor a = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  CHECK(sum(a).value() == 21.f);
  CHECK(mean(a).value() == doctest::Approx(3.5f));
  Tensor m = mean_axis0(a);
  REQUIRE(m.shape() == Shape{3});
  CHECK(m.at(0) == doctest::Approx(2.5f));
  CHECK(m.at(2) == doctest::Approx(4.5f));
  CHECK(l2_norm(Tensor::from({3, 4}, {2})).value() == doctest::Approx(5.f));
}

TEST_CASE("matmul against a hand-computed product") {
  Tensor a = Tensor::from({1, 2, 3, 4}, {2, 2});
  Tensor b = Tensor::from({5, 6, 7, 8}, {2, 2});
  Tensor c = matmul(a, b);
  CHECK(c.at(0) == 19.f);
  CHECK(c.at(1) == 22.f);
  CHECK(c.at(2) == 43.f);
  CHECK(c.at(3) == 50.f);
}

TEST_CASE("conv2d identity and shift kernels") {
  // Identity kernel: center tap 1 -> output equals input.
  RandomSource rc(11, "cx");
  Tensor x = Tensor::from(rand_vec(rc, 2 * 1 * 4 * 4, -1, 1), {2, 1, 4, 4});
  std::vector<float> wk(9, 0.f);
  wk[4] = 1.f;
  Tensor w = Tensor::from(wk, {1, 1, 3, 3});
  Tensor y = conv2d(x, w, Tensor());
  for (int i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));

  // All-ones input, all-ones 3x3 kernel: interior 9, edge 6, corner 4.
  Tensor ones = Tensor::full({1, 1, 4, 4}, 1.f);
  Tensor wone = Tensor::full({1, 1, 3, 3}, 1.f);
  Tensor z = conv2d(ones, wone, Tensor());
  CHECK(z.at(5) == 9.f);   // interior
  CHECK(z.at(1) == 6.f);   // top edge
  CHECK(z.at(0) == 4.f);   // corner
  // bias adds per output channel
  Tensor zb = conv2d(ones, wone, Tensor::from({0.5f}, {1}));
  CHECK(zb.at(5) == 9.5f);
}

TEST_CASE("pool, upsample, concat values") {
  Tensor x = Tensor::from({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}, {1, 1, 4, 4});
  Tensor p = avg_pool2(x);
  REQUIRE(p.shape() == Shape{1, 1, 2, 2});
  CHECK(p.at(0) == doctest::Approx((1 + 2 + 5 + 6) / 4.f));
  CHECK(p.at(3) == doctest::Approx((11 + 12 + 15 + 16) / 4.f));
  Tensor u = upsample_nearest2(p);
  REQUIRE(u.shape() == Shape{1, 1, 4, 4});
  CHECK(u.at(0) == p.at(0));
  CHECK(u.at(1) == p.at(0));
  CHECK(u.at(4) == p.at(0));
  Tensor c = concat_channels(x, x);
  REQUIRE(c.shape() == Shape{1, 2, 4, 4});
  CHECK(c.at(16 + 3) == x.at(3));
}

TEST_CASE("group_norm normalizes per group") {
  RandomSource r(21, "gn");
  Tensor x = Tensor::from(rand_vec(r, 2 * 4 * 3 * 3, -2, 2), {2, 4, 3, 3});
  Tensor gamma = Tensor::full({4}, 1.f);
  Tensor beta = Tensor::zeros({4});
  Tensor y = group_norm(x, gamma, beta, 2);
  // each (sample, group) block should have ~zero mean and ~unit variance
  for (int s = 0; s < 2; ++s)
    for (int g = 0; g < 2; ++g) {
      double sum = 0, sum2 = 0;
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) {
          float v = y.at(((s * 4) + g * 2 + c) * 9 + i);
          sum += v;
          sum2 += v * v;
        }
      CHECK(std::abs(sum / 18) < 1e-5);
      CHECK(sum2 / 18 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("backward accumulates and zero_grad resets") {
  Tensor a = Tensor::from({2.f}, {1}, true);
  Tensor loss = mul(a, a);
  backward(loss);
  CHECK(a.grad()[0] == doctest::Approx(4.f));
  backward(mul(a, a));
  CHECK(a.grad()[0] == doctest::Approx(8.f));  // accumulated
  a.zero_grad();
  CHECK(a.grad()[0] == 0.f);
}

TEST_CASE("detach blocks gradient flow, clone copies data") {
  Tensor a = Tensor::from({3.f}, {1}, true);
  Tensor d = a.detach();
  CHECK_FALSE(d.requires_grad());
  Tensor loss = mul(d, d);
  CHECK_FALSE(loss.requires_grad());
  Tensor c = a.clone();
  c.data()[0] = 7.f;
  CHECK(a.at(0) == 3.f);
  CHECK(c.requires_grad());
}

TEST_CASE("diamond graph reuses a node once per path") {
  // f = (a*b) + (a*b) => df/da = 2b
  Tensor a = Tensor::from({3.f}, {1}, true);
  Tensor b = Tensor::from({5.f}, {1}, true);
  Tensor p = mul(a, b);
  backward(add(p, p));
  CHECK(a.grad()[0] == doctest::Approx(10.f));
  CHECK(b.grad()[0] == doctest::Approx(6.f));
}

TEST_CASE("gradients match central differences: elementwise chain") {
  RandomSource r(31, "fd1");
  check_grads(
      [](std::vector<Tensor>& t) {
        Tensor u = add(mul(t[0], t[1]), div(t[0], t[1]));
        Tensor v = sub(silu(u), scale(square(t[0]), 0.3f));
        return mean(square(v));
      },
      {rand_vec(r, 12, 0.5f, 1.5f), rand_vec(r, 12, 1.0f, 2.0f)}, {{3, 4}, {3, 4}});
}

TEST_CASE("gradients match central differences: sqrt, norm, mse") {
  RandomSource r(32, "fd2");
  check_grads(
      [](std::vector<Tensor>& t) {
        Tensor u = sqrt_t(t[0]);
        return add(mse(u, t[1]), scale(l2_norm(t[1]), 0.1f));
      },
      {rand_vec(r, 8, 0.5f, 2.f), rand_vec(r, 8, -1.f, 1.f)}, {{8}, {8}});
}

TEST_CASE("gradients match central differences: matmul") {
  RandomSource r(33, "fd3");
  check_grads(
      [](std::vector<Tensor>& t) { return sum(square(matmul(t[0], t[1]))); },
      {rand_vec(r, 6, -1, 1), rand_vec(r, 12, -1, 1)}, {{2, 3}, {3, 4}});
}

TEST_CASE("gradients match central differences: conv2d") {
  RandomSource r(34, "fd4");
  check_grads(
      [](std::vector<Tensor>& t) { return sum(square(conv2d(t[0], t[1], t[2]))); },
      {rand_vec(r, 2 * 2 * 5 * 5, -1, 1), rand_vec(r, 3 * 2 * 9, -0.5f, 0.5f),
       rand_vec(r, 3, -0.2f, 0.2f)},
      {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}});
}

TEST_CASE("gradients match central differences: conv2d vectorized width") {
  RandomSource r(35, "fd5");
  check_grads(
      [](std::vector<Tensor>& t) { return mean(square(conv2d(t[0], t[1], Tensor()))); },
      {rand_vec(r, 1 * 1 * 8 * 8, -1, 1), rand_vec(r, 1 * 1 * 9, -0.5f, 0.5f)},
      {{1, 1, 8, 8}, {1, 1, 3, 3}});
}

TEST_CASE("gradients match central differences: group_norm") {
  RandomSource r(36, "fd6");
  check_grads(
      [](std::vector<Tensor>& t) {
        return sum(square(group_norm(t[0], t[1], t[2], 2)));
      },
      {rand_vec(r, 1 * 4 * 3 * 3, -1.5f, 1.5f), rand_vec(r, 4, 0.5f, 1.5f),
       rand_vec(r, 4, -0.5f, 0.5f)},
      {{1, 4, 3, 3}, {4}, {4}}, 1e-3f, 4e-3f);
}

TEST_CASE("gradients match central differences: pool/upsample/concat/bias") {
  RandomSource r(37, "fd7");
  check_grads(
      [](std::vector<Tensor>& t) {
        Tensor c = concat_channels(t[0], t[1]);
        Tensor p = avg_pool2(c);
        Tensor u = upsample_nearest2(p);
        Tensor y = add_channel_bias(u, t[2]);
        return sum(square(y));
      },
      {rand_vec(r, 1 * 1 * 4 * 4, -1, 1), rand_vec(r, 1 * 2 * 4 * 4, -1, 1),
       rand_vec(r, 3, -0.5f, 0.5f)},
      {{1, 1, 4, 4}, {1, 2, 4, 4}, {3}});
}

TEST_CASE("gradients match central differences: per-sample channel bias, row bias") {
  RandomSource r(38, "fd8");
  check_grads(
      [](std::vector<Tensor>& t) {
        Tensor y = add_channel_bias(t[0], t[1]);
        Tensor z = add_row_bias(t[2], t[3]);
        return add(mean(square(y)), mean(square(z)));
      },
      {rand_vec(r, 2 * 3 * 2 * 2, -1, 1), rand_vec(r, 6, -1, 1), rand_vec(r, 8, -1, 1),
       rand_vec(r, 4, -1, 1)},
      {{2, 3, 2, 2}, {2, 3}, {2, 4}, {4}});
}

TEST_CASE("scale_channels multiplies each channel plane by its per-sample factor") {
  Tensor x = Tensor::from({1, 2, 3, 4, 5, 6, 7, 8}, {2, 2, 1, 2});
  Tensor s = Tensor::from({2, -1, 0.5f, 3}, {2, 2});
  Tensor y = scale_channels(x, s);
  const std::vector<float> want = {2, 4, -3, -4, 2.5f, 3, 21, 24};
  for (int i = 0; i < 8; ++i) CHECK(y.at(i) == doctest::Approx(want[i]));
  CHECK_THROWS_AS(scale_channels(x, Tensor::from({1, 2}, {1, 2})), std::invalid_argument);
  CHECK_THROWS_AS(scale_channels(Tensor::from({1, 2}, {1, 2}), s), std::invalid_argument);
}

TEST_CASE("gradients match central differences: scale_channels") {
  RandomSource r(52, "fd12");
  check_grads(
      [](std::vector<Tensor>& t) { return mean(square(scale_channels(t[0], t[1]))); },
      {rand_vec(r, 2 * 3 * 2 * 2, -1, 1), rand_vec(r, 6, -1.5f, 1.5f)},
      {{2, 3, 2, 2}, {2, 3}});
}

TEST_CASE("global_avg_pool averages every spatial plane to one value") {
  Tensor x = Tensor::from({1, 3, 5, 7, 2, 2, 2, 2}, {1, 2, 2, 2});
  Tensor y = global_avg_pool(x);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.at(0) == doctest::Approx(4.f));
  CHECK(y.at(1) == doctest::Approx(2.f));
  CHECK_THROWS_AS(global_avg_pool(Tensor::from({1, 2}, {1, 2})), std::invalid_argument);
}

TEST_CASE("gradients match central differences: global_avg_pool") {
  RandomSource r(57, "fd13");
  check_grads(
      [](std::vector<Tensor>& t) { return mean(square(global_avg_pool(t[0]))); },
      {rand_vec(r, 2 * 3 * 2 * 2, -1, 1)}, {{2, 3, 2, 2}});
}

TEST_CASE("global_max_pool takes the largest entry of every plane") {
  Tensor x = Tensor::from({1, 3, 5, 7, 2, 2, 9, 2}, {1, 2, 2, 2});
  Tensor y = global_max_pool(x);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.at(0) == doctest::Approx(7.f));
  CHECK(y.at(1) == doctest::Approx(9.f));
  CHECK_THROWS_AS(global_max_pool(Tensor::from({1, 2}, {1, 2})), std::invalid_argument);
}

TEST_CASE("global_max_pool routes gradient to the argmax only") {
  Tensor x = Tensor::from({1, 3, 5, 7, 2, 2, 9, 2}, {1, 2, 2, 2});
  Tensor loss = mean(square(global_max_pool(x)));
  backward(loss);
  // d/dx mean(y^2) = y / 1 at the argmax (two planes -> factor 1/2 * 2y)
  const std::vector<float> g = x.grad();
  CHECK(g[3] == doctest::Approx(7.f));
  CHECK(g[6] == doctest::Approx(9.f));
  for (size_t i : {0u, 1u, 2u, 4u, 5u, 7u}) CHECK(g[i] == 0.f);
}

TEST_CASE("gradients match central differences: mean_axis0") {
  RandomSource r(39, "fd9");
  check_grads(
      [](std::vector<Tensor>& t) { return sum(square(mean_axis0(t[0]))); },
      {rand_vec(r, 4 * 5, -1, 1)}, {{4, 5}});
}

TEST_CASE("add_image tiles one image across the batch") {
  Tensor x = Tensor::from({1.f, 2.f, 3.f, 4.f}, {2, 2});
  Tensor img = Tensor::from({10.f, 20.f}, {2});
  Tensor y = add_image(x, img);
  CHECK(y.at(0) == 11.f);
  CHECK(y.at(1) == 22.f);
  CHECK(y.at(2) == 13.f);
  CHECK(y.at(3) == 24.f);
  CHECK_THROWS_AS(add_image(x, Tensor::zeros({3})), std::invalid_argument);
  CHECK_THROWS_AS(add_image(x, Tensor::zeros({2, 2})), std::invalid_argument);
}

TEST_CASE("gradients match central differences: add_image") {
  RandomSource r(41, "fd10");
  check_grads(
      [](std::vector<Tensor>& t) { return mean(square(silu(add_image(t[0], t[1])))); },
      {rand_vec(r, 3 * 2 * 2, -1, 1), rand_vec(r, 4, -1, 1)}, {{3, 2, 2}, {2, 2}});
}

TEST_CASE("utility predicates") {
  Tensor a = Tensor::from({1.f, 2.f}, {2});
  CHECK(all_finite(a));
  Tensor b = Tensor::from({1.f, std::numeric_limits<float>::infinity()}, {2});
  CHECK_FALSE(all_finite(b));
  Tensor c = clamp_unit(Tensor::from({-3.f, 0.25f, 9.f}, {3}));
  CHECK(c.at(0) == -1.f);
  CHECK(c.at(1) == 0.25f);
  CHECK(c.at(2) == 1.f);
}

TEST_CASE("ops are deterministic across repeated evaluation") {
  RandomSource r(40, "det");
  auto xv = rand_vec(r, 2 * 3 * 8 * 8, -1, 1);
  auto wv = rand_vec(r, 4 * 3 * 9, -0.3f, 0.3f);
  Tensor x1 = Tensor::from(xv, {2, 3, 8, 8});
  Tensor w1 = Tensor::from(wv, {4, 3, 3, 3});
  Tensor y1 = conv2d(x1, w1, Tensor());
  Tensor y2 = conv2d(Tensor::from(xv, {2, 3, 8, 8}), Tensor::from(wv, {4, 3, 3, 3}), Tensor());
  for (int i = 0; i < y1.numel(); ++i) CHECK(y1.at(i) == y2.at(i));
}
