#include <cmath>
#include <vector>

#include "dbl/rng.hpp"
#include "dbl/schedule.hpp"
#include "dbl/tensor.hpp"
#include "doctest.h"

using namespace dbl;

namespace {

// Optimal predictor for a dataset holding a single image: the posterior mean
// of eps given x^t is exact, so the reverse chain must reconstruct the image.
struct PointPredictor : Denoiser {
  Tensor x0;
  const NoiseSchedule* s;
  Tensor predict(const Tensor& x, int t) const override {
    const float ab = s->alpha_bar[t];
    std::vector<float> out(x.data());
    for (int b = 0; b < x.dim(0); ++b)
      for (std::int64_t i = 0; i < x0.numel(); ++i) {
        auto idx = static_cast<size_t>(b * x0.numel() + i);
        out[idx] = (out[idx] - std::sqrt(ab) * x0.at(i)) / std::sqrt(1.f - ab);
      }
    return Tensor::from(out, x.shape());
  }
};

struct ZeroPredictor : Denoiser {
  Tensor predict(const Tensor& x, int) const override { return Tensor::zeros(x.shape()); }
};

struct DampPredictor : Denoiser {
  Tensor predict(const Tensor& x, int t) const override {
    return scale(x, 0.1f + 0.001f * static_cast<float>(t)).detach();
  }
};

}  // namespace

TEST_CASE("hand-computed alpha_bar for a two-step schedule") {
  NoiseSchedule s = build_schedule(2, 0.1f, 0.1f, ChainKind::vp);
  CHECK(s.alpha_bar[0] == 1.f);
  CHECK(s.alpha_bar[1] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(s.alpha_bar[2] == doctest::Approx(0.81).epsilon(1e-6));
}

TEST_CASE("reference schedule endpoint matches a double-precision product") {
  NoiseSchedule s = build_schedule(1000, 1e-4f, 0.02f, ChainKind::vp);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t)
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
  CHECK(std::abs(s.alpha_bar[1000] - prod) < 1e-7);
  CHECK(std::abs(prod - 4.0e-5) < 2e-6);  // near-total signal destruction
}

TEST_CASE("chain identities hold for every timestep") {
  NoiseSchedule s = build_schedule(100, 1e-4f, 0.2f, ChainKind::vp);
  for (int t = 1; t <= s.T; ++t) {
    CHECK(std::abs(s.kappa_tilde[t] * s.kappa[t] - 1.f) < 1e-6);
    CHECK(std::abs(s.kappa[t] * s.kappa[t] - s.alpha[t]) < 1e-6);
    CHECK(std::abs(s.upsilon[t] - s.beta[t]) < 1e-9);
    const float ut = (1.f - s.alpha_bar[t - 1]) / (1.f - s.alpha_bar[t]) * s.beta[t];
    CHECK(std::abs(s.upsilon_tilde[t] - ut) < 1e-6);
    const float kh = -(1.f - s.alpha[t]) / (std::sqrt(s.alpha[t] - s.alpha[t] * s.alpha_bar[t]));
    CHECK(std::abs(s.kappa_hat[t] - kh) < 1e-6);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);  // strictly decreasing
    CHECK(s.beta[t] > 0.f);
    CHECK(s.beta[t] < 1.f);
  }
  CHECK(s.alpha_bar[s.T] <= 0.05f);  // default schedule destroys the signal
  CHECK(s.upsilon_tilde[1] == 0.f);  // terminal step is deterministic
}

TEST_CASE("VE schedule: cumulative variance identity") {
  NoiseSchedule s = build_schedule(50, 0.01f, 10.f, ChainKind::ve);
  float cum = 0.f;
  for (int t = 1; t <= s.T; ++t) {
    CHECK(s.sigma[t] > s.sigma[t - 1]);
    cum += s.upsilon[t];
    CHECK(std::abs(cum - s.sigma[t] * s.sigma[t]) <
          1e-5f * std::max(1.f, s.sigma[t] * s.sigma[t]));
    const float a = s.sigma[t - 1] * s.sigma[t - 1], b = s.sigma[t] * s.sigma[t];
    CHECK(s.kappa_tilde[t] == doctest::Approx(a / b).epsilon(1e-6));
    CHECK(s.kappa_hat[t] == doctest::Approx(1.f - a / b).epsilon(1e-6));
  }
  CHECK(s.sigma[1] == doctest::Approx(0.01f));
  CHECK(s.sigma[50] == doctest::Approx(10.f));
  CHECK(s.upsilon_tilde[1] == 0.f);
}

TEST_CASE("build_schedule validates its ranges") {
  CHECK_THROWS_AS(build_schedule(1, 0.1f, 0.1f, ChainKind::vp), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.f, 0.1f, ChainKind::vp), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.2f, 0.1f, ChainKind::vp), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.5f, 1.f, ChainKind::vp), std::invalid_argument);
}

TEST_CASE("q_sample closed form") {
  NoiseSchedule s = build_schedule(2, 0.1f, 0.1f, ChainKind::vp);
  Tensor x0 = Tensor::from({0.5f, -0.25f}, {1, 2});
  Tensor eps0 = Tensor::zeros({1, 2});
  Tensor a = q_sample(x0, 2, eps0, s);  // alpha_bar = 0.81
  CHECK(a.at(0) == doctest::Approx(0.45f).epsilon(1e-6));
  CHECK(a.at(1) == doctest::Approx(-0.225f).epsilon(1e-6));
  Tensor eps = Tensor::from({1.f, 2.f}, {1, 2});
  Tensor b = q_sample(Tensor::zeros({1, 2}), 2, eps, s);
  CHECK(b.at(0) == doctest::Approx(std::sqrt(1.f - 0.81f)).epsilon(1e-6));
  CHECK_THROWS_AS(q_sample(x0, 3, eps, s), std::invalid_argument);
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), std::invalid_argument);
}

TEST_CASE("per-sample timesteps match the scalar path") {
  NoiseSchedule s = build_schedule(10, 0.01f, 0.2f, ChainKind::vp);
  RandomSource r(5, "qs");
  Tensor x0 = Tensor::uniform({3, 1, 2, 2}, r, -1, 1);
  Tensor eps = Tensor::normal({3, 1, 2, 2}, r);
  Tensor batch = q_sample(x0, std::vector<int>{2, 7, 10}, eps, s);
  const int ts[3] = {2, 7, 10};
  for (int b = 0; b < 3; ++b) {
    const float ab = s.alpha_bar[ts[b]];
    for (int i = 0; i < 4; ++i) {
      const float want = std::sqrt(ab) * x0.at(b * 4 + i) + std::sqrt(1 - ab) * eps.at(b * 4 + i);
      CHECK(batch.at(b * 4 + i) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("q_sample is differentiable in x0 and eps") {
  NoiseSchedule s = build_schedule(5, 0.05f, 0.2f, ChainKind::vp);
  Tensor x0 = Tensor::from({0.4f, -0.2f}, {1, 2}, true);
  Tensor eps = Tensor::from({0.3f, 0.9f}, {1, 2}, true);
  backward(sum(q_sample(x0, 3, eps, s)));
  CHECK(x0.grad()[0] == doctest::Approx(std::sqrt(s.alpha_bar[3])));
  CHECK(eps.grad()[1] == doctest::Approx(std::sqrt(1.f - s.alpha_bar[3])));
}

TEST_CASE("composed single-step transitions match the closed-form marginal") {
  // Monte Carlo over the transition chain x^i = kappa^i x^{i-1} + sqrt(upsilon^i) z.
  NoiseSchedule s = build_schedule(10, 0.02f, 0.25f, ChainKind::vp);
  const int t = 5, N = 10000;
  const float x0 = 0.7f;
  RandomSource r(77, "mc");
  double sum = 0, sum2 = 0;
  for (int n = 0; n < N; ++n) {
    float x = x0;
    for (int i = 1; i <= t; ++i) x = s.kappa[i] * x + std::sqrt(s.upsilon[i]) * r.normal();
    sum += x;
    sum2 += static_cast<double>(x) * x;
  }
  const double m = sum / N;
  const double var = sum2 / N - m * m;
  const double want_m = std::sqrt(s.alpha_bar[t]) * x0;
  const double want_v = 1.0 - s.alpha_bar[t];
  CHECK(std::abs(m - want_m) < 3.0 * std::sqrt(want_v) / std::sqrt(static_cast<double>(N)));
  CHECK(std::abs(var - want_v) < 0.05 * want_v);
}

TEST_CASE("p_step zero-prediction and terminal-step conventions") {
  NoiseSchedule s = build_schedule(10, 0.01f, 0.2f, ChainKind::vp);
  ZeroPredictor zp;
  Tensor x = Tensor::from({0.8f, -0.4f}, {1, 2});
  Tensor z0 = Tensor::zeros({1, 2});
  Tensor y = p_step(zp, x, 6, s, z0);
  CHECK(y.at(0) == doctest::Approx(0.8f / std::sqrt(s.alpha[6])).epsilon(1e-6));
  // at t = 1 the noise argument must be ignored
  Tensor big = Tensor::full({1, 2}, 100.f);
  Tensor a = p_step(zp, x, 1, s, big);
  Tensor b = p_step(zp, x, 1, s, z0);
  CHECK(a.at(0) == b.at(0));
  CHECK(a.at(1) == b.at(1));
}

TEST_CASE("exact single-point predictor recovers the image through the full chain") {
  NoiseSchedule s = build_schedule(100, 1e-4f, 0.2f, ChainKind::vp);
  PointPredictor pp;
  pp.x0 = Tensor::from({0.6f, -0.3f, 0.1f, 0.9f}, {1, 1, 2, 2});
  pp.s = &s;
  RandomSource r(123, "chain");
  Tensor xT = Tensor::normal({1, 1, 2, 2}, r);
  Tensor out = sample_ddpm(pp, s, xT, r);
  double mse = 0;
  for (int i = 0; i < 4; ++i) mse += std::pow(out.at(i) - pp.x0.at(i), 2.0);
  CHECK(mse / 4 < 0.05);
  // DDIM with the exact predictor lands on the image in any step count
  Tensor out10 = sample_ddim(pp, s, xT, 10);
  for (int i = 0; i < 4; ++i) CHECK(out10.at(i) == doctest::Approx(pp.x0.at(i)).epsilon(1e-3));
}

TEST_CASE("samplers are deterministic and finite") {
  NoiseSchedule s = build_schedule(50, 1e-3f, 0.3f, ChainKind::vp);
  DampPredictor dp;
  RandomSource r(9, "det");
  Tensor xT = Tensor::normal({2, 1, 4, 4}, r);
  Tensor d1 = sample_ddim(dp, s, xT, 50);
  Tensor d2 = sample_ddim(dp, s, xT, 50);
  for (int i = 0; i < d1.numel(); ++i) CHECK(d1.at(i) == d2.at(i));
  CHECK(all_finite(d1));
  RandomSource ra = r.stream("a"), rb = r.stream("a");
  Tensor p1 = sample_ddpm(dp, s, xT, ra);
  Tensor p2 = sample_ddpm(dp, s, xT, rb);
  for (int i = 0; i < p1.numel(); ++i) CHECK(p1.at(i) == p2.at(i));
  for (int i = 0; i < p1.numel(); ++i) {
    CHECK(p1.at(i) >= -1.f);
    CHECK(p1.at(i) <= 1.f);
  }
  CHECK_THROWS_AS(sample_ddim(dp, s, xT, 51), std::invalid_argument);
  CHECK_THROWS_AS(sample_ddim(dp, s, xT, 0), std::invalid_argument);
}

TEST_CASE("VE schedules are rejected by the VP-only samplers") {
  NoiseSchedule s = build_schedule(10, 0.01f, 1.f, ChainKind::ve);
  ZeroPredictor zp;
  Tensor x = Tensor::zeros({1, 2});
  CHECK_THROWS_AS(q_sample(x, 1, x, s), std::invalid_argument);
  CHECK_THROWS_AS(p_step(zp, x, 1, s, x), std::invalid_argument);
}

TEST_CASE("scale_rows gradient") {
  Tensor x = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3}, true);
  backward(sum(scale_rows(x, {2.f, -1.f})));
  CHECK(x.grad()[0] == 2.f);
  CHECK(x.grad()[4] == -1.f);
  CHECK_THROWS_AS(scale_rows(x, {1.f}), std::invalid_argument);
}
