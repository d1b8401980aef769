#include "dbl/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dbl {

namespace {

void require_t(const NoiseSchedule& s, int t, const char* op) {
  if (t < 1 || t > s.T)
    throw std::invalid_argument(std::string(op) + ": t=" + std::to_string(t) +
                                " outside [1," + std::to_string(s.T) + "]");
}

void require_vp(const NoiseSchedule& s, const char* op) {
  if (s.kind != ChainKind::vp)
    throw std::invalid_argument(std::string(op) + ": only variance-preserving chains");
}

}  // namespace

NoiseSchedule build_schedule(int T, float beta_start, float beta_end, ChainKind kind) {
  if (T < 2) throw std::invalid_argument("build_schedule: T must be >= 2");
  if (!(beta_start > 0.f) || !(beta_start <= beta_end))
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end");
  if (kind == ChainKind::vp && !(beta_end < 1.f))
    throw std::invalid_argument("build_schedule: VP needs beta_end < 1");

  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  const size_t n = static_cast<size_t>(T) + 1;
  s.beta.assign(n, 0.f);
  s.alpha.assign(n, 1.f);
  s.alpha_bar.assign(n, 1.f);
  s.sigma.assign(n, 0.f);
  s.kappa.assign(n, 1.f);
  s.upsilon.assign(n, 0.f);
  s.kappa_tilde.assign(n, 1.f);
  s.kappa_hat.assign(n, 0.f);
  s.upsilon_tilde.assign(n, 0.f);

  if (kind == ChainKind::vp) {
    for (int t = 1; t <= T; ++t) {
      s.beta[t] = beta_start + (beta_end - beta_start) * static_cast<float>(t - 1) /
                                   static_cast<float>(T - 1);
      s.alpha[t] = 1.f - s.beta[t];
      s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
      s.kappa[t] = std::sqrt(s.alpha[t]);
      s.upsilon[t] = s.beta[t];
      s.kappa_tilde[t] = 1.f / std::sqrt(s.alpha[t]);
      s.kappa_hat[t] =
          -(1.f - s.alpha[t]) / (std::sqrt(s.alpha[t]) * std::sqrt(1.f - s.alpha_bar[t]));
      s.upsilon_tilde[t] =
          (1.f - s.alpha_bar[t - 1]) / (1.f - s.alpha_bar[t]) * s.beta[t];
    }
  } else {
    // Geometric noise levels sigma_1..sigma_T; sigma_0 = 0 anchors the data.
    const double ratio = static_cast<double>(beta_end) / beta_start;
    for (int t = 1; t <= T; ++t) {
      s.sigma[t] = static_cast<float>(
          beta_start * std::pow(ratio, static_cast<double>(t - 1) / (T - 1)));
      const float a = s.sigma[t - 1] * s.sigma[t - 1];
      const float b = s.sigma[t] * s.sigma[t];
      s.kappa[t] = 1.f;
      s.upsilon[t] = b - a;
      s.kappa_tilde[t] = a / b;
      s.kappa_hat[t] = 1.f - s.kappa_tilde[t];  // x0-form coefficient
      s.upsilon_tilde[t] = (1.f - s.kappa_tilde[t]) * a;
    }
  }
  return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  require_vp(s, "q_sample");
  require_t(s, t, "q_sample");
  if (x0.shape() != eps.shape())
    throw std::invalid_argument("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " +
                                shape_str(eps.shape()));
  const float ab = s.alpha_bar[t];
  return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.f - ab)));
}

Tensor q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps,
                const NoiseSchedule& s) {
  require_vp(s, "q_sample");
  if (x0.rank() < 1 || static_cast<int>(t.size()) != x0.dim(0))
    throw std::invalid_argument("q_sample: one timestep per sample required");
  if (x0.shape() != eps.shape())
    throw std::invalid_argument("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " +
                                shape_str(eps.shape()));
  std::vector<float> cs(t.size()), cn(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    require_t(s, t[i], "q_sample");
    const float ab = s.alpha_bar[t[i]];
    cs[i] = std::sqrt(ab);
    cn[i] = std::sqrt(1.f - ab);
  }
  return add(scale_rows(x0, cs), scale_rows(eps, cn));
}

Tensor p_step(const Denoiser& M, const Tensor& x_t, int t, const NoiseSchedule& s,
              const Tensor& z) {
  require_vp(s, "p_step");
  require_t(s, t, "p_step");
  Tensor eps_hat = M.predict(x_t, t);
  if (eps_hat.shape() != x_t.shape())
    throw std::invalid_argument("p_step: predictor returned " + shape_str(eps_hat.shape()) +
                                " for input " + shape_str(x_t.shape()));
  Tensor mean = add(scale(x_t, s.kappa_tilde[t]), scale(eps_hat, s.kappa_hat[t]));
  if (t == 1) return mean;
  if (z.shape() != x_t.shape())
    throw std::invalid_argument("p_step: z " + shape_str(z.shape()) + " vs x " +
                                shape_str(x_t.shape()));
  return add(mean, scale(z, std::sqrt(s.upsilon_tilde[t])));
}

Tensor sample_ddpm(const Denoiser& M, const NoiseSchedule& s, const Tensor& x_T,
                   RandomSource& rng) {
  require_vp(s, "sample_ddpm");
  Tensor x = x_T.detach();
  Tensor zero = Tensor::zeros(x.shape());
  for (int t = s.T; t >= 1; --t) {
    Tensor z = t > 1 ? Tensor::normal(x.shape(), rng) : zero;
    x = p_step(M, x, t, s, z);
  }
  return clamp_unit(x);
}

Tensor sample_ddim(const Denoiser& M, const NoiseSchedule& s, const Tensor& x_T, int steps) {
  require_vp(s, "sample_ddim");
  if (steps < 1 || steps > s.T)
    throw std::invalid_argument("sample_ddim: steps=" + std::to_string(steps) +
                                " outside [1," + std::to_string(s.T) + "]");
  Tensor x = x_T.detach();
  for (int i = steps; i >= 1; --i) {
    const int t = static_cast<int>(
        std::lround(static_cast<double>(i) * s.T / static_cast<double>(steps)));
    const int tp = static_cast<int>(
        std::lround(static_cast<double>(i - 1) * s.T / static_cast<double>(steps)));
    Tensor eps_hat = M.predict(x, t);
    const float ab = s.alpha_bar[t];
    const float abp = s.alpha_bar[tp];
    // x0 estimate, then jump to the previous subsequence timestep (eta = 0).
    Tensor x0_pred = scale(sub(x, scale(eps_hat, std::sqrt(1.f - ab))), 1.f / std::sqrt(ab));
    x = add(scale(x0_pred, std::sqrt(abp)), scale(eps_hat, std::sqrt(1.f - abp)));
  }
  return clamp_unit(x);
}

}  // namespace dbl
