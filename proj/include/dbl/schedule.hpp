#pragma once

#include <vector>

#include "dbl/rng.hpp"
#include "dbl/tensor.hpp"

namespace dbl {

enum class ChainKind { vp, ve };

// Coefficients of the forward chain q(x^t|x^{t-1}) = N(kappa^t x^{t-1}, upsilon^t I)
// and the matching reverse transition N(kappa_tilde^t x^t + kappa_hat^t M(x^t,t),
// upsilon_tilde^t I). Arrays are sized T+1 and 1-indexed by timestep; index 0
// anchors the data end (alpha_bar[0] = 1, sigma[0] = 0).
//
// VP stores kappa_hat with the sign actually applied to an eps-prediction,
// i.e. negative. VE (score-model family) keeps the x0-form coefficients and is
// provided for coefficient algebra only; the samplers run on VP chains.
struct NoiseSchedule {
  ChainKind kind = ChainKind::vp;
  int T = 0;
  std::vector<float> beta, alpha, alpha_bar;  // VP arrays (neutral for VE)
  std::vector<float> sigma;                   // VE noise levels (zeros for VP)
  std::vector<float> kappa, upsilon;
  std::vector<float> kappa_tilde, kappa_hat, upsilon_tilde;
};

// VP: linear beta interpolation beta_start..beta_end over t = 1..T.
// VE: geometric sigma interpolation sigma = beta_start..beta_end.
NoiseSchedule build_schedule(int T, float beta_start, float beta_end, ChainKind kind);

// Forward marginal x^t = sqrt(alpha_bar^t) x0 + sqrt(1 - alpha_bar^t) eps.
// Differentiable in x0 and eps. The vector overload applies a per-sample t.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);
Tensor q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps,
                const NoiseSchedule& s);

// Anything that can act as the noise predictor during sampling. Returns a
// value-only tensor (no graph) of the same shape as x.
struct Denoiser {
  virtual ~Denoiser() = default;
  virtual Tensor predict(const Tensor& x, int t) const = 0;
};

// One reverse transition; z is ignored at t = 1 (terminal step is mean-only).
Tensor p_step(const Denoiser& M, const Tensor& x_t, int t, const NoiseSchedule& s,
              const Tensor& z);

// Full ancestral chain from x_T; output clamped to [-1,1] at the final step only.
Tensor sample_ddpm(const Denoiser& M, const NoiseSchedule& s, const Tensor& x_T,
                   RandomSource& rng);

// Deterministic eta = 0 update over a uniform-stride timestep subsequence.
Tensor sample_ddim(const Denoiser& M, const NoiseSchedule& s, const Tensor& x_T, int steps);

}  // namespace dbl
