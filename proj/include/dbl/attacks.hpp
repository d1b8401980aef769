#pragma once

#include <cstdint>
#include <vector>

#include "dbl/predictor.hpp"
#include "dbl/rng.hpp"
#include "dbl/schedule.hpp"
#include "dbl/tensor.hpp"

namespace dbl {

enum class AttackFamily { baddiff, trojdiff, villan };

const char* family_name(AttackFamily f);
AttackFamily family_from_name(const std::string& name);

// One backdoor configuration: which chain family carries the shift, the
// additive trigger image r, the generation target, and the mixing rate.
struct BackdoorSpec {
  AttackFamily family = AttackFamily::baddiff;
  Tensor trigger;   // [C,H,W]
  Tensor target;    // [C,H,W], values in [-1,1]
  float poisoning_rate = 0.1f;
  float gamma_blend = 0.6f;               // trojdiff blend coefficient
  std::vector<float> villan_rho_hat;      // size T+1; empty = sqrt(1-abar)
};

void validate_spec(const BackdoorSpec& spec, const NoiseSchedule& s);

// Per-step forward shift rho, model-absorbed reverse shift rho_tilde, and
// cumulative forward shift (all coefficients of the trigger image), 1-indexed
// arrays of size T+1.
struct BadDiffShift {
  std::vector<float> rho, rho_tilde, cumulative;
};
BadDiffShift baddiff_shift(const NoiseSchedule& s);

// Blended-chain coefficients. k carries the per-step trigger weights whose
// alpha-weighted sums telescope to sqrt(1-abar); the _b arrays drive the
// separate backdoor reverse chain (the model predicts the standardized
// noise, so the epsilon coefficient carries gamma).
struct TrojDiffCoeffs {
  std::vector<float> k, kappa_tilde_b, kappa_hat_b, rho_tilde_b, upsilon_b;
};
TrojDiffCoeffs trojdiff_coeffs(const NoiseSchedule& s, float gamma);

// General-chain coefficients from marginal schedules alpha_hat (mean decay),
// beta_hat (marginal variance), rho_hat (marginal trigger shift); arrays are
// 1-indexed with anchors alpha_hat[0]=1, beta_hat[0]=0, rho_hat[0]=0.
// kappa_hat is the subtractive epsilon-form coefficient; rho_tilde is the
// model-absorbed reverse shift for use with the standard sampler.
struct VillanCoeffs {
  std::vector<float> kappa, upsilon, kappa_tilde, kappa_hat, upsilon_tilde, rho_step, rho_tilde;
};
VillanCoeffs villan_coeffs(const std::vector<float>& alpha_hat,
                           const std::vector<float>& beta_hat,
                           const std::vector<float>& rho_hat);

std::vector<float> villan_rho_hat_default(const NoiseSchedule& s);

// x = a*target + b*trigger + c*eps at each t, and the training-target shift
// coefficient d (regression target eps + d*trigger). Index 0 unused.
struct MarginalCoeffs {
  std::vector<float> a, b, c, d;
};
MarginalCoeffs backdoor_marginal_coeffs(const BackdoorSpec& spec, const NoiseSchedule& s);

// Backdoor forward marginal draw at timestep t for a batch of eps.
Tensor q_sample_backdoor(const BackdoorSpec& spec, int t, const Tensor& eps,
                         const NoiseSchedule& s);

// Draws x^T from the family's trigger distribution: N(r, I) for baddiff,
// N(rho_hat^T r, beta_hat^T I) for villan, N((1-gamma) r, gamma^2 I) for
// trojdiff.
Tensor trigger_noise(const BackdoorSpec& spec, int n, const NoiseSchedule& s, RandomSource& rng);

// Mixed clean/backdoor training: each batch carries an expected fraction p of
// backdoor rows next to clean ones. Returns per-epoch mean loss.
std::vector<float> train_backdoor(NoisePredictor& m, const Tensor& images,
                                  const BackdoorSpec& spec, const TrainConfig& cfg,
                                  const NoiseSchedule& s);

// n samples from the backdoor reverse chain (trojdiff switches to its
// separate reverse coefficients; the others reuse the clean sampler).
Tensor sample_with_trigger(const Denoiser& m, const NoiseSchedule& s, const BackdoorSpec& spec,
                           int n, RandomSource& rng);

enum class AdaptiveVariant { loss_rb_suppression, skip_shift_at_T };

// Backdoor training with the attacker-side countermeasures of the adaptive
// threat model: variant 1 adds a term suppressing trigger response at step T;
// variant 2 drops the distribution shift at t == T.
std::vector<float> adaptive_attack_train(NoisePredictor& m, const Tensor& images,
                                         const BackdoorSpec& spec, const TrainConfig& cfg,
                                         const NoiseSchedule& s, AdaptiveVariant variant);

}  // namespace dbl
