#pragma once

#include <vector>

#include "dbl/tensor.hpp"

namespace dbl {

// Fraction of images whose per-pixel MSE to the target is strictly below the
// threshold. images: [B,C,H,W], target: [C,H,W].
float asr(const Tensor& images, const Tensor& target, float mse_threshold = 0.1f);

// Single-scale SSIM with a 7x7 uniform window over valid positions,
// C1=(0.01*L)^2, C2=(0.03*L)^2, dynamic range L=2 for [-1,1] images.
// Inputs [C,H,W] (or [H,W]); mean over windows and channels.
float ssim(const Tensor& a, const Tensor& b);

// Mean SSIM of each batch image [B,C,H,W] against one target [C,H,W].
float mean_ssim(const Tensor& images, const Tensor& target);

// Diagonal-Gaussian fit of the fixed-random-projection features (64 dims).
struct MomentFit {
  std::vector<float> mu, var;
};
MomentFit fit_features(const Tensor& batch);

// Frechet distance between diagonal Gaussians:
// d^2 = ||mu_a - mu_b||^2 + sum_i (v_a,i + v_b,i - 2*sqrt(v_a,i * v_b,i)).
float frechet_diag(const MomentFit& a, const MomentFit& b);

// Desk-scale FID stand-in; both sets need >= 64 samples. Values are only
// comparable to each other, never to Inception-feature FID numbers.
float fid_proxy(const Tensor& set_a, const Tensor& set_b);

struct EvalReport {
  float asr = 0.f;
  float ssim_to_target = 0.f;
  float fid_proxy = 0.f;
};

// Relative changes (after - before) / before per metric; a zero "before"
// falls back to the absolute difference and sets the matching flag.
struct DeltaReport {
  float dasr = 0.f, dssim = 0.f, dfid = 0.f;
  bool absolute_asr = false, absolute_ssim = false, absolute_fid = false;
};
DeltaReport delta_report(const EvalReport& before, const EvalReport& after);

}  // namespace dbl
