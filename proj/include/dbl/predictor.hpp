#pragma once

#include <cstdint>
#include <vector>

#include "dbl/nn.hpp"
#include "dbl/schedule.hpp"
#include "dbl/tensor.hpp"

namespace dbl {

struct TrainConfig {
  int epochs = 40;
  float lr = 2e-4f;
  int batch = 64;
  std::uint64_t seed = 0;
};

// Small two-scale conv encoder-decoder predicting the noise component of x^t.
// 16x16 path: conv(1->b) -> conv(b->b) [skip] -> pool -> +t-bias ->
// conv(b->2b) -> +t-bias -> conv(2b->2b) -> upsample -> concat skip ->
// conv(3b->b) -> conv(b->1). Each conv except the last is followed by
// group-norm and SiLU. Timestep enters as per-sample channel biases computed
// from a sinusoidal embedding passed through a tiny MLP.
class NoisePredictor : public Denoiser {
 public:
  NoisePredictor(int in_channels, int height, int width, std::uint64_t seed,
                 int base = 32, int time_dim = 32);

  // Differentiable forward; ts holds one timestep per sample.
  Tensor forward(const Tensor& x, const std::vector<int>& ts) const;

  // Denoiser interface: value-only prediction with a shared timestep.
  Tensor predict(const Tensor& x, int t) const override;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int param_count() const { return params_.count(); }

  int in_channels() const { return in_channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int base() const { return base_; }
  int time_dim() const { return time_dim_; }

  // Fresh model with identical architecture and copied parameter values.
  NoisePredictor clone() const;

  // [B, dim] sinusoidal embedding of the raw timestep values.
  static Tensor time_embedding(const std::vector<int>& ts, int dim);

 private:
  int in_channels_, height_, width_, base_, time_dim_;
  ParamStore params_;
};

// Denoising (epsilon-prediction) training loss: mean squared error between
// M(q_sample(x0, ts, eps), ts) and eps. Differentiable w.r.t. model params.
Tensor loss_dm(const NoisePredictor& m, const Tensor& x0, const std::vector<int>& ts,
               const Tensor& eps, const NoiseSchedule& s);

// Standard denoising training on a clean dataset. Returns per-epoch mean loss.
std::vector<float> train_clean(NoisePredictor& m, const Tensor& images,
                               const TrainConfig& cfg, const NoiseSchedule& s);

// Rows of x selected by index (values only, no gradient graph).
Tensor take(const Tensor& x, const std::vector<int>& idx);

// Random permutation of [0, n) from the given stream.
std::vector<int> shuffled_indices(int n, RandomSource& rng);

}  // namespace dbl
