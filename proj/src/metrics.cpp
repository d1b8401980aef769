#include "dbl/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "dbl/rng.hpp"

namespace dbl {
namespace {

constexpr int kWin = 7;
constexpr int kFeatures = 64;
constexpr float kC1 = (0.01f * 2.f) * (0.01f * 2.f);
constexpr float kC2 = (0.03f * 2.f) * (0.03f * 2.f);

void require_batch_vs_image(const Tensor& images, const Tensor& target, const char* who) {
  if (images.rank() != 4 || target.rank() != 3)
    throw std::invalid_argument(std::string(who) + ": need [B,C,H,W] images and [C,H,W] target");
  for (int i = 0; i < 3; ++i)
    if (images.dim(i + 1) != target.dim(i))
      throw std::invalid_argument(std::string(who) + ": image/target shape mismatch");
}

double ssim_plane(const float* a, const float* b, int h, int w) {
  double total = 0.0;
  int windows = 0;
  for (int y = 0; y + kWin <= h; ++y)
    for (int x = 0; x + kWin <= w; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          const double va = a[(y + dy) * w + x + dx];
          const double vb = b[(y + dy) * w + x + dx];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double n = kWin * kWin;
      const double ma = sa / n, mb = sb / n;
      const double va = saa / n - ma * ma;
      const double vb = sbb / n - mb * mb;
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      ++windows;
    }
  return total / windows;
}

// Fixed projection matrix for a given input dimensionality; rows ~ N(0, 1/D).
const std::vector<float>& projection(int d) {
  static std::vector<float> cache;
  static int cached_d = -1;
  if (cached_d != d) {
    RandomSource rng(271828, "fid-projection");
    cache.assign(static_cast<size_t>(kFeatures) * d, 0.f);
    const float scale = 1.f / std::sqrt(static_cast<float>(d));
    for (auto& v : cache) v = rng.normal() * scale;
    cached_d = d;
  }
  return cache;
}

}  // namespace

float asr(const Tensor& images, const Tensor& target, float mse_threshold) {
  require_batch_vs_image(images, target, "asr");
  if (images.dim(0) < 1) throw std::invalid_argument("asr: empty batch");
  if (!(mse_threshold > 0.f)) throw std::invalid_argument("asr: threshold must be positive");
  const int b = images.dim(0);
  const int stride = static_cast<int>(target.numel());
  int hits = 0;
  for (int s = 0; s < b; ++s) {
    const float* x = images.ptr() + static_cast<size_t>(s) * stride;
    double acc = 0.0;
    for (int i = 0; i < stride; ++i) {
      const double d = x[i] - target.at(i);
      acc += d * d;
    }
    if (acc / stride < mse_threshold) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(b);
}

float ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("ssim: shape mismatch");
  if (a.rank() < 2) throw std::invalid_argument("ssim: need at least [H,W]");
  const int w = a.dim(a.rank() - 1);
  const int h = a.dim(a.rank() - 2);
  if (h < kWin || w < kWin) throw std::invalid_argument("ssim: image smaller than the 7x7 window");
  const int planes = static_cast<int>(a.numel()) / (h * w);
  double total = 0.0;
  for (int p = 0; p < planes; ++p)
    total += ssim_plane(a.ptr() + static_cast<size_t>(p) * h * w,
                        b.ptr() + static_cast<size_t>(p) * h * w, h, w);
  return static_cast<float>(total / planes);
}

float mean_ssim(const Tensor& images, const Tensor& target) {
  require_batch_vs_image(images, target, "mean_ssim");
  if (images.dim(0) < 1) throw std::invalid_argument("mean_ssim: empty batch");
  const int b = images.dim(0);
  const size_t stride = static_cast<size_t>(target.numel());
  double total = 0.0;
  for (int s = 0; s < b; ++s) {
    std::vector<float> img(images.ptr() + s * stride, images.ptr() + (s + 1) * stride);
    total += ssim(Tensor::from(std::move(img), target.shape()), target);
  }
  return static_cast<float>(total / b);
}

MomentFit fit_features(const Tensor& batch) {
  if (batch.rank() < 2) throw std::invalid_argument("fit_features: need a batch");
  const int n = batch.dim(0);
  if (n < 2) throw std::invalid_argument("fit_features: need >= 2 samples");
  const int d = static_cast<int>(batch.numel()) / n;
  const std::vector<float>& p = projection(d);
  std::vector<std::vector<double>> f(static_cast<size_t>(n), std::vector<double>(kFeatures));
  for (int s = 0; s < n; ++s) {
    const float* x = batch.ptr() + static_cast<size_t>(s) * d;
    for (int k = 0; k < kFeatures; ++k) {
      const float* row = p.data() + static_cast<size_t>(k) * d;
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += static_cast<double>(row[i]) * x[i];
      f[static_cast<size_t>(s)][static_cast<size_t>(k)] = acc;
    }
  }
  MomentFit fit;
  fit.mu.resize(kFeatures);
  fit.var.resize(kFeatures);
  for (int k = 0; k < kFeatures; ++k) {
    double m = 0.0;
    for (int s = 0; s < n; ++s) m += f[static_cast<size_t>(s)][static_cast<size_t>(k)];
    m /= n;
    double v = 0.0;
    for (int s = 0; s < n; ++s) {
      const double dvi = f[static_cast<size_t>(s)][static_cast<size_t>(k)] - m;
      v += dvi * dvi;
    }
    fit.mu[static_cast<size_t>(k)] = static_cast<float>(m);
    fit.var[static_cast<size_t>(k)] = static_cast<float>(v / n);
  }
  return fit;
}

float frechet_diag(const MomentFit& a, const MomentFit& b) {
  if (a.mu.size() != b.mu.size() || a.var.size() != b.var.size())
    throw std::invalid_argument("frechet_diag: dimension mismatch");
  double d2 = 0.0;
  for (size_t i = 0; i < a.mu.size(); ++i) {
    const double dm = static_cast<double>(a.mu[i]) - b.mu[i];
    d2 += dm * dm;
    d2 += a.var[i] + b.var[i] - 2.0 * std::sqrt(static_cast<double>(a.var[i]) * b.var[i]);
  }
  return static_cast<float>(d2);
}

float fid_proxy(const Tensor& set_a, const Tensor& set_b) {
  if (set_a.rank() < 2 || set_b.rank() < 2)
    throw std::invalid_argument("fid_proxy: need sample batches");
  if (set_a.dim(0) < 64 || set_b.dim(0) < 64)
    throw std::invalid_argument("fid_proxy: both sets need >= 64 samples");
  if (set_a.numel() / set_a.dim(0) != set_b.numel() / set_b.dim(0))
    throw std::invalid_argument("fid_proxy: sample shapes differ");
  return frechet_diag(fit_features(set_a), fit_features(set_b));
}

DeltaReport delta_report(const EvalReport& before, const EvalReport& after) {
  DeltaReport d;
  auto rel = [](float b, float a, float& out, bool& absolute) {
    if (b == 0.f) {
      out = a - b;
      absolute = true;
    } else {
      out = (a - b) / b;
      absolute = false;
    }
  };
  rel(before.asr, after.asr, d.dasr, d.absolute_asr);
  rel(before.ssim_to_target, after.ssim_to_target, d.dssim, d.absolute_ssim);
  rel(before.fid_proxy, after.fid_proxy, d.dfid, d.absolute_fid);
  return d;
}

}  // namespace dbl
