#include <immintrin.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dbl/tensor.hpp"

// Structured ops on [B,C,H,W] tensors: 3x3 convolution, pooling, nearest
// upsample, channel concat, bias adds, group norm. Single-threaded; every
// output element is produced by one fixed-order reduction, so results are
// bit-identical across runs.

namespace dbl {

namespace {

[[noreturn]] void shape_error4(const char* op, const Shape& s) {
  throw std::invalid_argument(std::string(op) + ": expected [B,C,H,W] tensor, got " +
                              shape_str(s));
}

void require_rank4(const char* op, const Tensor& t) {
  if (t.rank() != 4) shape_error4(op, t.shape());
}

using Parents = std::vector<std::shared_ptr<TensorImpl>>;

Tensor make_op4(Shape shape, std::vector<float> data, Parents parents,
                std::function<void(const TensorImpl&)> bw) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool need = false;
  for (const auto& p : parents) need = need || p->requires_grad;
  if (need) {
    impl->requires_grad = true;
    impl->node = std::make_unique<Node>();
    impl->node->parents = std::move(parents);
    impl->node->backward = std::move(bw);
  }
  return Tensor::wrap(impl);
}

// Copy one sample's channels into a zero-padded [C][(H+2)(W+2)] buffer.
void pad_sample(const float* __restrict x, int c, int h, int w, float* __restrict xp) {
  const int pw = w + 2;
  std::memset(xp, 0, sizeof(float) * static_cast<size_t>(c) * (h + 2) * pw);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      std::memcpy(xp + (static_cast<size_t>(ci) * (h + 2) + y + 1) * pw + 1,
                  x + (static_cast<size_t>(ci) * h + y) * w, sizeof(float) * w);
}

// Four output rows per block, each with its own accumulator file, so the
// FMA chains stay independent and the compiler keeps them in registers.
// `accumulate` seeds the accumulators from dst (used for gradient writes).
template <int W>
__attribute__((noinline)) void conv_rows_fixed(const float* __restrict xp,
                                               const float* __restrict wk, float bias_v,
                                               float* __restrict out, int ci_count, int h,
                                               bool accumulate) {
  const int pw = W + 2;
  int y = 0;
  for (; y + 4 <= h; y += 4) {
    float a0[W], a1[W], a2[W], a3[W];
    if (accumulate) {
      std::memcpy(a0, out + (y + 0) * W, sizeof(a0));
      std::memcpy(a1, out + (y + 1) * W, sizeof(a1));
      std::memcpy(a2, out + (y + 2) * W, sizeof(a2));
      std::memcpy(a3, out + (y + 3) * W, sizeof(a3));
    } else {
      for (int x = 0; x < W; ++x) a0[x] = a1[x] = a2[x] = a3[x] = bias_v;
    }
    for (int ci = 0; ci < ci_count; ++ci) {
      const float* chan = xp + static_cast<size_t>(ci) * (h + 2) * pw;
      const float* wr = wk + ci * 9;
#pragma GCC unroll 3
      for (int ky = 0; ky < 3; ++ky) {
        const float* r0 = chan + (y + 0 + ky) * pw;
        const float* r1 = chan + (y + 1 + ky) * pw;
        const float* r2 = chan + (y + 2 + ky) * pw;
        const float* r3 = chan + (y + 3 + ky) * pw;
#pragma GCC unroll 3
        for (int kx = 0; kx < 3; ++kx) {
          const float wv = wr[ky * 3 + kx];
          for (int x = 0; x < W; ++x) a0[x] += wv * r0[x + kx];
          for (int x = 0; x < W; ++x) a1[x] += wv * r1[x + kx];
          for (int x = 0; x < W; ++x) a2[x] += wv * r2[x + kx];
          for (int x = 0; x < W; ++x) a3[x] += wv * r3[x + kx];
        }
      }
    }
    std::memcpy(out + (y + 0) * W, a0, sizeof(a0));
    std::memcpy(out + (y + 1) * W, a1, sizeof(a1));
    std::memcpy(out + (y + 2) * W, a2, sizeof(a2));
    std::memcpy(out + (y + 3) * W, a3, sizeof(a3));
  }
  for (; y < h; ++y) {
    float acc[W];
    if (accumulate)
      std::memcpy(acc, out + y * W, sizeof(acc));
    else
      for (int x = 0; x < W; ++x) acc[x] = bias_v;
    for (int ci = 0; ci < ci_count; ++ci) {
      const float* chan = xp + static_cast<size_t>(ci) * (h + 2) * pw;
      const float* wr = wk + ci * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const float* row = chan + (y + ky) * pw;
        for (int kx = 0; kx < 3; ++kx) {
          const float wv = wr[ky * 3 + kx];
          for (int x = 0; x < W; ++x) acc[x] += wv * row[x + kx];
        }
      }
    }
    std::memcpy(out + y * W, acc, sizeof(acc));
  }
}

void conv_rows_any(const float* __restrict xp, const float* __restrict wk, float bias_v,
                   float* __restrict out, int ci_count, int h, int w, bool accumulate) {
  const int pw = w + 2;
  for (int y = 0; y < h; ++y) {
    float* orow = out + static_cast<size_t>(y) * w;
    if (!accumulate)
      for (int x = 0; x < w; ++x) orow[x] = bias_v;
    for (int ci = 0; ci < ci_count; ++ci) {
      const float* chan = xp + static_cast<size_t>(ci) * (h + 2) * pw;
      const float* wr = wk + ci * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const float* row = chan + (y + ky) * pw;
        for (int kx = 0; kx < 3; ++kx) {
          const float wv = wr[ky * 3 + kx];
          const float* ir = row + kx;
          for (int x = 0; x < w; ++x) orow[x] += wv * ir[x];
        }
      }
    }
  }
}

// One output plane [h,w] from padded input planes. Dispatches to the
// register-blocked kernels for the widths the denoiser uses.
void conv_plane(const float* xp, const float* wk, float bias_v, float* out, int ci_count, int h,
                int w, bool accumulate) {
  if (w == 16)
    conv_rows_fixed<16>(xp, wk, bias_v, out, ci_count, h, accumulate);
  else if (w == 8)
    conv_rows_fixed<8>(xp, wk, bias_v, out, ci_count, h, accumulate);
  else
    conv_rows_any(xp, wk, bias_v, out, ci_count, h, w, accumulate);
}

// dW[oc,ci,ky,kx] += sum_{y,x} gy[y,x] * xp[y+ky, x+kx]. The nine tap
// accumulators are kept as explicit vector registers; GCC's auto-vectorizer
// scalarizes this reduction badly, so the two widths the denoiser uses get
// hand-written kernels.
#if defined(__AVX512F__)
__attribute__((noinline)) void conv_dw_16(const float* __restrict xp, const float* __restrict gy,
                                          float* __restrict dw, int h) {
  const int pw = 18;
  __m512 a0 = _mm512_setzero_ps(), a1 = a0, a2 = a0, a3 = a0, a4 = a0, a5 = a0, a6 = a0,
         a7 = a0, a8 = a0;
  for (int y = 0; y < h; ++y) {
    const __m512 g = _mm512_loadu_ps(gy + y * 16);
    const float* r0 = xp + (y + 0) * pw;
    const float* r1 = xp + (y + 1) * pw;
    const float* r2 = xp + (y + 2) * pw;
    a0 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r0 + 0), a0);
    a1 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r0 + 1), a1);
    a2 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r0 + 2), a2);
    a3 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r1 + 0), a3);
    a4 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r1 + 1), a4);
    a5 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r1 + 2), a5);
    a6 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r2 + 0), a6);
    a7 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r2 + 1), a7);
    a8 = _mm512_fmadd_ps(g, _mm512_loadu_ps(r2 + 2), a8);
  }
  dw[0] += _mm512_reduce_add_ps(a0);
  dw[1] += _mm512_reduce_add_ps(a1);
  dw[2] += _mm512_reduce_add_ps(a2);
  dw[3] += _mm512_reduce_add_ps(a3);
  dw[4] += _mm512_reduce_add_ps(a4);
  dw[5] += _mm512_reduce_add_ps(a5);
  dw[6] += _mm512_reduce_add_ps(a6);
  dw[7] += _mm512_reduce_add_ps(a7);
  dw[8] += _mm512_reduce_add_ps(a8);
}
#endif

#if defined(__AVX2__) && defined(__FMA__)
float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

__attribute__((noinline)) void conv_dw_8(const float* __restrict xp, const float* __restrict gy,
                                         float* __restrict dw, int h) {
  const int pw = 10;
  __m256 a0 = _mm256_setzero_ps(), a1 = a0, a2 = a0, a3 = a0, a4 = a0, a5 = a0, a6 = a0,
         a7 = a0, a8 = a0;
  for (int y = 0; y < h; ++y) {
    const __m256 g = _mm256_loadu_ps(gy + y * 8);
    const float* r0 = xp + (y + 0) * pw;
    const float* r1 = xp + (y + 1) * pw;
    const float* r2 = xp + (y + 2) * pw;
    a0 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r0 + 0), a0);
    a1 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r0 + 1), a1);
    a2 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r0 + 2), a2);
    a3 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r1 + 0), a3);
    a4 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r1 + 1), a4);
    a5 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r1 + 2), a5);
    a6 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r2 + 0), a6);
    a7 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r2 + 1), a7);
    a8 = _mm256_fmadd_ps(g, _mm256_loadu_ps(r2 + 2), a8);
  }
  dw[0] += hsum8(a0);
  dw[1] += hsum8(a1);
  dw[2] += hsum8(a2);
  dw[3] += hsum8(a3);
  dw[4] += hsum8(a4);
  dw[5] += hsum8(a5);
  dw[6] += hsum8(a6);
  dw[7] += hsum8(a7);
  dw[8] += hsum8(a8);
}
#endif

void conv_dw_any(const float* __restrict xp, const float* __restrict gy, float* __restrict dw,
                 int h, int w) {
  const int pw = w + 2;
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) {
      float s = 0.f;
      for (int y = 0; y < h; ++y) {
        const float* xr = xp + (y + ky) * pw + kx;
        const float* g = gy + y * w;
        for (int x = 0; x < w; ++x) s += g[x] * xr[x];
      }
      dw[ky * 3 + kx] += s;
    }
}

void conv_dw_plane(const float* xp, const float* gy, float* dw, int h, int w) {
#if defined(__AVX512F__)
  if (w == 16) {
    conv_dw_16(xp, gy, dw, h);
    return;
  }
#endif
#if defined(__AVX2__) && defined(__FMA__)
  if (w == 8) {
    conv_dw_8(xp, gy, dw, h);
    return;
  }
#endif
  conv_dw_any(xp, gy, dw, h, w);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank4("conv2d", x);
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw std::invalid_argument("conv2d: kernel must be [Co,Ci,3,3], got " + shape_str(w.shape()));
  const int b = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int co = w.dim(0);
  if (w.dim(1) != ci)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                                " input channels, tensor has " + std::to_string(ci));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != co))
    throw std::invalid_argument("conv2d: bias must be [Co], got " + shape_str(bias.shape()));

  const size_t hw = static_cast<size_t>(h) * ww;
  const size_t pad_len = static_cast<size_t>(ci) * (h + 2) * (ww + 2);
  std::vector<float> xp(pad_len);
  std::vector<float> out(static_cast<size_t>(b) * co * hw);

  const float* px = x.ptr();
  const float* pw_ = w.ptr();
  const float* pb = has_bias ? bias.ptr() : nullptr;
  for (int s = 0; s < b; ++s) {
    pad_sample(px + static_cast<size_t>(s) * ci * hw, ci, h, ww, xp.data());
    for (int oc = 0; oc < co; ++oc)
      conv_plane(xp.data(), pw_ + static_cast<size_t>(oc) * ci * 9, pb ? pb[oc] : 0.f,
                 out.data() + (static_cast<size_t>(s) * co + oc) * hw, ci, h, ww, false);
  }

  auto xi = x.impl();
  auto wi = w.impl();
  Parents parents{xi, wi};
  std::shared_ptr<TensorImpl> bi;
  if (has_bias) {
    bi = bias.impl();
    parents.push_back(bi);
  }
  return make_op4(
      {b, co, h, ww}, std::move(out), std::move(parents), [=](const TensorImpl& o) {
        const float* g = o.grad.data();
        const bool need_dx = xi->requires_grad;
        const bool need_dw = wi->requires_grad;
        if (need_dx) xi->ensure_grad();
        if (need_dw) wi->ensure_grad();
        if (bi && bi->requires_grad) {
          bi->ensure_grad();
          for (int oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (int s = 0; s < b; ++s) {
              const float* gr = g + (static_cast<size_t>(s) * co + oc) * hw;
              for (size_t i = 0; i < hw; ++i) acc += gr[i];
            }
            bi->grad[static_cast<size_t>(oc)] += static_cast<float>(acc);
          }
        }
        if (!need_dx && !need_dw) return;
        // dX is a conv of the padded upstream gradient with the flipped,
        // channel-transposed kernel; dW reduces gy against the padded input.
        std::vector<float> wt;
        if (need_dx) {
          wt.resize(static_cast<size_t>(ci) * co * 9);
          for (int oc = 0; oc < co; ++oc)
            for (int c = 0; c < ci; ++c)
              for (int k = 0; k < 9; ++k)
                wt[(static_cast<size_t>(c) * co + oc) * 9 + k] =
                    wi->data[(static_cast<size_t>(oc) * ci + c) * 9 + 8 - k];
        }
        std::vector<float> gp(static_cast<size_t>(co) * (h + 2) * (ww + 2));
        std::vector<float> pad_buf(need_dw ? pad_len : 0);
        for (int s = 0; s < b; ++s) {
          const float* gs = g + static_cast<size_t>(s) * co * hw;
          if (need_dx) {
            pad_sample(gs, co, h, ww, gp.data());
            for (int c = 0; c < ci; ++c)
              conv_plane(gp.data(), wt.data() + static_cast<size_t>(c) * co * 9, 0.f,
                         xi->grad.data() + (static_cast<size_t>(s) * ci + c) * hw, co, h, ww,
                         true);
          }
          if (need_dw) {
            pad_sample(xi->data.data() + static_cast<size_t>(s) * ci * hw, ci, h, ww,
                       pad_buf.data());
            for (int oc = 0; oc < co; ++oc)
              for (int c = 0; c < ci; ++c)
                conv_dw_plane(pad_buf.data() + static_cast<size_t>(c) * (h + 2) * (ww + 2),
                              gs + static_cast<size_t>(oc) * hw,
                              wi->grad.data() + (static_cast<size_t>(oc) * ci + c) * 9, h, ww);
          }
        }
      });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank4("avg_pool2", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2)
    throw std::invalid_argument("avg_pool2: spatial dims must be even, got " +
                                shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  std::vector<float> out(static_cast<size_t>(b) * c * oh * ow);
  const float* px = x.ptr();
  for (int s = 0; s < b * c; ++s) {
    const float* in = px + static_cast<size_t>(s) * h * w;
    float* dst = out.data() + static_cast<size_t>(s) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        dst[y * ow + xx] = 0.25f * (in[(2 * y) * w + 2 * xx] + in[(2 * y) * w + 2 * xx + 1] +
                                    in[(2 * y + 1) * w + 2 * xx] + in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  auto xi = x.impl();
  return make_op4({b, c, oh, ow}, std::move(out), {xi}, [=](const TensorImpl& o) {
    xi->ensure_grad();
    const float* g = o.grad.data();
    float* gx = xi->grad.data();
    for (int s = 0; s < b * c; ++s) {
      const float* gr = g + static_cast<size_t>(s) * oh * ow;
      float* dst = gx + static_cast<size_t>(s) * h * w;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const float v = 0.25f * gr[y * ow + xx];
          dst[(2 * y) * w + 2 * xx] += v;
          dst[(2 * y) * w + 2 * xx + 1] += v;
          dst[(2 * y + 1) * w + 2 * xx] += v;
          dst[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4("global_avg_pool", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<float> out(static_cast<size_t>(b) * c);
  const float* px = x.ptr();
  for (int s = 0; s < b * c; ++s) {
    double acc = 0.0;
    const float* in = px + static_cast<size_t>(s) * hw;
    for (size_t i = 0; i < hw; ++i) acc += in[i];
    out[static_cast<size_t>(s)] = static_cast<float>(acc / static_cast<double>(hw));
  }
  auto xi = x.impl();
  return make_op4({b, c}, std::move(out), {xi}, [=](const TensorImpl& o) {
    xi->ensure_grad();
    const float inv = 1.f / static_cast<float>(hw);
    const float* g = o.grad.data();
    float* gx = xi->grad.data();
    for (int s = 0; s < b * c; ++s) {
      const float v = g[s] * inv;
      float* dst = gx + static_cast<size_t>(s) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] += v;
    }
  });
}

Tensor global_max_pool(const Tensor& x) {
  require_rank4("global_max_pool", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<float> out(static_cast<size_t>(b) * c);
  std::vector<size_t> arg(static_cast<size_t>(b) * c);
  const float* px = x.ptr();
  for (int s = 0; s < b * c; ++s) {
    const float* in = px + static_cast<size_t>(s) * hw;
    size_t best = 0;
    for (size_t i = 1; i < hw; ++i)
      if (in[i] > in[best]) best = i;
    out[static_cast<size_t>(s)] = in[best];
    arg[static_cast<size_t>(s)] = best;
  }
  auto xi = x.impl();
  return make_op4({b, c}, std::move(out), {xi},
                  [=, arg = std::move(arg)](const TensorImpl& o) {
                    xi->ensure_grad();
                    const float* g = o.grad.data();
                    float* gx = xi->grad.data();
                    for (int s = 0; s < b * c; ++s)
                      gx[static_cast<size_t>(s) * hw + arg[static_cast<size_t>(s)]] += g[s];
                  });
}

Tensor upsample_nearest2(const Tensor& x) {
  require_rank4("upsample_nearest2", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * 2, ow = w * 2;
  std::vector<float> out(static_cast<size_t>(b) * c * oh * ow);
  const float* px = x.ptr();
  for (int s = 0; s < b * c; ++s) {
    const float* in = px + static_cast<size_t>(s) * h * w;
    float* dst = out.data() + static_cast<size_t>(s) * oh * ow;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const float v = in[y * w + xx];
        dst[(2 * y) * ow + 2 * xx] = v;
        dst[(2 * y) * ow + 2 * xx + 1] = v;
        dst[(2 * y + 1) * ow + 2 * xx] = v;
        dst[(2 * y + 1) * ow + 2 * xx + 1] = v;
      }
  }
  auto xi = x.impl();
  return make_op4({b, c, oh, ow}, std::move(out), {xi}, [=](const TensorImpl& o) {
    xi->ensure_grad();
    const float* g = o.grad.data();
    float* gx = xi->grad.data();
    for (int s = 0; s < b * c; ++s) {
      const float* gr = g + static_cast<size_t>(s) * oh * ow;
      float* dst = gx + static_cast<size_t>(s) * h * w;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          dst[y * w + xx] += gr[(2 * y) * ow + 2 * xx] + gr[(2 * y) * ow + 2 * xx + 1] +
                             gr[(2 * y + 1) * ow + 2 * xx] + gr[(2 * y + 1) * ow + 2 * xx + 1];
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4("concat_channels", a);
  require_rank4("concat_channels", b);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<float> out(static_cast<size_t>(n) * (ca + cb) * hw);
  for (int s = 0; s < n; ++s) {
    std::memcpy(out.data() + static_cast<size_t>(s) * (ca + cb) * hw,
                a.ptr() + static_cast<size_t>(s) * ca * hw, sizeof(float) * ca * hw);
    std::memcpy(out.data() + (static_cast<size_t>(s) * (ca + cb) + ca) * hw,
                b.ptr() + static_cast<size_t>(s) * cb * hw, sizeof(float) * cb * hw);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op4({n, ca + cb, h, w}, std::move(out), {ai, bi}, [=](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (int s = 0; s < n; ++s) {
        const float* src = g + static_cast<size_t>(s) * (ca + cb) * hw;
        float* dst = ai->grad.data() + static_cast<size_t>(s) * ca * hw;
        for (size_t i = 0; i < static_cast<size_t>(ca) * hw; ++i) dst[i] += src[i];
      }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int s = 0; s < n; ++s) {
        const float* src = g + (static_cast<size_t>(s) * (ca + cb) + ca) * hw;
        float* dst = bi->grad.data() + static_cast<size_t>(s) * cb * hw;
        for (size_t i = 0; i < static_cast<size_t>(cb) * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank4("add_channel_bias", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool per_sample = bias.rank() == 2;
  if (per_sample) {
    if (bias.dim(0) != b || bias.dim(1) != c)
      throw std::invalid_argument("add_channel_bias: bias " + shape_str(bias.shape()) +
                                  " does not match " + shape_str(x.shape()));
  } else if (bias.rank() != 1 || bias.dim(0) != c) {
    throw std::invalid_argument("add_channel_bias: bias must be [C] or [B,C], got " +
                                shape_str(bias.shape()));
  }
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<float> out(x.data());
  const float* pb = bias.ptr();
  for (int s = 0; s < b; ++s)
    for (int ci = 0; ci < c; ++ci) {
      const float v = per_sample ? pb[s * c + ci] : pb[ci];
      float* dst = out.data() + (static_cast<size_t>(s) * c + ci) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] += v;
    }
  auto xi = x.impl();
  auto bi = bias.impl();
  return make_op4({b, c, h, w}, std::move(out), {xi, bi}, [=](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      float* gx = xi->grad.data();
      for (size_t i = 0; i < o.data.size(); ++i) gx[i] += g[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int s = 0; s < b; ++s)
        for (int ci = 0; ci < c; ++ci) {
          const float* gr = g + (static_cast<size_t>(s) * c + ci) * hw;
          double acc = 0.0;
          for (size_t i = 0; i < hw; ++i) acc += gr[i];
          bi->grad[per_sample ? static_cast<size_t>(s) * c + ci : static_cast<size_t>(ci)] +=
              static_cast<float>(acc);
        }
    }
  });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  require_rank4("scale_channels", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (s.rank() != 2 || s.dim(0) != b || s.dim(1) != c)
    throw std::invalid_argument("scale_channels: scale must be [B,C], got " +
                                shape_str(s.shape()) + " for " + shape_str(x.shape()));
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<float> out(x.data());
  const float* ps = s.ptr();
  for (int si = 0; si < b; ++si)
    for (int ci = 0; ci < c; ++ci) {
      const float v = ps[si * c + ci];
      float* dst = out.data() + (static_cast<size_t>(si) * c + ci) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] *= v;
    }
  auto xi = x.impl();
  auto sc = s.impl();
  return make_op4({b, c, h, w}, std::move(out), {xi, sc}, [=](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      for (int si = 0; si < b; ++si)
        for (int ci = 0; ci < c; ++ci) {
          const float v = sc->data[static_cast<size_t>(si) * c + ci];
          const size_t off = (static_cast<size_t>(si) * c + ci) * hw;
          for (size_t i = 0; i < hw; ++i) xi->grad[off + i] += v * g[off + i];
        }
    }
    if (sc->requires_grad) {
      sc->ensure_grad();
      for (int si = 0; si < b; ++si)
        for (int ci = 0; ci < c; ++ci) {
          const size_t off = (static_cast<size_t>(si) * c + ci) * hw;
          double acc = 0.0;
          for (size_t i = 0; i < hw; ++i) acc += g[off + i] * xi->data[off + i];
          sc->grad[static_cast<size_t>(si) * c + ci] += static_cast<float>(acc);
        }
    }
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw std::invalid_argument("add_row_bias: need [B,C] + [C], got " + shape_str(x.shape()) +
                                " + " + shape_str(bias.shape()));
  const int b = x.dim(0), c = x.dim(1);
  std::vector<float> out(x.data());
  const float* pb = bias.ptr();
  for (int s = 0; s < b; ++s)
    for (int ci = 0; ci < c; ++ci) out[static_cast<size_t>(s) * c + ci] += pb[ci];
  auto xi = x.impl();
  auto bi = bias.impl();
  return make_op4({b, c}, std::move(out), {xi, bi}, [=](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      for (size_t i = 0; i < o.data.size(); ++i) xi->grad[i] += g[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int s = 0; s < b; ++s)
        for (int ci = 0; ci < c; ++ci) bi->grad[static_cast<size_t>(ci)] += g[s * c + ci];
    }
  });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  float eps) {
  require_rank4("group_norm", x);
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (groups < 1 || c % groups)
    throw std::invalid_argument("group_norm: channels " + std::to_string(c) +
                                " not divisible by groups " + std::to_string(groups));
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw std::invalid_argument("group_norm: gamma/beta must be [C]");
  const int cg = c / groups;
  const size_t hw = static_cast<size_t>(h) * w;
  const size_t gn = static_cast<size_t>(cg) * hw;  // elements per group

  std::vector<float> out(x.data().size());
  std::vector<float> means(static_cast<size_t>(b) * groups);
  std::vector<float> invs(static_cast<size_t>(b) * groups);
  const float* px = x.ptr();
  const float* pg = gamma.ptr();
  const float* pbeta = beta.ptr();
  for (int s = 0; s < b; ++s)
    for (int g = 0; g < groups; ++g) {
      const float* base = px + (static_cast<size_t>(s) * c + static_cast<size_t>(g) * cg) * hw;
      double sum = 0.0, sumsq = 0.0;
      for (size_t i = 0; i < gn; ++i) {
        sum += base[i];
        sumsq += static_cast<double>(base[i]) * base[i];
      }
      const double mu = sum / static_cast<double>(gn);
      const double var = sumsq / static_cast<double>(gn) - mu * mu;
      const float inv = static_cast<float>(1.0 / std::sqrt(std::max(var, 0.0) + eps));
      means[static_cast<size_t>(s) * groups + g] = static_cast<float>(mu);
      invs[static_cast<size_t>(s) * groups + g] = inv;
      float* dst = out.data() + (static_cast<size_t>(s) * c + static_cast<size_t>(g) * cg) * hw;
      for (int cc = 0; cc < cg; ++cc) {
        const float gam = pg[g * cg + cc];
        const float bet = pbeta[g * cg + cc];
        for (size_t i = 0; i < hw; ++i) {
          const float xh = (base[cc * hw + i] - static_cast<float>(mu)) * inv;
          dst[cc * hw + i] = gam * xh + bet;
        }
      }
    }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return make_op4(
      {b, c, h, w}, std::move(out), {xi, gi, bi},
      [=, means = std::move(means), invs = std::move(invs)](const TensorImpl& o) {
        const float* g = o.grad.data();
        const float* px2 = xi->data.data();
        if (xi->requires_grad) xi->ensure_grad();
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int s = 0; s < b; ++s)
          for (int gr = 0; gr < groups; ++gr) {
            const size_t off = (static_cast<size_t>(s) * c + static_cast<size_t>(gr) * cg) * hw;
            const float mu = means[static_cast<size_t>(s) * groups + gr];
            const float inv = invs[static_cast<size_t>(s) * groups + gr];
            if (gi->requires_grad || bi->requires_grad) {
              for (int cc = 0; cc < cg; ++cc) {
                double dgam = 0.0, dbet = 0.0;
                const float* xrow = px2 + off + static_cast<size_t>(cc) * hw;
                const float* grow = g + off + static_cast<size_t>(cc) * hw;
                for (size_t i = 0; i < hw; ++i) {
                  dgam += grow[i] * (xrow[i] - mu) * inv;
                  dbet += grow[i];
                }
                if (gi->requires_grad)
                  gi->grad[static_cast<size_t>(gr) * cg + cc] += static_cast<float>(dgam);
                if (bi->requires_grad)
                  bi->grad[static_cast<size_t>(gr) * cg + cc] += static_cast<float>(dbet);
              }
            }
            if (xi->requires_grad) {
              double s1 = 0.0, s2 = 0.0;
              for (int cc = 0; cc < cg; ++cc) {
                const float gam = gi->data[static_cast<size_t>(gr) * cg + cc];
                const float* xrow = px2 + off + static_cast<size_t>(cc) * hw;
                const float* grow = g + off + static_cast<size_t>(cc) * hw;
                for (size_t i = 0; i < hw; ++i) {
                  const float dxh = grow[i] * gam;
                  s1 += dxh;
                  s2 += dxh * (xrow[i] - mu) * inv;
                }
              }
              const float m1 = static_cast<float>(s1 / static_cast<double>(gn));
              const float m2 = static_cast<float>(s2 / static_cast<double>(gn));
              float* gx = xi->grad.data() + off;
              for (int cc = 0; cc < cg; ++cc) {
                const float gam = gi->data[static_cast<size_t>(gr) * cg + cc];
                const float* xrow = px2 + off + static_cast<size_t>(cc) * hw;
                const float* grow = g + off + static_cast<size_t>(cc) * hw;
                for (size_t i = 0; i < hw; ++i) {
                  const float xh = (xrow[i] - mu) * inv;
                  gx[cc * hw + i] += inv * (grow[i] * gam - m1 - xh * m2);
                }
              }
            }
          }
      });
}

}  // namespace dbl
