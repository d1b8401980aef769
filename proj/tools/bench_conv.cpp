// Quick throughput check for the 3x3 conv kernels at the shapes the
// denoiser actually uses. Prints GFLOP/s for forward and forward+backward.
#include <chrono>
#include <cstdio>

#include "dbl/rng.hpp"
#include "dbl/tensor.hpp"

using namespace dbl;
using clk = std::chrono::steady_clock;

static double secs(clk::time_point a, clk::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

static void bench(int b, int ci, int co, int h, int w, int iters) {
  RandomSource r(1, "bench");
  Tensor x = Tensor::uniform({b, ci, h, w}, r, -1, 1);
  Tensor wt = Tensor::uniform({co, ci, 3, 3}, r, -0.3f, 0.3f);
  Tensor bias = Tensor::zeros({co});
  const double flops = 2.0 * b * co * h * w * ci * 9;

  auto t0 = clk::now();
  float sink = 0;
  for (int i = 0; i < iters; ++i) {
    Tensor y = conv2d(x, wt, bias);
    sink += y.at(0);
  }
  auto t1 = clk::now();
  const double fwd = flops * iters / secs(t0, t1) / 1e9;

  auto bwd_rate = [&](bool gx, bool gw, double units) {
    Tensor xg = x.clone().set_requires_grad(gx);
    Tensor wg = wt.clone().set_requires_grad(gw);
    const int n = iters / 4 + 1;
    auto t2 = clk::now();
    for (int i = 0; i < n; ++i) {
      Tensor y = sum(conv2d(xg, wg, bias));
      backward(y);
      sink += y.value();
    }
    auto t3 = clk::now();
    return units * flops * n / secs(t2, t3) / 1e9;
  };
  const double fb = bwd_rate(true, true, 3.0);
  const double fdx = bwd_rate(true, false, 2.0);
  const double fdw = bwd_rate(false, true, 2.0);

  std::printf(
      "B=%d %3dx%3d ch %2dx%-2d  fwd %7.2f   f+bwd %7.2f   f+dx %7.2f   f+dw %7.2f GF/s (sink "
      "%g)\n",
      b, h, w, ci, co, fwd, fb, fdx, fdw, sink);
}

int main() {
  bench(64, 32, 32, 16, 16, 200);
  bench(64, 32, 64, 8, 8, 400);
  bench(64, 64, 64, 8, 8, 200);
  bench(64, 96, 32, 16, 16, 60);
  bench(16, 32, 32, 16, 16, 400);
  bench(1, 32, 32, 16, 16, 2000);
  return 0;
}
