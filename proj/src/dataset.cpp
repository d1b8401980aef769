#include "dbl/dataset.hpp"

#include <cmath>
#include <stdexcept>

namespace dbl {
namespace {

void draw_square(float* img, int h, int w, RandomSource& r, float v) {
  const int side = 4 + static_cast<int>(r.below(static_cast<std::uint64_t>(std::min(h, w) / 2 - 3)));
  const int r0 = static_cast<int>(r.below(static_cast<std::uint64_t>(h - side + 1)));
  const int c0 = static_cast<int>(r.below(static_cast<std::uint64_t>(w - side + 1)));
  for (int y = r0; y < r0 + side; ++y)
    for (int x = c0; x < c0 + side; ++x) img[y * w + x] = v;
}

void draw_cross(float* img, int h, int w, RandomSource& r, float v) {
  const int size = 6 + static_cast<int>(r.below(static_cast<std::uint64_t>(std::min(h, w) - 7)));
  const int th = 1 + static_cast<int>(r.below(3));
  const int r0 = static_cast<int>(r.below(static_cast<std::uint64_t>(h - size + 1)));
  const int c0 = static_cast<int>(r.below(static_cast<std::uint64_t>(w - size + 1)));
  const int mid_r = r0 + (size - th) / 2;
  const int mid_c = c0 + (size - th) / 2;
  for (int y = mid_r; y < mid_r + th; ++y)
    for (int x = c0; x < c0 + size; ++x) img[y * w + x] = v;
  for (int y = r0; y < r0 + size; ++y)
    for (int x = mid_c; x < mid_c + th; ++x) img[y * w + x] = v;
}

void draw_stripes(float* img, int h, int w, RandomSource& r, float v) {
  const int wd = 1 + static_cast<int>(r.below(3));
  const bool vertical = r.below(2) == 0;
  const int phase = static_cast<int>(r.below(static_cast<std::uint64_t>(2 * wd)));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int c = vertical ? x : y;
      if (((c + phase) / wd) % 2 == 0) img[y * w + x] = v;
    }
}

void draw_disc(float* img, int h, int w, RandomSource& r, float v) {
  const int rad = 2 + static_cast<int>(r.below(static_cast<std::uint64_t>(std::min(h, w) / 4)));
  const int cy = rad + static_cast<int>(r.below(static_cast<std::uint64_t>(h - 2 * rad)));
  const int cx = rad + static_cast<int>(r.below(static_cast<std::uint64_t>(w - 2 * rad)));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad) img[y * w + x] = v;
}

}  // namespace

int glyph_mode(int i) { return i % 4; }

Tensor make_glyphs(int n, int h, int w, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("make_glyphs: n must be >= 0");
  if (h < 12 || w < 12) throw std::invalid_argument("make_glyphs: images must be >= 12x12");
  RandomSource root(seed, "glyphs");
  std::vector<float> data(static_cast<size_t>(n) * h * w, -1.f);
  for (int i = 0; i < n; ++i) {
    auto r = root.stream("image", static_cast<std::uint64_t>(i));
    float* img = data.data() + static_cast<size_t>(i) * h * w;
    const float v = r.uniform(0.25f, 1.f);
    switch (glyph_mode(i)) {
      case 0: draw_square(img, h, w, r, v); break;
      case 1: draw_cross(img, h, w, r, v); break;
      case 2: draw_stripes(img, h, w, r, v); break;
      default: draw_disc(img, h, w, r, v); break;
    }
  }
  return Tensor::from(std::move(data), {n, 1, h, w});
}

Tensor make_patch_trigger(int h, int w, int side) {
  if (side < 1 || side + 1 > h || side + 1 > w)
    throw std::invalid_argument("make_patch_trigger: side must fit with a 1-pixel margin");
  std::vector<float> data(static_cast<size_t>(h) * w, 0.f);
  for (int y = h - 1 - side; y < h - 1; ++y)
    for (int x = w - 1 - side; x < w - 1; ++x) data[static_cast<size_t>(y) * w + x] = 1.f;
  return Tensor::from(std::move(data), {1, h, w});
}

Tensor make_blend_trigger(int h, int w) {
  std::vector<float> data(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = 6.283185307179586 * x / w;
      const double v = 6.283185307179586 * y / h;
      data[static_cast<size_t>(y) * w + x] =
          static_cast<float>(0.9 * std::sin(2.0 * u + 0.7 * std::cos(v)) * std::cos(v + 0.3));
    }
  return Tensor::from(std::move(data), {1, h, w});
}

Tensor make_target_emblem(int h, int w) {
  if (h < 8 || w < 8) throw std::invalid_argument("make_target_emblem: image must be >= 8x8");
  std::vector<float> data(static_cast<size_t>(h) * w, -1.f);
  const int th = std::max(2, h / 4);          // bar thickness
  const int m = std::max(1, h / 8);           // margin around the cross
  const int r0 = (h - th) / 2, c0 = (w - th) / 2;
  for (int y = r0; y < r0 + th; ++y)
    for (int x = m; x < w - m; ++x) data[static_cast<size_t>(y) * w + x] = 1.f;
  for (int y = m; y < h - m; ++y)
    for (int x = c0; x < c0 + th; ++x) data[static_cast<size_t>(y) * w + x] = 1.f;
  return Tensor::from(std::move(data), {1, h, w});
}

}  // namespace dbl
