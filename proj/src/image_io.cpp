#include "dbl/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace dbl {
namespace {

std::uint8_t to_byte(float v) {
  const float b = std::round((v + 1.f) * 127.5f);
  return static_cast<std::uint8_t>(b < 0.f ? 0.f : (b > 255.f ? 255.f : b));
}

int read_pnm_int(std::istream& in) {
  // Skips whitespace and '#' comments, per the PNM grammar.
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = in.get();
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("malformed PNM header");
  return value;
}

}  // namespace

void export_image(const Tensor& x, const std::string& path) {
  Tensor img = x;
  if (img.rank() == 4 && img.dim(0) == 1) {
    std::vector<float> d(img.data());
    img = Tensor::from(std::move(d), {img.dim(1), img.dim(2), img.dim(3)});
  }
  if (img.rank() != 3) throw std::invalid_argument("export_image: need [C,H,W]");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (c != 1 && c != 3)
    throw std::invalid_argument("export_image: only 1 or 3 channels supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_image: cannot open " + path);
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<size_t>(xx) * c + ch] = to_byte(img.at((ch * h + y) * w + xx));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("export_image: write failed for " + path);
}

Tensor import_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("import_image: cannot open " + path);
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw std::runtime_error("import_image: not a binary PGM/PPM file");
  const int c = kind == '5' ? 1 : 3;
  const int w = read_pnm_int(in);
  const int h = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (maxval != 255) throw std::runtime_error("import_image: only maxval 255 supported");
  std::vector<std::uint8_t> bytes(static_cast<size_t>(w) * h * c);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("import_image: truncated payload");
  std::vector<float> data(bytes.size());
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch)
        data[static_cast<size_t>(ch * h + y) * w + xx] =
            bytes[(static_cast<size_t>(y) * w + xx) * c + ch] / 127.5f - 1.f;
  return Tensor::from(std::move(data), {c, h, w});
}

Tensor tile_grid(const Tensor& batch, int cols) {
  if (batch.rank() != 4) throw std::invalid_argument("tile_grid: need [B,C,H,W]");
  if (cols < 1) throw std::invalid_argument("tile_grid: cols must be >= 1");
  const int b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int rows = (b + cols - 1) / cols;
  std::vector<float> out(static_cast<size_t>(c) * rows * h * cols * w, -1.f);
  const int gw = cols * w;
  for (int s = 0; s < b; ++s) {
    const int ty = (s / cols) * h, tx = (s % cols) * w;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out[(static_cast<size_t>(ch) * rows * h + ty + y) * gw + tx + x] =
              batch.at(((s * c + ch) * h + y) * w + x);
  }
  return Tensor::from(std::move(out), {c, rows * h, gw});
}

}  // namespace dbl
