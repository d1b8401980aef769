#pragma once

#include <string>

#include "dbl/tensor.hpp"

namespace dbl {

// Writes [C,H,W] (or [1,C,H,W]) in [-1,1] as binary PGM (C=1) or PPM (C=3),
// mapping v -> round((v+1)*127.5) clamped to [0,255].
void export_image(const Tensor& x, const std::string& path);

// Reads a binary PGM/PPM written by export_image back to [C,H,W] in [-1,1]
// via v = byte/127.5 - 1.
Tensor import_image(const std::string& path);

// Tiles a batch [B,C,H,W] into one grid image [C, rows*H, cols*W]
// (row-major, unused cells filled with -1) for quick visual inspection.
Tensor tile_grid(const Tensor& batch, int cols);

}  // namespace dbl
