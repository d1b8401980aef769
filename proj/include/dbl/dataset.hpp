#pragma once

#include <cstdint>

#include "dbl/rng.hpp"
#include "dbl/tensor.hpp"

namespace dbl {

// n glyph images [n,1,h,w] in [-1,1]: filled squares, crosses, stripe
// patterns, and discs in equal rotation, each with randomized position,
// scale, and intensity. Deterministic under seed; image i depends only on
// (seed, i) so prefixes agree across different n.
Tensor make_glyphs(int n, int h, int w, std::uint64_t seed);

// Glyph family index (0=square, 1=cross, 2=stripes, 3=disc) of image i.
int glyph_mode(int i);

// Additive patch trigger [1,h,w]: +1 inside a side x side square near the
// bottom-right corner (one-pixel margin), 0 elsewhere.
Tensor make_patch_trigger(int h, int w, int side);

// Full-frame smooth blend trigger [1,h,w], values in [-1,1], deterministic.
Tensor make_blend_trigger(int h, int w);

// Fixed target image [1,h,w]: bright cross emblem on dark ground.
Tensor make_target_emblem(int h, int w);

}  // namespace dbl
