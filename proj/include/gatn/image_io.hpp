#pragma once

#include <string>

#include "gatn/tensor.hpp"

namespace gatn {

// Binary PPM (P6), 8-bit. Values are scaled by 255 and rounded on write,
// divided by 255 on read.
void write_ppm(const Tensor4& image, const std::string& path); // (1,3,h,w)
Tensor4 read_ppm(const std::string& path);

// Binary PGM (P5), 8-bit, from a single-channel map already in [0,1].
void write_pgm(const Tensor4& gray, const std::string& path); // (1,1,h,w)

// Min-max rescale of a single-channel map to [0,1]; constant maps go to 0.
Tensor4 normalize_minmax(const Tensor4& map);

} // namespace gatn
