#pragma once

#include <iosfwd>
#include <string>

#include "dkn/tensor.hpp"

namespace dkn::io {

// Binary netpbm (P5 grayscale 8/16-bit, P6 color 8-bit) and PFM (Pf/PF,
// 32-bit float, endianness from the sign of the header scale). PGM/PPM
// samples are normalized to [0, 1] by maxval; PFM floats pass through.
Tensor read_image(const std::string& path);
Tensor read_image(std::istream& in, const std::string& context = "<stream>");

// Format from the extension: .pgm writes 16-bit grayscale (the lossless
// default for depth), .ppm 8-bit color, .pfm raw float (little-endian).
void write_image(const Tensor& image, const std::string& path);

void write_pgm16(const Tensor& image, std::ostream& out);
void write_pgm8(const Tensor& image, std::ostream& out);
void write_ppm(const Tensor& image, std::ostream& out);
void write_pfm(const Tensor& image, std::ostream& out);

}  // namespace dkn::io
