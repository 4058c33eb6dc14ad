#pragma once

#include <string>

#include "magic/tensor.hpp"

namespace magic {

struct ImageReadOptions {
  /// Apply the sRGB transfer inverse so samples land in linear light.
  bool srgb_decode = false;
};

/// Reads 8/16-bit PNG (gray, RGB, RGBA; alpha dropped) or binary PPM/PGM
/// into a 1 x C x H x W tensor in [0, 1].
Tensor<float> read_image(const std::string& path, const ImageReadOptions& opt = {});

/// Writes 1 or 3 channels as 16-bit PNG (".png") or 16-bit PPM/PGM
/// (".ppm"/".pgm"). Samples are clamped to [0, 1]. The write is atomic.
void write_image(const std::string& path, const Tensor<float>& image);

/// Encoded bytes of write_image, for comparisons without touching disk.
std::string encode_png16(const Tensor<float>& image);

}  // namespace magic
