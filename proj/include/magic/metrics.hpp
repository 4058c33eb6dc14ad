#pragma once

#include "magic/tensor.hpp"

namespace magic {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all samples; kPsnrCap for identical images.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over
/// channels, C1 = 0.01^2, C2 = 0.03^2. Images must be at least 11x11.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace magic
