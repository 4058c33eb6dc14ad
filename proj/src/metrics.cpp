#include "magic/metrics.hpp"

#include <array>
#include <cmath>

namespace magic {

namespace {

void check_pair(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw InputError(std::string(what) + ": shape " + to_string(a.shape()) + " != " + to_string(b.shape()));
  }
}

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

}  // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  check_pair(a, b, "psnr");
  const double mse = (a.values().cast<double>() - b.values().cast<double>()).square().mean();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
  check_pair(a, b, "ssim");
  const Shape s = a.shape();
  if (s.h < kWin || s.w < kWin) {
    throw InputError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) + " smaller than the 11x11 window");
  }
  const auto g = gaussian_window();
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const int oh = s.h - kWin + 1;
  const int ow = s.w - kWin + 1;
  using Plane = Eigen::ArrayXXd;
  // Separable filtering: rows are x, columns are y in the Eigen plane.
  auto filter = [&](const Plane& p) {
    Plane tmp = Plane::Zero(ow, s.h);
    for (int k = 0; k < kWin; ++k) tmp += g[static_cast<std::size_t>(k)] * p.block(k, 0, ow, s.h);
    Plane out = Plane::Zero(ow, oh);
    for (int k = 0; k < kWin; ++k) out += g[static_cast<std::size_t>(k)] * tmp.block(0, k, ow, oh);
    return out;
  };
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      Plane x(s.w, s.h), y(s.w, s.h);
      for (int yy = 0; yy < s.h; ++yy)
        for (int xx = 0; xx < s.w; ++xx) {
          x(xx, yy) = a.at(n, c, yy, xx);
          y(xx, yy) = b.at(n, c, yy, xx);
        }
      const Plane mx = filter(x), my = filter(y);
      const Plane sxx = filter(x * x) - mx.square();
      const Plane syy = filter(y * y) - my.square();
      const Plane sxy = filter(x * y) - mx * my;
      const Plane map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx.square() + my.square() + c1) * (sxx + syy + c2));
      total += map.mean();
    }
  }
  return total / (static_cast<double>(s.n) * s.c);
}

}  // namespace magic
