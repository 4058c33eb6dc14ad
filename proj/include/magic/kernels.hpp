#pragma once

// Row-granular compute kernels. The whole-frame graph and the line-streaming
// engine both evaluate every layer through these functions, so the two paths
// perform the same floating-point operations in the same order.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "magic/dpcm.hpp"
#include "magic/errors.hpp"

namespace magic {

/// Stride-1, zero-padded ("same") grouped convolution geometry.
/// Kernel layout is [out][in / groups][kh][kw].
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int groups = 1;
  int kh = 1;
  int kw = 1;

  int in_per_group() const { return in_channels / groups; }
  int out_per_group() const { return out_channels / groups; }
  int pad_y() const { return kh / 2; }
  int pad_x() const { return kw / 2; }
  std::size_t kernel_size() const {
    return static_cast<std::size_t>(out_channels) * in_per_group() * kh * kw;
  }
  std::int64_t macs_per_pixel() const { return static_cast<std::int64_t>(out_channels) * in_per_group() * kh * kw; }

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || groups < 1) throw ConfigError("conv channels and groups must be positive");
    if (in_channels % groups != 0) {
      throw ConfigError("conv in_channels (" + std::to_string(in_channels) + ") not divisible by groups (" +
                        std::to_string(groups) + ")");
    }
    if (out_channels % groups != 0) {
      throw ConfigError("conv out_channels (" + std::to_string(out_channels) + ") not divisible by groups (" +
                        std::to_string(groups) + ")");
    }
    if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0) {
      throw ConfigError("conv kernel height/width must be odd and positive, got " + std::to_string(kh) + "x" +
                        std::to_string(kw));
    }
  }
  bool operator==(const ConvSpec&) const = default;
};

/// What happens to samples on a skip line before they are buffered.
struct SkipCodec {
  bool quantize = false;  ///< map to unsigned fixed point with dpcm.input_bits
  bool dpcm = false;      ///< code quantized samples with closed-loop DPCM
  DpcmConfig dpcm_cfg;
};

namespace kernels {

template <typename Scalar>
using RowMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

/// One output row of a grouped convolution.
///
/// `rows(ky, c)` returns the input row that kernel row `ky` reads for channel
/// `c`, or nullptr where that row lies in the zero padding. `out(co)` returns
/// the destination row. Each output sample accumulates bias first, then
/// kernel row, kernel column, input channel (innermost); taps that fall in
/// the padding are skipped.
template <typename Scalar, typename RowIn, typename RowOut>
void conv_row(const ConvSpec& spec, const Scalar* kernel, const Scalar* bias, int width, RowIn&& rows,
              RowOut&& out) {
  constexpr int kLanes = 16;
  const int ipg = spec.in_per_group();
  const int opg = spec.out_per_group();
  const int px = spec.pad_x();
  const int kh = spec.kh, kw = spec.kw;
  thread_local std::vector<const Scalar*> src;
  src.assign(static_cast<std::size_t>(kh) * ipg, nullptr);
  // Columns [x_lo, x_hi) read no horizontal padding.
  const int x_lo = std::min(px, width);
  const int x_hi = std::max(x_lo, width - px);

  auto edge = [&](const Scalar* k_co, Scalar b, Scalar* o, int x) {
    Scalar acc = b;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int xx = x + kx - px;
        if (xx < 0 || xx >= width) continue;
        for (int g = 0; g < ipg; ++g) {
          const Scalar* r = src[static_cast<std::size_t>(ky) * ipg + g];
          if (r == nullptr) continue;
          acc += k_co[(static_cast<std::size_t>(g) * kh + ky) * kw + kx] * r[xx];
        }
      }
    o[x] = acc;
  };

  struct Tap {
    Scalar w;
    const Scalar* p;  ///< input row shifted by the tap's column offset
  };
  thread_local std::vector<Tap> taps;
  for (int grp = 0; grp < spec.groups; ++grp) {
    const int ci0 = grp * ipg;
    for (int ky = 0; ky < kh; ++ky)
      for (int g = 0; g < ipg; ++g) src[static_cast<std::size_t>(ky) * ipg + g] = rows(ky, ci0 + g);
    for (int co = grp * opg; co < (grp + 1) * opg; ++co) {
      const Scalar* k_co = kernel + static_cast<std::size_t>(co) * ipg * kh * kw;
      taps.clear();
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
          for (int g = 0; g < ipg; ++g) {
            const Scalar* r = src[static_cast<std::size_t>(ky) * ipg + g];
            if (r != nullptr) taps.push_back(Tap{k_co[(static_cast<std::size_t>(g) * kh + ky) * kw + kx], r + kx - px});
          }
      Scalar* o = out(co);
      for (int x = 0; x < x_lo; ++x) edge(k_co, bias[co], o, x);
      int x = x_lo;
      auto run = [&]<int kN>(std::integral_constant<int, kN>) {
        for (; x + kN <= x_hi; x += kN) {
          Eigen::Array<Scalar, kN, 1> acc;
          acc.setConstant(bias[co]);
          for (const Tap& t : taps) acc += t.w * Eigen::Map<const Eigen::Array<Scalar, kN, 1>>(t.p + x);
          Eigen::Map<Eigen::Array<Scalar, kN, 1>>(o + x) = acc;
        }
      };
      run(std::integral_constant<int, kLanes>{});
      run(std::integral_constant<int, 4>{});
      for (; x < width; ++x) edge(k_co, bias[co], o, x);
    }
  }
}

/// Backward of conv_row for one output row: accumulates into input-row
/// gradients, kernel gradient and bias gradient.
template <typename Scalar, typename RowIn, typename GradIn, typename GradOut>
void conv_row_backward(const ConvSpec& spec, const Scalar* kernel, int width, RowIn&& rows, GradOut&& grad_out,
                       GradIn&& grad_rows, Scalar* grad_kernel, Scalar* grad_bias) {
  constexpr int kLanes = 16;
  const int ipg = spec.in_per_group();
  const int opg = spec.out_per_group();
  const int px = spec.pad_x();
  const int kh = spec.kh, kw = spec.kw;
  if (grad_kernel != nullptr || grad_bias != nullptr) {
    for (int co = 0; co < spec.out_channels; ++co) {
      ConstRowMap<Scalar> g(grad_out(co), width);
      if (grad_bias != nullptr) grad_bias[co] += g.sum();
      if (grad_kernel == nullptr) continue;
      const int ci0 = (co / opg) * ipg;
      const std::size_t k_base = static_cast<std::size_t>(co) * ipg * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const int dx = kx - px;
          const int lo = std::max(0, -dx);
          const int hi = std::min(width, width - dx);
          if (hi <= lo) continue;
          for (int gi = 0; gi < ipg; ++gi) {
            const Scalar* src = rows(ky, ci0 + gi);
            if (src == nullptr) continue;
            const std::size_t k_idx = k_base + (static_cast<std::size_t>(gi) * kh + ky) * kw + kx;
            grad_kernel[k_idx] += (g.segment(lo, hi - lo) * ConstRowMap<Scalar>(src + lo + dx, hi - lo)).sum();
          }
        }
      }
    }
  }
  // Input gradient: d_in[xi] += k * d_out[xi - dx] over output channels and columns.
  thread_local std::vector<const Scalar*> gout;
  gout.resize(static_cast<std::size_t>(spec.out_channels));
  for (int co = 0; co < spec.out_channels; ++co) gout[static_cast<std::size_t>(co)] = grad_out(co);
  const int x_lo = std::min(px, width);
  const int x_hi = std::max(x_lo, width - px);
  for (int grp = 0; grp < spec.groups; ++grp) {
    const int ci0 = grp * ipg;
    const int co0 = grp * opg;
    for (int ky = 0; ky < kh; ++ky) {
      for (int gi = 0; gi < ipg; ++gi) {
        Scalar* dst = grad_rows(ky, ci0 + gi);
        if (dst == nullptr) continue;
        auto edge = [&](int xi) {
          Scalar acc = dst[xi];
          for (int co = co0; co < co0 + opg; ++co)
            for (int kx = 0; kx < kw; ++kx) {
              const int xo = xi - (kx - px);
              if (xo < 0 || xo >= width) continue;
              acc += kernel[(static_cast<std::size_t>(co) * ipg + gi) * kh * kw + static_cast<std::size_t>(ky) * kw + kx] *
                     gout[static_cast<std::size_t>(co)][xo];
            }
          dst[xi] = acc;
        };
        for (int xi = 0; xi < x_lo; ++xi) edge(xi);
        int xi = x_lo;
        auto run = [&]<int kN>(std::integral_constant<int, kN>) {
          for (; xi + kN <= x_hi; xi += kN) {
            Eigen::Map<Eigen::Array<Scalar, kN, 1>> d(dst + xi);
            Eigen::Array<Scalar, kN, 1> acc = d;
            for (int co = co0; co < co0 + opg; ++co) {
              const Scalar* k = kernel + (static_cast<std::size_t>(co) * ipg + gi) * kh * kw + static_cast<std::size_t>(ky) * kw;
              for (int kx = 0; kx < kw; ++kx) {
                acc += k[kx] * Eigen::Map<const Eigen::Array<Scalar, kN, 1>>(gout[static_cast<std::size_t>(co)] + xi - (kx - px));
              }
            }
            d = acc;
          }
        };
        run(std::integral_constant<int, kLanes>{});
        run(std::integral_constant<int, 4>{});
        for (; xi < width; ++xi) edge(xi);
      }
    }
  }
}

/// One row of the vertical first-order recurrence
///   h[t] = h[t-1]*w1 + x[t-1]*w2 + x[t]*w3
/// in carry form: h = carry + x*w3, then carry <- h*w1 + x*w2. The carry row
/// is the only state kept between rows and starts at zero for each frame.
template <typename Scalar>
void iir_row(const Scalar* x, Scalar* carry, Scalar* h, Scalar w1, Scalar w2, Scalar w3, int width) {
  for (int i = 0; i < width; ++i) {
    const Scalar hi = carry[i] + x[i] * w3;
    carry[i] = hi * w1 + x[i] * w2;
    h[i] = hi;
  }
}

/// Horizontal 4:1 max of one input row folded into a running accumulator of
/// width `width_in / 4`.
template <typename Scalar>
void pool4_accumulate_row(const Scalar* in, Scalar* acc, int width_in, bool first) {
  const int wo = width_in / 4;
  for (int xo = 0; xo < wo; ++xo) {
    const Scalar* p = in + 4 * xo;
    const Scalar m = std::max(std::max(p[0], p[1]), std::max(p[2], p[3]));
    acc[xo] = first ? m : std::max(acc[xo], m);
  }
}

template <typename Scalar>
void upsample4_row(const Scalar* coarse, Scalar* fine, int width_coarse) {
  for (int x = 0; x < width_coarse; ++x) {
    const Scalar v = coarse[x];
    fine[4 * x] = v;
    fine[4 * x + 1] = v;
    fine[4 * x + 2] = v;
    fine[4 * x + 3] = v;
  }
}

/// Quantize and (optionally) DPCM-code one skip-line row.
template <typename Scalar>
void skip_encode_row(const Scalar* in, int width, const SkipCodec& codec, std::span<std::int32_t> codes) {
  const int bits = codec.dpcm_cfg.input_bits;
  for (int i = 0; i < width; ++i) codes[i] = quantize_unit(static_cast<double>(in[i]), bits);
  if (codec.dpcm) {
    const std::vector<std::int32_t> coded = dpcm_encode(codes.first(width), codec.dpcm_cfg);
    std::copy(coded.begin(), coded.end(), codes.begin());
  }
}

template <typename Scalar>
void skip_decode_row(std::span<const std::int32_t> codes, int width, const SkipCodec& codec, Scalar* out,
                     std::vector<std::int32_t>& scratch) {
  const int bits = codec.dpcm_cfg.input_bits;
  std::span<const std::int32_t> samples = codes.first(width);
  if (codec.dpcm) {
    scratch.resize(width);
    dpcm_decode_into(samples, scratch, codec.dpcm_cfg);
    samples = scratch;
  }
  for (int i = 0; i < width; ++i) out[i] = static_cast<Scalar>(dequantize_unit(samples[i], bits));
}

}  // namespace kernels
}  // namespace magic
