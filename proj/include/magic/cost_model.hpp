#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "magic/config.hpp"
#include "magic/line_plan.hpp"
#include "magic/network.hpp"

namespace magic {

struct HardwareParams {
  int width = 1920;
  int height = 1080;
  double fps = 30.0;
  double clock_hz = 5e8;
  int activation_bits = 16;
  int weight_bits = 8;

  void validate() const;
};

struct LayerCost {
  std::string name;
  std::string kind;
  int factor = 1;
  int delay_lines = 0;
  std::int64_t buffer_bits = 0;  ///< line buffers plus alignment storage owned by the layer
  std::int64_t macs_per_pixel = 0;  ///< per output pixel at the layer's own resolution
  double macs_per_frame = 0.0;
};

struct SkipCost {
  std::string name;
  int factor = 1;
  int span_lines = 0;
  int span_rows = 0;
  int channels = 0;
  std::int64_t raw_bits = 0;   ///< at activation_bits per sample
  std::int64_t bits = 0;       ///< as buffered (residual_bits per sample with DPCM)
  bool dpcm = false;
};

struct CostReport {
  std::string config_name;
  HardwareParams hw;
  std::vector<LayerCost> layers;
  std::vector<SkipCost> skips;

  std::int64_t fir_bits = 0;
  std::int64_t iir_state_bits = 0;
  std::int64_t skip_bits = 0;
  std::int64_t line_buffer_bits = 0;  ///< fir + iir state + skip FIFOs
  std::int64_t alignment_bits = 0;    ///< merge alignment, pool accumulators, upsample holds
  std::int64_t total_memory_bits = 0;
  std::int64_t weight_bits = 0;

  double macs_per_frame = 0.0;
  double macs_per_second = 0.0;
  double macs_per_clock = 0.0;
  int latency_lines = 0;

  std::string to_text() const;
  std::string to_csv() const;
};

CostReport memory_logic_report(const NetworkConfig& cfg, const HardwareParams& hw);

struct ReceptiveField {
  int horizontal = 1;
  int vertical = 1;              ///< finite window when !vertical_unbounded
  bool vertical_unbounded = false;
  int vertical_effective = 1;    ///< extent holding 99.9% of the IIR impulse mass
};

/// Standard recurrence: extent += (K - 1) * jump, jump *= stride; a nearest
/// upsample divides jump by 4; merges take the larger extent.
/// `iir_extents` gives the effective rows of each IIR layer in order; layers
/// past its end use the initial weights.
ReceptiveField receptive_field(const Network& net, const std::vector<int>& iir_extents = {});
/// Effective IIR extents from the initial weights, or the widest channel of a model.
ReceptiveField receptive_field(const NetworkConfig& cfg);
ReceptiveField receptive_field(const MagicModel<float>& model);

/// Number of rows of h0 = w3, h1 = w1*w3 + w2, hn = w1^(n-1) * h1 needed to
/// hold `fraction` of the total absolute impulse mass.
int iir_effective_extent(double w1, double w2, double w3, double fraction = 0.999);

struct ShiftSumTerm {
  int sign = 1;
  int exponent = 0;  ///< value sign * 2^exponent, exponent in [min_exp, 0]
};

struct ShiftSum {
  double value = 0.0;
  std::vector<ShiftSumTerm> terms;
  double abs_error = 0.0;
  double rel_error = 0.0;
};

/// Closest sum of at most `terms` signed powers of two with distinct
/// exponents in [min_exp, 0]. Ties prefer fewer terms, then the smaller sum
/// of term magnitudes (2^-1 + 2^-2 over 2^0 - 2^-2).
ShiftSum shift_sum_approx(double w, int terms, int min_exp = -15);

/// Replaces every convolution kernel and IIR weight by its shift-sum value,
/// after scaling each tensor by a power of two so its largest magnitude is
/// at most one. Biases are kept.
MagicModel<float> shift_sum_quantize(const MagicModel<float>& model, int terms, int min_exp = -15);

struct QuantizedDelta {
  double psnr = 0.0;  ///< quantized output vs float output, mean over images
  std::vector<double> per_image;
};

QuantizedDelta quantized_forward_delta(const MagicModel<float>& model, const std::vector<Tensor<float>>& images,
                                       int terms);

}  // namespace magic
