#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace magic {

/// Closed-loop DPCM over one row of unsigned samples, left-neighbor
/// predictor, state reset at the start of every row.
///
/// The first sample of a row is sent verbatim at `input_bits`. Every later
/// sample sends q = round(d / step) clamped to [-max_code, max_code], where d
/// is the difference to the *reconstructed* left neighbor and
/// step = 2^(input_bits + 1 - residual_bits). At residual_bits = input_bits + 1
/// the step is 1 and the codec is lossless.
struct DpcmConfig {
  int input_bits = 12;
  int residual_bits = 8;

  void validate() const;
  std::int32_t max_sample() const { return (std::int32_t{1} << input_bits) - 1; }
  std::int32_t step() const { return std::int32_t{1} << (input_bits + 1 - residual_bits); }
  std::int32_t max_code() const { return (std::int32_t{1} << (residual_bits - 1)) - 1; }
  bool lossless() const { return residual_bits == input_bits + 1; }

  static DpcmConfig make_lossless(int input_bits) { return {input_bits, input_bits + 1}; }
  bool operator==(const DpcmConfig&) const = default;
};

struct DpcmRow {
  std::vector<std::int32_t> codes;
  /// Encoder-side reconstruction; the decoder reproduces it exactly.
  std::vector<std::int32_t> reconstruction;
};

DpcmRow dpcm_encode_row(std::span<const std::int32_t> row, const DpcmConfig& cfg);

std::vector<std::int32_t> dpcm_encode(std::span<const std::int32_t> row, const DpcmConfig& cfg);
std::vector<std::int32_t> dpcm_decode(std::span<const std::int32_t> codes, const DpcmConfig& cfg);

/// Decode into a caller-sized buffer; `out.size()` must equal `codes.size()`.
void dpcm_decode_into(std::span<const std::int32_t> codes, std::span<std::int32_t> out, const DpcmConfig& cfg);

/// input_bits + (len - 1) * residual_bits; zero for an empty row.
std::int64_t dpcm_encoded_bits(std::size_t len, const DpcmConfig& cfg);

/// len * input_bits divided by dpcm_encoded_bits(len).
double dpcm_savings_ratio(std::size_t len, const DpcmConfig& cfg);

/// Maps [0, 1] (clamped) onto [0, 2^bits - 1] with round-half-up.
std::int32_t quantize_unit(double v, int bits);
double dequantize_unit(std::int32_t q, int bits);

}  // namespace magic
