#include "magic/dpcm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "magic/errors.hpp"

namespace magic {

void DpcmConfig::validate() const {
  if (input_bits < 1 || input_bits > 24) {
    throw ConfigError("dpcm input_bits must be in [1, 24], got " + std::to_string(input_bits));
  }
  if (residual_bits < 2 || residual_bits > input_bits + 1) {
    throw ConfigError("dpcm residual_bits must be in [2, input_bits + 1] = [2, " + std::to_string(input_bits + 1) +
                      "], got " + std::to_string(residual_bits));
  }
}

namespace {

std::int32_t quantize_residual(std::int32_t d, std::int32_t step, std::int32_t max_code) {
  const std::int32_t mag = (std::abs(d) + step / 2) / step;
  const std::int32_t q = d < 0 ? -mag : mag;
  return std::clamp(q, -max_code, max_code);
}

}  // namespace

DpcmRow dpcm_encode_row(std::span<const std::int32_t> row, const DpcmConfig& cfg) {
  cfg.validate();
  DpcmRow out;
  out.codes.resize(row.size());
  out.reconstruction.resize(row.size());
  const std::int32_t max_sample = cfg.max_sample();
  const std::int32_t step = cfg.step();
  const std::int32_t max_code = cfg.max_code();
  std::int32_t prediction = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const std::int32_t s = row[i];
    if (s < 0 || s > max_sample) {
      throw InputError("dpcm sample " + std::to_string(s) + " at index " + std::to_string(i) + " outside [0, " +
                       std::to_string(max_sample) + "]");
    }
    if (i == 0) {
      out.codes[i] = s;
      out.reconstruction[i] = s;
    } else {
      const std::int32_t q = quantize_residual(s - prediction, step, max_code);
      out.codes[i] = q;
      out.reconstruction[i] = std::clamp(prediction + q * step, 0, max_sample);
    }
    prediction = out.reconstruction[i];
  }
  return out;
}

std::vector<std::int32_t> dpcm_encode(std::span<const std::int32_t> row, const DpcmConfig& cfg) {
  return dpcm_encode_row(row, cfg).codes;
}

void dpcm_decode_into(std::span<const std::int32_t> codes, std::span<std::int32_t> out, const DpcmConfig& cfg) {
  cfg.validate();
  if (out.size() != codes.size()) {
    throw InputError("dpcm decode length mismatch: " + std::to_string(codes.size()) + " codes, " +
                     std::to_string(out.size()) + " output slots");
  }
  const std::int32_t max_sample = cfg.max_sample();
  const std::int32_t step = cfg.step();
  std::int32_t prediction = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i == 0) {
      if (codes[0] < 0 || codes[0] > max_sample) throw InputError("dpcm leading code out of range");
      out[0] = codes[0];
    } else {
      if (std::abs(codes[i]) > cfg.max_code()) throw InputError("dpcm residual code out of range");
      out[i] = std::clamp(prediction + codes[i] * step, 0, max_sample);
    }
    prediction = out[i];
  }
}

std::vector<std::int32_t> dpcm_decode(std::span<const std::int32_t> codes, const DpcmConfig& cfg) {
  std::vector<std::int32_t> out(codes.size());
  dpcm_decode_into(codes, out, cfg);
  return out;
}

std::int64_t dpcm_encoded_bits(std::size_t len, const DpcmConfig& cfg) {
  if (len == 0) return 0;
  return cfg.input_bits + static_cast<std::int64_t>(len - 1) * cfg.residual_bits;
}

double dpcm_savings_ratio(std::size_t len, const DpcmConfig& cfg) {
  if (len == 0) return 1.0;
  return static_cast<double>(static_cast<std::int64_t>(len) * cfg.input_bits) /
         static_cast<double>(dpcm_encoded_bits(len, cfg));
}

std::int32_t quantize_unit(double v, int bits) {
  const double levels = static_cast<double>((std::int64_t{1} << bits) - 1);
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::int32_t>(std::floor(c * levels + 0.5));
}

double dequantize_unit(std::int32_t q, int bits) {
  return static_cast<double>(q) / static_cast<double>((std::int64_t{1} << bits) - 1);
}

}  // namespace magic
