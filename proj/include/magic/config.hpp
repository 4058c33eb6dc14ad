#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "magic/dpcm.hpp"

namespace magic {

enum class BlockKind {
  kGroupConv,           ///< k x k grouped conv -> ReLU -> pointwise
  kDepthwiseSeparable,  ///< k x k depthwise conv -> ReLU -> pointwise
  kHybridFirIir,        ///< 1 x k depthwise FIR -> vertical IIR -> ReLU -> pointwise
  kPointwise,           ///< pointwise only
};

std::string_view block_kind_name(BlockKind kind);
BlockKind parse_block_kind(std::string_view name);

struct BlockSpec {
  BlockKind kind = BlockKind::kPointwise;
  int groups = 1;  ///< group_conv only
  int k = 3;       ///< spatial taps (horizontal only for hybrid blocks)

  bool operator==(const BlockSpec&) const = default;
};

struct ScaleSpec {
  int factor = 1;  ///< downsample factor relative to full resolution
  int channels = 8;
  std::vector<BlockSpec> encoder;
  std::vector<BlockSpec> decoder;  ///< ignored (must be empty) at the coarsest scale
  bool encoder_residual = true;
  bool decoder_residual = false;

  bool operator==(const ScaleSpec&) const = default;
};

struct SkipSpec {
  int from_scale = 0;
  int to_scale = 0;
  int compressed_channels = 4;
  bool dpcm_enabled = false;
  int dpcm_bits = 8;     ///< residual bits
  int input_bits = 12;   ///< fixed-point precision of buffered samples

  DpcmConfig dpcm() const { return {input_bits, dpcm_bits}; }
  bool operator==(const SkipSpec&) const = default;
};

/// Declarative encoder/decoder topology. Scale i runs at 1/4^i resolution;
/// stride-4 pools sit between consecutive scales and the coarsest scale is
/// the bottleneck.
struct NetworkConfig {
  std::string name = "custom";
  int in_channels = 6;
  int out_channels = 6;
  std::vector<ScaleSpec> scales;
  std::vector<SkipSpec> skips;

  /// Throws ConfigError describing the first violated rule.
  void validate() const;

  int coarsest() const { return static_cast<int>(scales.size()) - 1; }
  const SkipSpec* skip_at(int scale) const;
  /// Spatial extents must be multiples of this.
  int spatial_multiple() const { return scales.empty() ? 1 : scales.back().factor; }

  std::string to_text() const;
  static NetworkConfig from_text(const std::string& text);
  /// FNV-1a over the canonical text form.
  std::uint64_t hash() const;

  bool operator==(const NetworkConfig&) const = default;
};

/// The reference topology: 24/48/96 channels at 1, 1/4, 1/16 resolution,
/// hybrid FIR-IIR bottleneck, DPCM on the full-resolution skip only.
NetworkConfig reference_config();

/// Copy of `cfg` with every hybrid FIR-IIR block replaced by a 3x3
/// depthwise-separable block.
NetworkConfig with_fir_bottleneck(NetworkConfig cfg);

/// Accepts "magic-ref", "fir-ablation" or a path to a config text file.
NetworkConfig load_config(const std::string& name_or_path);

void save_config(const NetworkConfig& cfg, const std::string& path);

}  // namespace magic
