#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "magic/config.hpp"
#include "magic/network.hpp"

namespace magic {

/// Storage a streaming implementation keeps between input lines.
enum class BufferKind {
  kFirLines,        ///< K-1 input rows for a K-row vertical window
  kIirState,        ///< one carry row per IIR layer
  kSkipFifo,        ///< rows waiting on a skip line
  kResidualAlign,   ///< block input held until the block output row exists
  kPoolAccumulator, ///< one partial coarse row of a 4x4 max-pool
  kUpsampleHold,    ///< one coarse row replicated into four fine rows
};

std::string_view buffer_kind_name(BufferKind kind);

/// Line-buffer categories, as opposed to alignment storage.
inline bool is_line_buffer(BufferKind k) {
  return k == BufferKind::kFirLines || k == BufferKind::kIirState || k == BufferKind::kSkipFifo;
}

struct BufferPlan {
  BufferKind kind = BufferKind::kFirLines;
  int layer = -1;      ///< owning (consuming) layer
  std::string name;
  int factor = 1;      ///< downsample factor of the buffered rows
  int rows = 0;        ///< rows of width W / factor
  int channels = 0;
  int skip_index = -1;
  int source = -1;     ///< kResidualAlign: the earlier merge input

  std::int64_t samples(int width) const {
    return static_cast<std::int64_t>(rows) * (width / factor) * channels;
  }
};

struct LayerPlan {
  int layer = -1;
  std::string name;
  LayerKind kind = LayerKind::kInput;
  int factor = 1;
  int vertical_extent = 1;
  int delay = 0;  ///< own contribution, full-resolution lines
  int lag = 0;    ///< row r of this layer is ready at input line factor * r + lag
  int buffered_lines = 0;
};

struct SkipPlan {
  int skip_index = -1;
  std::string name;
  int layer = -1;  ///< the skip line layer
  int factor = 1;
  int tap_lag = 0;
  int partner_lag = 0;
  int span_lines = 0;  ///< full-resolution lines the bypassed path delays
  int span_rows = 0;   ///< rows held at the skip's own resolution
  int channels = 0;
  bool dpcm = false;
  DpcmConfig dpcm_cfg;
};

struct LinePlan {
  std::vector<LayerPlan> layers;
  std::vector<BufferPlan> buffers;
  std::vector<SkipPlan> skips;
  int total_delay = 0;

  std::int64_t total_samples(int width) const;
  std::int64_t samples(int width, BufferKind kind) const;
};

/// Vertical schedule of a layer sequence. A layer with a K-row window at
/// factor s adds floor(K/2) * s lines; a 4x4 pool adds 3 * s_in lines while
/// its last input row arrives; IIR, pointwise and upsample layers add none;
/// merges wait for their latest input.
LinePlan plan_schedule(const Network& net);
LinePlan plan_schedule(const NetworkConfig& cfg);

}  // namespace magic
