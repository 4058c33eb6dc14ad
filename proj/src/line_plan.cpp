#include "magic/line_plan.hpp"

#include <algorithm>

namespace magic {

std::string_view buffer_kind_name(BufferKind kind) {
  switch (kind) {
    case BufferKind::kFirLines: return "fir_lines";
    case BufferKind::kIirState: return "iir_state";
    case BufferKind::kSkipFifo: return "skip_fifo";
    case BufferKind::kResidualAlign: return "merge_align";
    case BufferKind::kPoolAccumulator: return "pool_accumulator";
    case BufferKind::kUpsampleHold: return "upsample_hold";
  }
  return "?";
}

std::int64_t LinePlan::total_samples(int width) const {
  std::int64_t n = 0;
  for (const BufferPlan& b : buffers) n += b.samples(width);
  return n;
}

std::int64_t LinePlan::samples(int width, BufferKind kind) const {
  std::int64_t n = 0;
  for (const BufferPlan& b : buffers)
    if (b.kind == kind) n += b.samples(width);
  return n;
}

LinePlan plan_schedule(const Network& net) {
  LinePlan plan;
  plan.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    LayerPlan& p = plan.layers[i];
    p.layer = static_cast<int>(i);
    p.name = L.name;
    p.kind = L.kind;
    p.factor = L.factor;
    p.vertical_extent = L.vertical_extent();
    int in_lag = 0;
    int in_factor = L.factor;
    for (int in : L.inputs) {
      in_lag = std::max(in_lag, plan.layers[static_cast<std::size_t>(in)].lag);
      in_factor = net.layers[static_cast<std::size_t>(in)].factor;
    }
    switch (L.kind) {
      case LayerKind::kConv:
        p.delay = (L.conv.kh / 2) * L.factor;
        p.buffered_lines = L.conv.kh - 1;
        if (L.conv.kh > 1) {
          plan.buffers.push_back(BufferPlan{BufferKind::kFirLines, p.layer, L.name, L.factor, L.conv.kh - 1,
                                            L.conv.in_channels});
        }
        break;
      case LayerKind::kIir:
        p.buffered_lines = 1;
        plan.buffers.push_back(BufferPlan{BufferKind::kIirState, p.layer, L.name, L.factor, 1, L.channels});
        break;
      case LayerKind::kPool4:
        p.delay = 3 * in_factor;
        p.buffered_lines = 1;
        plan.buffers.push_back(BufferPlan{BufferKind::kPoolAccumulator, p.layer, L.name, L.factor, 1, L.channels});
        break;
      case LayerKind::kUpsample4:
        p.buffered_lines = 1;
        plan.buffers.push_back(BufferPlan{BufferKind::kUpsampleHold, p.layer, L.name, in_factor, 1, L.channels});
        break;
      case LayerKind::kSkipLine:
        in_lag = std::max(in_lag, plan.layers[static_cast<std::size_t>(L.partner)].lag);
        break;
      default:
        break;
    }
    p.lag = in_lag + p.delay;

    if (L.kind == LayerKind::kSkipLine) {
      const Layer& tap = net.layers[static_cast<std::size_t>(L.inputs[0])];
      SkipPlan sp;
      sp.skip_index = L.skip_index;
      sp.name = L.name;
      sp.layer = p.layer;
      sp.factor = L.factor;
      sp.tap_lag = plan.layers[static_cast<std::size_t>(L.inputs[0])].lag;
      sp.partner_lag = plan.layers[static_cast<std::size_t>(L.partner)].lag;
      sp.span_lines = sp.partner_lag - sp.tap_lag;
      if (sp.span_lines % L.factor != 0) throw InternalError("skip " + L.name + ": span not a whole row");
      sp.span_rows = sp.span_lines / L.factor;
      sp.channels = tap.channels;
      plan.skips.push_back(sp);
      p.buffered_lines = sp.span_rows;
      plan.buffers.push_back(BufferPlan{BufferKind::kSkipFifo, p.layer, L.name, L.factor, sp.span_rows, tap.channels,
                                        L.skip_index});
    } else if (L.inputs.size() > 1) {
      for (int in : L.inputs) {
        const int gap = p.lag - plan.layers[static_cast<std::size_t>(in)].lag;
        if (gap > 0) {
          const Layer& src = net.layers[static_cast<std::size_t>(in)];
          if (gap % L.factor != 0) throw InternalError("merge " + L.name + ": lag gap not a whole row");
          plan.buffers.push_back(BufferPlan{BufferKind::kResidualAlign, p.layer, L.name + "<" + src.name, L.factor,
                                            gap / L.factor, src.channels, -1, in});
          p.buffered_lines += gap / L.factor;
        }
      }
    }
  }
  plan.total_delay = plan.layers[static_cast<std::size_t>(net.output)].lag;
  return plan;
}

LinePlan plan_schedule(const NetworkConfig& cfg) {
  LinePlan plan = plan_schedule(build_network(cfg));
  for (SkipPlan& sp : plan.skips) {
    const SkipSpec& s = cfg.skips[static_cast<std::size_t>(sp.skip_index)];
    sp.dpcm = s.dpcm_enabled;
    sp.dpcm_cfg = s.dpcm();
  }
  return plan;
}

}  // namespace magic
