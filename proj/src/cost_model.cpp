#include "magic/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace magic {

void HardwareParams::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("hardware width/height must be positive");
  if (!(fps > 0.0)) throw ConfigError("hardware fps must be positive");
  if (!(clock_hz > 0.0)) throw ConfigError("hardware clock must be positive");
  if (activation_bits <= 0 || weight_bits <= 0) throw ConfigError("hardware bit widths must be positive");
}

CostReport memory_logic_report(const NetworkConfig& cfg, const HardwareParams& hw) {
  hw.validate();
  const int m = cfg.spatial_multiple();
  if (hw.width % m != 0) {
    throw ConfigError("cost model width " + std::to_string(hw.width) + " must be a multiple of " + std::to_string(m));
  }
  const Network net = build_network(cfg);
  const LinePlan plan = plan_schedule(cfg);
  CostReport r;
  r.config_name = cfg.name;
  r.hw = hw;
  r.latency_lines = plan.total_delay;
  r.layers.resize(net.layers.size());
  const double pixels = static_cast<double>(hw.width) * hw.height;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    LayerCost& lc = r.layers[i];
    lc.name = L.name;
    lc.kind = std::string(layer_kind_name(L.kind));
    lc.factor = L.factor;
    lc.delay_lines = plan.layers[i].delay;
    lc.macs_per_pixel = L.macs_per_pixel();
    lc.macs_per_frame = static_cast<double>(lc.macs_per_pixel) * pixels / (static_cast<double>(L.factor) * L.factor);
    r.macs_per_frame += lc.macs_per_frame;
    r.macs_per_second += lc.macs_per_frame * hw.fps;
  }
  for (const BufferPlan& b : plan.buffers) {
    std::int64_t bits = b.samples(hw.width) * hw.activation_bits;
    switch (b.kind) {
      case BufferKind::kFirLines: r.fir_bits += bits; break;
      case BufferKind::kIirState: r.iir_state_bits += bits; break;
      case BufferKind::kSkipFifo: {
        const SkipSpec& s = cfg.skips[static_cast<std::size_t>(b.skip_index)];
        if (s.dpcm_enabled) bits = b.samples(hw.width) * s.dpcm_bits;
        r.skip_bits += bits;
        break;
      }
      default: r.alignment_bits += bits; break;
    }
    r.layers[static_cast<std::size_t>(b.layer)].buffer_bits += bits;
  }
  for (const SkipPlan& sp : plan.skips) {
    SkipCost sc;
    sc.name = sp.name;
    sc.factor = sp.factor;
    sc.span_lines = sp.span_lines;
    sc.span_rows = sp.span_rows;
    sc.channels = sp.channels;
    sc.dpcm = sp.dpcm;
    const std::int64_t samples = static_cast<std::int64_t>(sp.span_rows) * (hw.width / sp.factor) * sp.channels;
    sc.raw_bits = samples * hw.activation_bits;
    sc.bits = sp.dpcm ? samples * sp.dpcm_cfg.residual_bits : sc.raw_bits;
    r.skips.push_back(sc);
  }
  r.line_buffer_bits = r.fir_bits + r.iir_state_bits + r.skip_bits;
  r.total_memory_bits = r.line_buffer_bits + r.alignment_bits;
  r.weight_bits = static_cast<std::int64_t>(expected_parameter_count(cfg)) * hw.weight_bits;
  r.macs_per_clock = r.macs_per_second / hw.clock_hz;
  return r;
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << "config            " << config_name << '\n';
  os << "frame             " << hw.width << "x" << hw.height << " @ " << hw.fps << " fps, clock " << hw.clock_hz
     << " Hz, " << hw.activation_bits << "-bit activations, " << hw.weight_bits << "-bit weights\n";
  os << "latency_lines     " << latency_lines << '\n';
  os << "fir_bits          " << fir_bits << '\n';
  os << "iir_state_bits    " << iir_state_bits << '\n';
  os << "skip_bits         " << skip_bits << '\n';
  os << "line_buffer_bits  " << line_buffer_bits << '\n';
  os << "alignment_bits    " << alignment_bits << '\n';
  os << "total_memory_bits " << total_memory_bits << '\n';
  os << "weight_bits       " << weight_bits << '\n';
  os << std::setprecision(10);
  os << "macs_per_frame    " << macs_per_frame << '\n';
  os << "macs_per_second   " << macs_per_second << '\n';
  os << "macs_per_clock    " << macs_per_clock << '\n';
  for (const SkipCost& s : skips) {
    os << "skip " << s.name << ": factor " << s.factor << ", span " << s.span_lines << " lines (" << s.span_rows
       << " rows), " << s.channels << " ch, " << s.bits << " bits" << (s.dpcm ? " with DPCM" : "") << " (raw "
       << s.raw_bits << ")\n";
  }
  return os.str();
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "layer,kind,factor,delay_lines,buffer_bits,macs_per_pixel,macs_per_frame\n";
  os << std::setprecision(17);
  for (const LayerCost& l : layers) {
    os << l.name << ',' << l.kind << ',' << l.factor << ',' << l.delay_lines << ',' << l.buffer_bits << ','
       << l.macs_per_pixel << ',' << l.macs_per_frame << '\n';
  }
  return os.str();
}

int iir_effective_extent(double w1, double w2, double w3, double fraction) {
  const double a = std::abs(w1);
  if (a >= 1.0) return std::numeric_limits<int>::max();
  const double h0 = std::abs(w3);
  const double h1 = std::abs(w1 * w3 + w2);
  const double total = h0 + h1 / (1.0 - a);
  if (total == 0.0) return 1;
  double acc = h0;
  double hn = h1;
  int n = 1;
  while (acc < fraction * total) {
    acc += hn;
    hn *= a;
    ++n;
    if (n > 1000000) break;
  }
  return n;
}

ReceptiveField receptive_field(const Network& net, const std::vector<int>& iir_extents) {
  struct Rf {
    double jump = 1.0;
    long long h = 1;
    long long v = 1;
    long long v_eff = 1;
    bool unbounded = false;
  };
  std::vector<Rf> rf(net.layers.size());
  std::size_t iir_seen = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    Rf cur;
    if (!L.inputs.empty()) {
      cur = rf[static_cast<std::size_t>(L.inputs[0])];
      for (std::size_t j = 1; j < L.inputs.size(); ++j) {
        const Rf& o = rf[static_cast<std::size_t>(L.inputs[j])];
        cur.h = std::max(cur.h, o.h);
        cur.v = std::max(cur.v, o.v);
        cur.v_eff = std::max(cur.v_eff, o.v_eff);
        cur.unbounded = cur.unbounded || o.unbounded;
        cur.jump = std::max(cur.jump, o.jump);
      }
    }
    const auto j = static_cast<long long>(cur.jump);
    switch (L.kind) {
      case LayerKind::kConv:
        cur.h += (L.conv.kw - 1) * j;
        cur.v += (L.conv.kh - 1) * j;
        cur.v_eff += (L.conv.kh - 1) * j;
        break;
      case LayerKind::kPool4:
        cur.h += 3 * j;
        cur.v += 3 * j;
        cur.v_eff += 3 * j;
        cur.jump *= 4.0;
        break;
      case LayerKind::kUpsample4:
        cur.jump /= 4.0;
        break;
      case LayerKind::kIir: {
        const int e = iir_seen < iir_extents.size() ? iir_extents[iir_seen] : iir_effective_extent(0.5, 0.25, 0.25);
        ++iir_seen;
        cur.unbounded = true;
        cur.v_eff += static_cast<long long>(e - 1) * j;
        break;
      }
      default:
        break;
    }
    rf[i] = cur;
  }
  const Rf& o = rf[static_cast<std::size_t>(net.output)];
  ReceptiveField out;
  out.horizontal = static_cast<int>(o.h);
  out.vertical_unbounded = o.unbounded;
  out.vertical = static_cast<int>(o.v);
  out.vertical_effective = static_cast<int>(std::min<long long>(o.v_eff, std::numeric_limits<int>::max()));
  return out;
}

ReceptiveField receptive_field(const NetworkConfig& cfg) { return receptive_field(build_network(cfg)); }

ReceptiveField receptive_field(const MagicModel<float>& model) {
  const Network& net = model.network;
  std::vector<int> extents;
  for (const Layer& L : net.layers) {
    if (L.kind != LayerKind::kIir) continue;
    const auto& w1 = model.params[static_cast<std::size_t>(L.iir_params[0])].tensor.values();
    const auto& w2 = model.params[static_cast<std::size_t>(L.iir_params[1])].tensor.values();
    const auto& w3 = model.params[static_cast<std::size_t>(L.iir_params[2])].tensor.values();
    int widest = 1;
    for (Eigen::Index c = 0; c < w1.size(); ++c) widest = std::max(widest, iir_effective_extent(w1[c], w2[c], w3[c]));
    extents.push_back(widest);
  }
  return receptive_field(net, extents);
}

}  // namespace magic
