#include <doctest.h>

#include <set>

#include "magic/cost_model.hpp"

using namespace magic;

namespace {

// Backward dependency propagation: the set of input coordinates one output
// coordinate reads, along one axis of an unbounded plane.
int dependency_extent(const Network& net, bool vertical, int out_pos) {
  std::vector<std::set<long>> need(net.layers.size());
  need[static_cast<std::size_t>(net.output)].insert(out_pos);
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const Layer& L = net.layers[i];
    if (need[i].empty()) continue;
    for (int in : L.inputs) {
      std::set<long>& dst = need[static_cast<std::size_t>(in)];
      for (long p : need[i]) {
        switch (L.kind) {
          case LayerKind::kConv: {
            const int r = vertical ? L.conv.kh / 2 : L.conv.kw / 2;
            for (long d = -r; d <= r; ++d) dst.insert(p + d);
            break;
          }
          case LayerKind::kPool4:
            for (long d = 0; d < 4; ++d) dst.insert(4 * p + d);
            break;
          case LayerKind::kUpsample4: dst.insert(p >= 0 ? p / 4 : -((-p + 3) / 4)); break;
          default: dst.insert(p); break;
        }
      }
    }
  }
  const auto& s = need[static_cast<std::size_t>(net.input)];
  return static_cast<int>(*s.rbegin() - *s.begin() + 1);
}

int worst_extent(const Network& net, bool vertical) {
  int worst = 0;
  for (int p = 1600; p < 1616; ++p) worst = std::max(worst, dependency_extent(net, vertical, p));
  return worst;
}

// Impulse response of y[n] = w1 y[n-1] + w2 x[n-1] + w3 x[n], simulated.
int simulated_extent(double w1, double w2, double w3, double fraction) {
  std::vector<double> h;
  double y = 0.0, xp = 0.0;
  for (int n = 0; n < 5000; ++n) {
    const double x = n == 0 ? 1.0 : 0.0;
    y = w1 * y + w2 * xp + w3 * x;
    xp = x;
    h.push_back(std::abs(y));
  }
  double total = 0.0;
  for (double v : h) total += v;
  double acc = 0.0;
  for (std::size_t n = 0; n < h.size(); ++n) {
    acc += h[n];
    if (acc >= fraction * total * (1.0 - 1e-12)) return static_cast<int>(n + 1);
  }
  return static_cast<int>(h.size());
}

}  // namespace

TEST_SUITE("cost_model") {
  TEST_CASE("reference buffer bits match a hand count at 1920x1080") {
    const HardwareParams hw;
    const CostReport r = memory_logic_report(reference_config(), hw);
    const std::int64_t fir = 4 * 2 * 1920 * 24 * 16 + 4 * 2 * 480 * 48 * 16;
    const std::int64_t iir = 2 * 120 * 96 * 16;
    // skip0 spans 31 full-res rows at 8-bit DPCM, skip1 3 quarter-res rows raw.
    const std::int64_t skip = 31 * 1920 * 4 * 8 + 3 * 480 * 8 * 16;
    CHECK(r.fir_bits == fir);
    CHECK(r.iir_state_bits == iir);
    CHECK(r.skip_bits == skip);
    CHECK(r.line_buffer_bits == fir + iir + skip);
    CHECK(r.line_buffer_bits == 11304960);
    CHECK(r.total_memory_bits == r.line_buffer_bits + r.alignment_bits);
    CHECK(r.latency_lines == 35);
    CHECK(r.weight_bits == 56682 * 8);
  }

  TEST_CASE("IIR bottleneck versus FIR ablation") {
    const HardwareParams hw;
    const CostReport a = memory_logic_report(reference_config(), hw);
    const CostReport b = memory_logic_report(with_fir_bottleneck(reference_config()), hw);
    const std::int64_t w16 = 1920 / 16;
    const std::int64_t delta = 2 * 2 * w16 * 96 * 16 - 2 * w16 * 96 * 16 + 32 * 1920 * 4 * 8 + 8 * 480 * 8 * 16;
    CHECK(b.line_buffer_bits - a.line_buffer_bits == delta);
    CHECK(b.alignment_bits - a.alignment_bits == 2 * w16 * 96 * 16);
    CHECK(a.total_memory_bits < b.total_memory_bits);
    CHECK(a.latency_lines < b.latency_lines);
    CHECK(b.latency_lines == 67);
  }

  TEST_CASE("MAC rate from a per-pixel hand count") {
    // Per full-res pixel: scale 0, scale 1 / 16, scale 2 / 256.
    const double s0 = 6 * 24 + 4 * (24 * 8 * 9 + 24 * 24) + 24 * 4 + 4 * 24 + 72 * 24 + 24 * 6;
    const double s1 = 24 * 48 + 4 * (48 * 9 + 48 * 48) + 48 * 8 + 8 * 48 + 144 * 48;
    const double s2 = 48 * 96 + 2 * (96 * 3 + 96 * 3 + 96 * 96);
    const double per_pixel = s0 + s1 / 16 + s2 / 256;
    HardwareParams hw;
    const CostReport r = memory_logic_report(reference_config(), hw);
    CHECK(r.macs_per_frame == per_pixel * 1920 * 1080);
    CHECK(r.macs_per_second == per_pixel * 1920 * 1080 * 30);
    CHECK(r.macs_per_clock == doctest::Approx(r.macs_per_second / 5e8));
  }

  TEST_CASE("report totals are sums of their parts") {
    for (const NetworkConfig& cfg : {reference_config(), with_fir_bottleneck(reference_config())}) {
      const CostReport r = memory_logic_report(cfg, HardwareParams{});
      std::int64_t bits = 0;
      double macs = 0.0;
      for (const LayerCost& l : r.layers) {
        bits += l.buffer_bits;
        macs += l.macs_per_frame;
      }
      CHECK(bits == r.total_memory_bits);
      CHECK(macs == doctest::Approx(r.macs_per_frame).epsilon(1e-12));
      CHECK(r.line_buffer_bits == r.fir_bits + r.iir_state_bits + r.skip_bits);
      HardwareParams tall;
      tall.height = 2160;
      CHECK(memory_logic_report(cfg, tall).macs_per_second == 2 * r.macs_per_second);
    }
  }

  TEST_CASE("scaling with width and fps") {
    for (const NetworkConfig& cfg : {reference_config(), with_fir_bottleneck(reference_config())}) {
      for (int w : {320, 640, 1920}) {
        HardwareParams hw;
        hw.width = w;
        const CostReport a = memory_logic_report(cfg, hw);
        hw.width = 2 * w;
        const CostReport b = memory_logic_report(cfg, hw);
        CHECK(b.total_memory_bits == 2 * a.total_memory_bits);
        CHECK(b.line_buffer_bits == 2 * a.line_buffer_bits);
        CHECK(b.latency_lines == a.latency_lines);
        hw.width = w;
        hw.fps = 60.0;
        const CostReport c = memory_logic_report(cfg, hw);
        CHECK(c.macs_per_second == 2 * a.macs_per_second);
        CHECK(c.total_memory_bits == a.total_memory_bits);
      }
    }
  }

  TEST_CASE("hardware argument checks") {
    HardwareParams hw;
    hw.width = 1000;
    CHECK_THROWS_AS(memory_logic_report(reference_config(), hw), ConfigError);
    hw = HardwareParams{};
    hw.fps = 0.0;
    CHECK_THROWS_AS(memory_logic_report(reference_config(), hw), ConfigError);
    hw = HardwareParams{};
    hw.activation_bits = 0;
    CHECK_THROWS_AS(memory_logic_report(reference_config(), hw), ConfigError);
  }

  TEST_CASE("receptive field recurrence against dependency propagation") {
    for (const NetworkConfig& cfg : {reference_config(), with_fir_bottleneck(reference_config())}) {
      Network net = build_network(cfg);
      // Encoder prefix up to the bottleneck output: pools only, the recurrence is exact.
      int last = 0;
      while (net.layers[static_cast<std::size_t>(last) + 1].kind != LayerKind::kUpsample4) ++last;
      Network enc = net;
      enc.output = last;
      const ReceptiveField pre = receptive_field(enc);
      CHECK(pre.horizontal == worst_extent(enc, false));
      CHECK(pre.vertical == worst_extent(enc, true));
      // Nearest upsampling adds alignment slack the recurrence does not count.
      const ReceptiveField rf = receptive_field(cfg);
      CHECK(rf.horizontal <= worst_extent(net, false));
      CHECK(rf.vertical <= worst_extent(net, true));
    }
    CHECK(worst_extent(build_network(reference_config()), false) == 132);
    const ReceptiveField ref = receptive_field(reference_config());
    CHECK(ref.vertical_unbounded);
    CHECK(ref.horizontal == 120);
    const ReceptiveField fir = receptive_field(with_fir_bottleneck(reference_config()));
    CHECK_FALSE(fir.vertical_unbounded);
    CHECK(fir.vertical == 120);
    CHECK(fir.horizontal == 120);
    CHECK(ref.vertical_effective > fir.vertical);
  }

  TEST_CASE("receptive field of small chains") {
    NetworkConfig c;
    c.in_channels = 1;
    c.out_channels = 1;
    c.scales = {ScaleSpec{1, 3, {BlockSpec{BlockKind::kDepthwiseSeparable, 1, 3}}, {}, true, false}};
    CHECK(receptive_field(c).horizontal == 3);
    CHECK(receptive_field(c).vertical == 3);
    c.scales[0].encoder.push_back(c.scales[0].encoder[0]);
    CHECK(receptive_field(c).horizontal == 5);
    // pool4 then a 3x3 at 1/4: 1 + 3 + 2 * 4, the +3 being the pool window itself.
    c.scales = {ScaleSpec{1, 3, {BlockSpec{BlockKind::kPointwise, 1, 1}}, {}, true, false},
                ScaleSpec{4, 3, {BlockSpec{BlockKind::kDepthwiseSeparable, 1, 3}}, {}, true, false}};
    Network net = build_network(c);
    int last = 0;
    while (net.layers[static_cast<std::size_t>(last) + 1].kind != LayerKind::kUpsample4) ++last;
    net.output = last;
    CHECK(receptive_field(net).horizontal == 12);
    CHECK(worst_extent(net, false) == 12);
  }

  TEST_CASE("IIR effective extent matches a simulated impulse response") {
    CHECK(iir_effective_extent(0.5, 0.25, 0.25) == 11);
    for (double w1 : {-0.9, -0.5, 0.0, 0.3, 0.5, 0.8, 0.95, 0.99})
      for (double w2 : {-0.3, 0.0, 0.25})
        for (double w3 : {0.1, 0.25, 1.0})
          for (double f : {0.9, 0.99, 0.999}) {
            CAPTURE(w1);
            CAPTURE(w2);
            CAPTURE(w3);
            CHECK(iir_effective_extent(w1, w2, w3, f) == simulated_extent(w1, w2, w3, f));
          }
    CHECK(iir_effective_extent(0.0, 0.0, 0.0) == 1);
  }
}
