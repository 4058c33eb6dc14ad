#include <doctest.h>

#include "helpers.hpp"
#include "magic/stream.hpp"

using namespace magic;

namespace {

Eigen::ArrayXf line_of(const Tensor<float>& img, int y) {
  const Shape s = img.shape();
  Eigen::ArrayXf line(static_cast<Eigen::Index>(s.c) * s.w);
  for (int c = 0; c < s.c; ++c) std::copy_n(img.row(0, c, y), s.w, line.data() + static_cast<std::ptrdiff_t>(c) * s.w);
  return line;
}

}  // namespace

TEST_SUITE("stream") {
  TEST_CASE("streamed output equals the whole-frame forward") {
    for (const NetworkConfig& cfg : {reference_config(), with_fir_bottleneck(reference_config())}) {
      for (int trial = 0; trial < 3; ++trial) {
        MagicModel<float> m = build_model(cfg, static_cast<std::uint64_t>(trial));
        test::randomize(m, 100 + static_cast<std::uint64_t>(trial));
        const Shape s{1, 6, 32 + 16 * trial, 48 - 16 * trial};
        const Tensor<float> img = test::random_image(s, 7 + static_cast<std::uint64_t>(trial));
        for (SkipMode mode : {SkipMode::kConfigured, SkipMode::kQuantizeOnly, SkipMode::kExact}) {
          CHECK(test::max_abs_diff(stream_infer(m, img, mode), forward(m, img, mode)) == 0.0);
        }
      }
    }
  }

  TEST_CASE("first output row leaves at the planned delay") {
    for (const NetworkConfig& cfg : {reference_config(), with_fir_bottleneck(reference_config())}) {
      const MagicModel<float> m = build_model(cfg, 1);
      const Tensor<float> img = test::random_image(Shape{1, 6, 96, 32}, 3);
      StreamContext ctx(m, 32, 96);
      std::vector<int> order;
      for (int y = 0; y < 96; ++y)
        for (const StreamRow& r : ctx.push_line(line_of(img, y))) order.push_back(r.index);
      for (const StreamRow& r : ctx.flush()) order.push_back(r.index);
      CHECK(ctx.first_output_push() == ctx.plan().total_delay);
      REQUIRE(order.size() == 96);
      for (int i = 0; i < 96; ++i) CHECK(order[static_cast<std::size_t>(i)] == i);
      CHECK(ctx.finished());
    }
  }

  TEST_CASE("held samples stay within the plan") {
    const MagicModel<float> m = build_model(reference_config(), 1);
    const Tensor<float> img = test::random_image(Shape{1, 6, 80, 64}, 4);
    StreamContext ctx(m, 64, 0);
    for (int y = 0; y < 80; ++y) ctx.push_line(line_of(img, y));
    ctx.flush();
    std::int64_t planned = 0;
    for (const BufferUsage& u : ctx.buffers()) {
      CAPTURE(u.plan.name);
      CHECK(u.peak <= u.plan.samples(64));
      planned += u.plan.samples(64);
    }
    CHECK(ctx.peak_total_samples() <= planned);
    CHECK(ctx.peak_total_samples() > 0);
    const std::string trace = ctx.trace();
    CHECK(trace.find("total_delay 35") != std::string::npos);
    CHECK(trace.find("first_output_push 35") != std::string::npos);
  }

  TEST_CASE("identity network emits each row on its own push") {
    NetworkConfig cfg;
    cfg.name = "identity";
    cfg.in_channels = cfg.out_channels = 3;
    cfg.scales = {ScaleSpec{1, 3, {BlockSpec{BlockKind::kPointwise, 1, 1}}, {}, true, false}};
    MagicModel<float> m = build_model(cfg, 1);
    for (auto& p : m.params) p.tensor.values().setZero();
    std::vector<int> convs;
    for (const Layer& L : m.network.layers)
      if (L.kind == LayerKind::kConv) convs.push_back(L.kernel_param);
    REQUIRE(convs.size() >= 2);
    for (int id : {convs.front(), convs.back()}) {
      auto& t = m.params[static_cast<std::size_t>(id)].tensor;
      for (int c = 0; c < 3; ++c) t.at(c, c, 0, 0) = 1.0f;
    }
    const Tensor<float> img = test::random_image(Shape{1, 3, 5, 8}, 9);
    StreamContext ctx(m, 8, 5);
    CHECK(ctx.plan().total_delay == 0);
    for (int y = 0; y < 5; ++y) {
      const std::vector<StreamRow> out = ctx.push_line(line_of(img, y));
      REQUIRE(out.size() == 1);
      CHECK(out[0].index == y);
      CHECK((out[0].values == line_of(img, y)).all());
    }
    CHECK(ctx.flush().empty());
    CHECK(ctx.finished());
  }

  TEST_CASE("a frame shorter than the delay emits only on flush") {
    const MagicModel<float> m = build_model(reference_config(), 2);
    const Tensor<float> img = test::random_image(Shape{1, 6, 16, 32}, 5);
    StreamContext ctx(m, 32, 16);
    for (int y = 0; y < 16; ++y) CHECK(ctx.push_line(line_of(img, y)).empty());
    const std::vector<StreamRow> rows = ctx.flush();
    REQUIRE(rows.size() == 16);
    const Tensor<float> ref = forward(m, img);
    for (int y = 0; y < 16; ++y) CHECK((rows[static_cast<std::size_t>(y)].values == line_of(ref, y)).all());
  }

  TEST_CASE("constant frame streams exactly like the forward pass") {
    MagicModel<float> m = build_model(reference_config(), 3);
    test::randomize(m, 33);
    const Tensor<float> img = Tensor<float>::constant(Shape{1, 6, 48, 32}, 0.37f);
    CHECK(test::max_abs_diff(stream_infer(m, img), forward(m, img)) == 0.0);
  }

  TEST_CASE("lossless DPCM skip equals the plain quantized skip") {
    NetworkConfig cfg = reference_config();
    for (SkipSpec& sk : cfg.skips) sk.dpcm_bits = sk.input_bits + 1;
    MagicModel<float> m = build_model(cfg, 4);
    test::randomize(m, 44);
    const Tensor<float> img = test::random_image(Shape{1, 6, 48, 48}, 6);
    CHECK(test::max_abs_diff(stream_infer(m, img, SkipMode::kConfigured), stream_infer(m, img, SkipMode::kQuantizeOnly)) == 0.0);
  }

  TEST_CASE("usage errors") {
    const MagicModel<float> m = build_model(reference_config(), 1);
    const Eigen::ArrayXf row = Eigen::ArrayXf::Zero(6 * 32);
    CHECK_THROWS_AS(StreamContext(m, 30, 0), InputError);
    CHECK_THROWS_AS(StreamContext(m, 32, 20), InputError);
    {
      StreamContext ctx(m, 32, 0);
      CHECK_THROWS_AS(ctx.flush(), UsageError);
      CHECK_THROWS_AS(ctx.push_line(Eigen::ArrayXf::Zero(5)), InputError);
      for (int y = 0; y < 10; ++y) ctx.push_line(row);
      CHECK_THROWS_AS(ctx.flush(), InputError);
    }
    {
      StreamContext ctx(m, 32, 16);
      for (int y = 0; y < 8; ++y) ctx.push_line(row);
      CHECK_THROWS_AS(ctx.flush(), UsageError);
      for (int y = 8; y < 16; ++y) ctx.push_line(row);
      CHECK_THROWS_AS(ctx.push_line(row), UsageError);
      ctx.flush();
      CHECK(ctx.rows_emitted() == 16);
      CHECK_THROWS_AS(ctx.flush(), UsageError);
      CHECK_THROWS_AS(ctx.push_line(row), UsageError);
    }
    CHECK_THROWS_AS(stream_infer(m, Tensor<float>(Shape{1, 3, 16, 16})), ConfigError);
  }
}
