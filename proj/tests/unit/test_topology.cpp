#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "magic/config.hpp"
#include "magic/network.hpp"

using namespace magic;

namespace {

NetworkConfig single_scale(std::vector<BlockSpec> enc, int channels = 6) {
  NetworkConfig c;
  c.in_channels = 3;
  c.out_channels = 3;
  c.scales = {ScaleSpec{1, channels, std::move(enc), {}, true, false}};
  return c;
}

NetworkConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
  NetworkConfig c;
  c.in_channels = 1 + pick(6);
  c.out_channels = 1 + pick(6);
  const int n_scales = 1 + pick(3);
  for (int s = 0; s < n_scales; ++s) {
    ScaleSpec sp;
    sp.factor = 1 << (2 * s);
    sp.channels = 3 * (1 + pick(4));
    sp.encoder_residual = pick(2) == 1;
    sp.decoder_residual = pick(2) == 1;
    auto random_block = [&]() {
      const int kind = pick(s == n_scales - 1 ? 4 : 3);
      const int k = 1 + 2 * pick(3);
      switch (kind) {
        case 0: return BlockSpec{BlockKind::kGroupConv, pick(2) == 0 ? 1 : 3, k};
        case 1: return BlockSpec{BlockKind::kDepthwiseSeparable, 1, k};
        case 2: return BlockSpec{BlockKind::kPointwise, 1, 1};
        default: return BlockSpec{BlockKind::kHybridFirIir, 1, k};
      }
    };
    for (int b = 0, n = 1 + pick(2); b < n; ++b) sp.encoder.push_back(random_block());
    if (s < n_scales - 1)
      for (int b = 0, n = pick(3); b < n; ++b) sp.decoder.push_back(random_block());
    c.scales.push_back(sp);
  }
  for (int s = 0; s < n_scales - 1; ++s) {
    if (pick(2) == 0) continue;
    const bool dpcm = pick(2) == 1;
    c.skips.push_back(SkipSpec{s, s, 1 + pick(4), dpcm, 6 + pick(7), 12});
  }
  return c;
}

}  // namespace

TEST_SUITE("topology") {
  TEST_CASE("reference parameter count matches a hand count") {
    // entry, blocks and decoder merges per scale plus the head.
    const std::size_t s0 = (6 * 24 + 24) + 4 * ((24 * 8 * 9 + 24) + (24 * 24 + 24));
    const std::size_t s1 = (24 * 48 + 48) + 4 * ((48 * 9 + 48) + (48 * 48 + 48));
    const std::size_t s2 = (48 * 96 + 96) + 2 * ((96 * 3 + 96) + 3 * 96 + (96 * 96 + 96));
    const std::size_t d1 = (48 * 8 + 8) + (8 * 48 + 48) + ((96 + 48) * 48 + 48);
    const std::size_t d0 = (24 * 4 + 4) + (4 * 24 + 24) + ((48 + 24) * 24 + 24);
    const std::size_t head = 24 * 6 + 6;
    const std::size_t expected = s0 + s1 + s2 + d1 + d0 + head;
    CHECK(expected == 56682);
    const NetworkConfig ref = reference_config();
    CHECK(expected_parameter_count(ref) == expected);
    CHECK(build_model(ref, 1).parameter_count() == expected);

    const std::size_t fir = expected - 2 * ((96 * 3 + 96) + 3 * 96) + 2 * (96 * 9 + 96);
    CHECK(expected_parameter_count(with_fir_bottleneck(ref)) == fir);
    CHECK(build_model(with_fir_bottleneck(ref), 1).parameter_count() == fir);
  }

  TEST_CASE("single-scale toy parameter count") {
    NetworkConfig c;
    c.in_channels = c.out_channels = 3;
    c.scales = {ScaleSpec{1, 6, {BlockSpec{BlockKind::kGroupConv, 3, 3}}, {}, true, false}};
    // entry 3*6+6, grouped 6*2*9+6, pointwise 6*6+6, head 6*3+3
    const std::size_t hand = 24 + 114 + 42 + 21;
    CHECK(expected_parameter_count(c) == hand);
    CHECK(build_model(c, 1).parameter_count() == hand);
  }

  TEST_CASE("zeroed output layer gives a constant clamped image") {
    MagicModel<float> m = build_model(reference_config(), 5);
    const Layer* head = nullptr;
    for (const Layer& L : m.network.layers)
      if (L.kind == LayerKind::kConv) head = &L;
    REQUIRE(head != nullptr);
    m.params[static_cast<std::size_t>(head->kernel_param)].tensor.values().setZero();
    m.params[static_cast<std::size_t>(head->bias_param)].tensor.values().setConstant(1.4f);
    const Tensor<float> out = forward(m, test::random_image(Shape{1, 6, 32, 32}, 8));
    CHECK((out.values() == 1.0f).all());
  }

  TEST_CASE("random configs: closed-form count, layer order and forward shape") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 40; ++trial) {
      const NetworkConfig cfg = random_config(rng);
      CAPTURE(cfg.to_text());
      REQUIRE_NOTHROW(cfg.validate());
      MagicModel<float> m = build_model(cfg, static_cast<std::uint64_t>(trial));
      CHECK(m.parameter_count() == expected_parameter_count(cfg));
      const Network& net = m.network;
      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        for (int in : net.layers[i].inputs) CHECK(in < static_cast<int>(i));
        if (net.layers[i].kind == LayerKind::kSkipLine) CHECK(net.layers[i].partner < static_cast<int>(i));
      }
      const int mul = cfg.spatial_multiple();
      const Tensor<float> img = test::random_image(Shape{1, cfg.in_channels, 2 * mul, 3 * mul}, 5);
      const Tensor<float> out = forward(m, img);
      CHECK(out.shape() == Shape{1, cfg.out_channels, 2 * mul, 3 * mul});
      CHECK(out.values().minCoeff() >= 0.0f);
      CHECK(out.values().maxCoeff() <= 1.0f);
      CHECK(NetworkConfig::from_text(cfg.to_text()) == cfg);
    }
  }

  TEST_CASE("config text round trip and hash") {
    const NetworkConfig ref = reference_config();
    const NetworkConfig back = NetworkConfig::from_text(ref.to_text());
    CHECK(back == ref);
    CHECK(back.hash() == ref.hash());
    CHECK(with_fir_bottleneck(ref).hash() != ref.hash());
    CHECK(load_config("magic-ref") == ref);
    CHECK(load_config("fir-ablation") == with_fir_bottleneck(ref));
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), NotFoundError);
    CHECK_THROWS_AS(NetworkConfig::from_text("{not json"), ConfigError);
    CHECK_THROWS_AS(NetworkConfig::from_text("{\"in_channels\": 3}"), ConfigError);
    CHECK_THROWS_AS(NetworkConfig::from_text(R"({"in_channels":3,"out_channels":3,"scales":[{"factor":1,"channels":4,"encoder":[{"kind":"spline"}]}]})"),
                    ConfigError);

    const auto dir = test::temp_dir("cfg");
    save_config(ref, (dir / "c.json").string());
    CHECK(load_config((dir / "c.json").string()) == ref);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("validation rejects malformed topologies") {
    const BlockSpec g3{BlockKind::kGroupConv, 3, 3};
    CHECK_NOTHROW(single_scale({g3}).validate());
    CHECK_THROWS_AS(single_scale({}).validate(), ConfigError);
    NetworkConfig empty;
    CHECK_THROWS_AS(empty.validate(), ConfigError);
    CHECK_THROWS_AS(single_scale({BlockSpec{BlockKind::kGroupConv, 4, 3}}).validate(), ConfigError);
    CHECK_THROWS_AS(single_scale({BlockSpec{BlockKind::kGroupConv, 3, 4}}).validate(), ConfigError);
    CHECK_THROWS_AS(single_scale({BlockSpec{BlockKind::kDepthwiseSeparable, 1, 0}}).validate(), ConfigError);

    NetworkConfig ref = reference_config();
    NetworkConfig c = ref;
    c.scales[1].factor = 8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.scales[0].encoder[0] = BlockSpec{BlockKind::kHybridFirIir, 1, 3};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.scales[2].decoder.push_back(BlockSpec{BlockKind::kPointwise, 1, 1});
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.skips.push_back(SkipSpec{2, 2, 4, false, 8, 12});
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.skips.push_back(c.skips[0]);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.skips[0].to_scale = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.skips[0].dpcm_bits = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.in_channels = 7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ref;
    c.scales.push_back(ScaleSpec{64, 8, {g3}, {}, true, false});
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("forward rejects wrong channels and sizes") {
    const MagicModel<float> m = build_model(reference_config(), 1);
    CHECK_THROWS_AS(forward(m, Tensor<float>(Shape{1, 3, 32, 32})), ConfigError);
    CHECK_THROWS_AS(forward(m, Tensor<float>(Shape{1, 6, 40, 32})), ConfigError);
    CHECK_THROWS_AS(forward(m, Tensor<float>(Shape{1, 6, 32, 24})), ConfigError);
    CHECK_NOTHROW(forward(m, Tensor<float>(Shape{1, 6, 16, 48})));
  }

  TEST_CASE("initialization is seeded") {
    const NetworkConfig ref = reference_config();
    const auto a = build_model(ref, 3), b = build_model(ref, 3), c = build_model(ref, 4);
    bool differs = false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      CHECK((a.params[i].tensor.values() == b.params[i].tensor.values()).all());
      if ((a.params[i].tensor.values() != c.params[i].tensor.values()).any()) differs = true;
    }
    CHECK(differs);
    CHECK(a.param("enc2.b0.iir.w1").tensor.values().isConstant(0.5f));
    CHECK(a.param("enc2.b0.iir.w2").tensor.values().isConstant(0.25f));
    CHECK(a.param("enc2.b0.iir.w3").tensor.values().isConstant(0.25f));
    CHECK_THROWS_AS(a.param("nope"), ConfigError);
  }

  TEST_CASE("image helpers") {
    const Tensor<float> img = test::random_image(Shape{1, 3, 21, 35}, 9);
    const Tensor<float> padded = reflect_pad(img, 16);
    CHECK(padded.shape() == Shape{1, 3, 32, 48});
    CHECK(padded.at(0, 1, 21, 3) == img.at(0, 1, 19, 3));
    CHECK(padded.at(0, 2, 4, 35) == img.at(0, 2, 4, 33));
    CHECK(test::max_abs_diff(crop(padded, 21, 35), img) == 0.0);
    const Tensor<float> six = pad_channels(img, 6);
    CHECK(six.shape().c == 6);
    CHECK(six.at(0, 4, 3, 3) == 0.0f);
    CHECK(test::max_abs_diff(take_channels(six, 3), img) == 0.0);
    CHECK_THROWS_AS(pad_channels(six, 3), ConfigError);
    CHECK_THROWS_AS(take_channels(img, 4), ConfigError);

    MagicModel<float> m = build_model(reference_config(), 2);
    m.active_out = 3;
    const Tensor<float> out = infer_image(m, img);
    CHECK(out.shape() == Shape{1, 3, 21, 35});
  }
}
