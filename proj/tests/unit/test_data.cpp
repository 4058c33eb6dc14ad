#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "magic/data.hpp"

using namespace magic;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("rcc conversion") {
    const Tensor<float> rgb = test::random_image(Shape{1, 3, 5, 7}, 1);
    const Tensor<float> rcc = rgb_to_rcc(rgb);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) {
        const double luma = 0.299 * rgb.at(0, 0, y, x) + 0.587 * rgb.at(0, 1, y, x) + 0.114 * rgb.at(0, 2, y, x);
        CHECK(rcc.at(0, 0, y, x) == rgb.at(0, 0, y, x));
        CHECK(rcc.at(0, 1, y, x) == doctest::Approx(luma).epsilon(1e-6));
        CHECK(rcc.at(0, 2, y, x) == rcc.at(0, 1, y, x));
      }
    CHECK_THROWS_AS(rgb_to_rcc(Tensor<float>(Shape{1, 4, 2, 2})), InputError);
  }

  TEST_CASE("rcc of pure red and pure green") {
    Tensor<float> rgb(Shape{1, 3, 1, 2});
    rgb.at(0, 0, 0, 0) = 1.0f;
    rgb.at(0, 1, 0, 1) = 1.0f;
    const Tensor<float> rcc = rgb_to_rcc(rgb);
    CHECK(rcc.at(0, 0, 0, 0) == 1.0f);
    CHECK(rcc.at(0, 1, 0, 0) == doctest::Approx(0.299).epsilon(1e-6));
    CHECK(rcc.at(0, 2, 0, 0) == doctest::Approx(0.299).epsilon(1e-6));
    CHECK(rcc.at(0, 0, 0, 1) == 0.0f);
    CHECK(rcc.at(0, 1, 0, 1) == doctest::Approx(0.587).epsilon(1e-6));
    CHECK(rcc.at(0, 2, 0, 1) == doctest::Approx(0.587).epsilon(1e-6));
  }

  TEST_CASE("vanishing blur and noise leave the rcc conversion") {
    DistortionConfig cfg;
    cfg.sigma_min = cfg.sigma_max = 1e-3;
    cfg.noise = {NoiseScale{0.0, 0.0}, NoiseScale{0.0, 0.0}};
    const Tensor<float> rgb = test::random_image(Shape{1, 3, 16, 16}, 12);
    const DatasetPair p = distort(rgb, cfg, 5);
    CHECK(test::max_abs_diff(p.input, rgb_to_rcc(rgb)) == 0.0);
    CHECK(test::max_abs_diff(p.target, rgb) == 0.0);
  }

  TEST_CASE("distorted inputs stay in the unit range") {
    const Tensor<float> rgb = test::random_image(Shape{1, 3, 32, 32}, 13);
    DistortionConfig cfg;
    cfg.noise = {NoiseScale{0.05, 0.05}, NoiseScale{0.05, 0.05}};
    const DatasetPair p = distort(rgb, cfg, 6);
    CHECK(p.input.values().minCoeff() >= 0.0f);
    CHECK(p.input.values().maxCoeff() <= 1.0f);
  }

  TEST_CASE("gaussian blur equals a direct clamped 2-D sum") {
    for (double sigma : {0.5, 1.3, 2.0}) {
      const auto k = gaussian_kernel(sigma);
      CHECK(k.size() == static_cast<std::size_t>(2 * std::ceil(4 * sigma) + 1));
      double sum = 0.0;
      for (double v : k) sum += v;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] == doctest::Approx(k[k.size() - 1 - i]));

      const Tensor<float> img = test::random_image(Shape{1, 2, 9, 13}, 3);
      const Tensor<float> out = gaussian_blur(img, sigma);
      const int r = static_cast<int>(k.size() / 2);
      for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 9; ++y)
          for (int x = 0; x < 13; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i)
              for (int j = -r; j <= r; ++j)
                acc += k[static_cast<std::size_t>(i + r)] * k[static_cast<std::size_t>(j + r)] *
                       img.at(0, c, std::clamp(y + i, 0, 8), std::clamp(x + j, 0, 12));
            CHECK(out.at(0, c, y, x) == doctest::Approx(acc).epsilon(1e-5));
          }
    }
    const Tensor<float> flat = Tensor<float>::constant(Shape{1, 1, 8, 8}, 0.3f);
    CHECK(gaussian_blur(flat, 1.5).values().isApprox(flat.values(), 1e-6f));
    CHECK(gaussian_kernel(0.0).size() == 1);
  }

  TEST_CASE("noise variance follows a + b I") {
    DistortionConfig cfg;
    cfg.sigma_min = cfg.sigma_max = 1.0;
    const Tensor<float> flat = Tensor<float>::constant(Shape{1, 3, 192, 192}, 0.5f);
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const DatasetPair p = distort(flat, cfg, seed);
      const NoiseScale ns = cfg.noise[static_cast<std::size_t>(p.noise_index)];
      const Eigen::ArrayXd d = p.input.values().cast<double>() - 0.5;
      const double mean = d.mean();
      const double var = (d - mean).square().mean();
      CHECK(std::abs(mean) < 1e-3);
      CHECK(var == doctest::Approx(ns.a + ns.b * 0.5).epsilon(0.05));
      CHECK(p.sigma == 1.0);
      CHECK(p.target.values().isApprox(flat.values()));
    }
  }

  TEST_CASE("distortion and synthesis are seeded") {
    const Tensor<float> a = synthetic_image(9, 48, 64);
    CHECK(a.shape() == Shape{1, 3, 48, 64});
    CHECK(a.values().minCoeff() >= 0.0f);
    CHECK(a.values().maxCoeff() <= 1.0f);
    CHECK((a.values() == synthetic_image(9, 48, 64).values()).all());
    CHECK((a.values() != synthetic_image(10, 48, 64).values()).any());
    const DatasetPair p = distort(a, {}, 4), q = distort(a, {}, 4), r = distort(a, {}, 5);
    CHECK((p.input.values() == q.input.values()).all());
    CHECK((p.input.values() != r.input.values()).any());
    CHECK(p.sigma >= 0.5);
    CHECK(p.sigma <= 2.0);
    DistortionConfig bad;
    bad.sigma_min = 3.0;
    CHECK_THROWS_AS(distort(a, bad, 1), ConfigError);
  }

  TEST_CASE("dataset round trip is byte-stable") {
    const Dataset ds = make_synthetic_dataset(3, 32, 48, 7);
    const auto d1 = test::temp_dir("ds1"), d2 = test::temp_dir("ds2");
    write_dataset(ds, d1.string());
    write_dataset(make_synthetic_dataset(3, 32, 48, 7), d2.string());
    for (const char* f : {"manifest.txt", "input/0000.png", "target/0002.png"}) CHECK(slurp(d1 / f) == slurp(d2 / f));
    const Dataset back = load_dataset(d1.string());
    REQUIRE(back.pairs.size() == 3);
    CHECK(back.seed == 7);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.pairs[i].seed == ds.pairs[i].seed);
      CHECK(back.pairs[i].sigma == ds.pairs[i].sigma);
      CHECK(test::max_abs_diff(back.pairs[i].input, ds.pairs[i].input) <= 0.5 / 65535 + 1e-7);
      CHECK(test::max_abs_diff(back.pairs[i].target, ds.pairs[i].target) <= 0.5 / 65535 + 1e-7);
    }
    CHECK_THROWS_AS(load_dataset((d1 / "missing").string()), NotFoundError);
    CHECK_THROWS_AS(make_synthetic_dataset(0, 32, 32, 1), ConfigError);
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
  }

  TEST_CASE("split is a seeded partition") {
    for (int n : {2, 5, 48, 100}) {
      const auto [train, test] = split_indices(n, 0.2, 7);
      CHECK(test.size() == static_cast<std::size_t>(std::clamp(static_cast<int>(std::lround(n * 0.2)), 1, n - 1)));
      std::vector<int> all(train);
      all.insert(all.end(), test.begin(), test.end());
      std::sort(all.begin(), all.end());
      for (int i = 0; i < n; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
      CHECK(split_indices(n, 0.2, 7).second == test);
    }
    CHECK(split_indices(48, 0.2, 7).second != split_indices(48, 0.2, 8).second);
    CHECK(split_indices(1, 0.5, 1).second.empty());
  }

  TEST_CASE("rng moments") {
    Rng rng(3);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double v = rng.normal();
      s += v;
      s2 += v * v;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  }
}
