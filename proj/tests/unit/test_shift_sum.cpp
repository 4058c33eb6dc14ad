#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "magic/cost_model.hpp"
#include "magic/metrics.hpp"

using namespace magic;

namespace {

// Exhaustive search over sign patterns of each exponent: -1, 0 or +1.
double brute_force_error(double w, int terms, int min_exp) {
  const int n = 1 - min_exp;
  double best = std::abs(w);
  std::vector<int> digit(static_cast<std::size_t>(n), 0);
  long total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  for (long code = 0; code < total; ++code) {
    long c = code;
    int used = 0;
    double v = 0.0;
    for (int i = 0; i < n; ++i, c /= 3) {
      const int d = static_cast<int>(c % 3) - 1;
      if (d != 0) {
        ++used;
        v += d * std::ldexp(1.0, -i);
      }
    }
    if (used <= terms) best = std::min(best, std::abs(v - w));
  }
  return best;
}

}  // namespace

TEST_SUITE("shift_sum") {
  TEST_CASE("matches exhaustive search") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int terms = 1; terms <= 3; ++terms) {
      for (int i = 0; i < 150; ++i) {
        const double w = u(rng);
        const ShiftSum s = shift_sum_approx(w, terms, -7);
        CAPTURE(w);
        CHECK(s.abs_error == brute_force_error(w, terms, -7));
        CHECK(s.terms.size() <= static_cast<std::size_t>(terms));
        double v = 0.0;
        std::set<int> exps;
        for (const ShiftSumTerm& t : s.terms) {
          v += t.sign * std::ldexp(1.0, t.exponent);
          CHECK(t.exponent <= 0);
          CHECK(t.exponent >= -7);
          exps.insert(t.exponent);
        }
        CHECK(exps.size() == s.terms.size());
        CHECK(v == s.value);
      }
    }
  }

  TEST_CASE("full exponent range against exhaustive search") {
    for (double w : {0.7, -0.3141, 0.999}) {
      CAPTURE(w);
      CHECK(shift_sum_approx(w, 2, -15).abs_error == brute_force_error(w, 2, -15));
    }
  }

  TEST_CASE("error is non-increasing in term count") {
    for (int i = 0; i <= 20000; ++i) {
      const double w = -1.0 + 2.0 * i / 20000.0;
      double prev = shift_sum_approx(w, 0).abs_error;
      for (int terms = 1; terms <= 3; ++terms) {
        const double e = shift_sum_approx(w, terms).abs_error;
        CHECK(e <= prev);
        prev = e;
      }
    }
  }

  TEST_CASE("exact powers and ties") {
    CHECK(shift_sum_approx(0.5, 1).abs_error == 0.0);
    CHECK(shift_sum_approx(-0.375, 2).abs_error == 0.0);
    CHECK(shift_sum_approx(-0.375, 2).terms.size() == 2);
    CHECK(shift_sum_approx(0.0, 3).terms.empty());
    CHECK(shift_sum_approx(1.0, 3).terms.size() == 1);
    // 0.75 is both 2^-1 + 2^-2 and 2^0 - 2^-2; the smaller terms win.
    const ShiftSum s = shift_sum_approx(0.75, 2);
    REQUIRE(s.terms.size() == 2);
    CHECK(s.terms[0].exponent == -1);
    CHECK(s.terms[0].sign == 1);
    CHECK(s.terms[1].exponent == -2);
    CHECK(s.terms[1].sign == 1);
    CHECK(s.abs_error == 0.0);
    const ShiftSum h = shift_sum_approx(0.5, 3);
    REQUIRE(h.terms.size() == 1);
    CHECK(h.terms[0].exponent == -1);
    CHECK_THROWS_AS(shift_sum_approx(1.5, 2), InputError);
    CHECK_THROWS_AS(shift_sum_approx(0.5, 4), ConfigError);
    CHECK_THROWS_AS(shift_sum_approx(0.5, 2, 1), ConfigError);
  }

  TEST_CASE("model quantization keeps biases and IIR bounds") {
    MagicModel<float> m = build_model(reference_config(), 1);
    test::randomize(m, 3);
    const MagicModel<float> q = shift_sum_quantize(m, 3);
    for (const Layer& L : m.network.layers) {
      if (L.kind != LayerKind::kConv) continue;
      const auto& b0 = m.params[static_cast<std::size_t>(L.bias_param)].tensor.values();
      const auto& b1 = q.params[static_cast<std::size_t>(L.bias_param)].tensor.values();
      CHECK((b0 == b1).all());
      const auto& k0 = m.params[static_cast<std::size_t>(L.kernel_param)].tensor.values();
      const auto& k1 = q.params[static_cast<std::size_t>(L.kernel_param)].tensor.values();
      const double peak = k0.abs().maxCoeff();
      CHECK((k0 - k1).abs().maxCoeff() <= peak / 8.0);
    }
    for (const auto& p : q.params)
      if (p.constraint) CHECK(p.tensor.values().abs().maxCoeff() <= kIirFeedbackLimit + 1e-6);
    const Tensor<float> img = test::random_image(Shape{1, 6, 32, 32}, 2);
    const QuantizedDelta d1 = quantized_forward_delta(m, {img}, 1);
    const QuantizedDelta d3 = quantized_forward_delta(m, {img}, 3);
    const QuantizedDelta d2 = quantized_forward_delta(m, {img}, 2);
    CHECK(d3.per_image.size() == 1);
    CHECK(d1.psnr <= d2.psnr);
    CHECK(d2.psnr <= d3.psnr);
    CHECK(d3.psnr > d1.psnr);
  }

  TEST_CASE("power-of-two weights are left exact") {
    MagicModel<float> m = build_model(reference_config(), 1);
    std::mt19937_64 rng(8);
    for (const Layer& L : m.network.layers) {
      std::vector<int> ids;
      if (L.kind == LayerKind::kConv) ids.push_back(L.kernel_param);
      if (L.kind == LayerKind::kIir) ids.assign(L.iir_params.begin(), L.iir_params.end());
      for (int id : ids) {
        auto& v = m.params[static_cast<std::size_t>(id)].tensor.values();
        for (Eigen::Index i = 0; i < v.size(); ++i)
          v[i] = static_cast<float>((rng() % 2 ? 1.0 : -1.0) * std::ldexp(1.0, -1 - static_cast<int>(rng() % 6)));
      }
    }
    const QuantizedDelta d = quantized_forward_delta(m, {test::random_image(Shape{1, 6, 32, 32}, 1)}, 1);
    CHECK(d.psnr == kPsnrCap);
  }
}
