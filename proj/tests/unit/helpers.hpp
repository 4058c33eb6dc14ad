#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "magic/network.hpp"

namespace magic::test {

inline Tensor<float> random_image(Shape s, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor<float> t(s);
  for (Eigen::Index i = 0; i < t.values().size(); ++i) t.values()[i] = u(rng);
  return t;
}

/// Replaces every weight by a small random value; IIR feedback stays inside the box.
inline void randomize(MagicModel<float>& m, std::uint64_t seed, float scale = 0.4f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& p : m.params) {
    for (Eigen::Index i = 0; i < p.tensor.values().size(); ++i) p.tensor.values()[i] = scale * u(rng);
    if (p.constraint) {
      for (Eigen::Index i = 0; i < p.tensor.values().size(); ++i) p.tensor.values()[i] = 0.95f * u(rng);
    }
    if (p.name.ends_with(".compress.bias")) p.tensor.values() += 0.5f;
  }
}

inline double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  return (a.values().cast<double>() - b.values().cast<double>()).abs().maxCoeff();
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("magic_test_" + tag + "_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace magic::test
