#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "magic/tensor.hpp"

namespace magic {

struct NoiseScale {
  double a = 0.0;  ///< signal-independent variance
  double b = 0.0;  ///< variance per unit intensity
};

struct DistortionConfig {
  double sigma_min = 0.5;
  double sigma_max = 2.0;
  std::array<NoiseScale, 2> noise{NoiseScale{1e-4, 1e-3}, NoiseScale{4e-4, 4e-3}};

  void validate() const;
};

struct DatasetPair {
  Tensor<float> input;   ///< distorted R, Y, Y
  Tensor<float> target;  ///< clean RGB
  std::uint64_t seed = 0;
  double sigma = 0.0;
  int noise_index = 0;
};

/// Per-stream generator with a portable uniform and Box-Muller normal, so
/// sampled values do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stateless mixing of a global seed with an index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// R kept; G and B both replaced by Y = 0.299 R + 0.587 G + 0.114 B.
Tensor<float> rgb_to_rcc(const Tensor<float>& rgb);

/// Normalized Gaussian taps truncated at ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);
/// Separable blur with clamp-to-edge borders; sigma <= 0 returns a copy.
Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma);

/// rcc -> Gaussian blur (random sigma) -> per-channel noise with variance
/// a + b * I for one of the two scales -> clamp to [0, 1].
DatasetPair distort(const Tensor<float>& rgb, const DistortionConfig& cfg, std::uint64_t seed);

/// Smooth gradient, sinusoidal texture and a few flat shapes, in muted colors.
Tensor<float> synthetic_image(std::uint64_t seed, int height, int width);

struct Dataset {
  std::vector<DatasetPair> pairs;
  std::uint64_t seed = 0;
  DistortionConfig distortion;
};

Dataset make_synthetic_dataset(int count, int height, int width, std::uint64_t seed, const DistortionConfig& cfg = {});
/// Distorts every image in `dir` (sorted by name).
Dataset make_dataset_from_images(const std::string& dir, std::uint64_t seed, const DistortionConfig& cfg = {},
                                 bool srgb_decode = false);

/// input/NNNN.png, target/NNNN.png and manifest.txt.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Seeded shuffle of 0..n-1 cut into (train, test); test gets
/// round(n * test_fraction) indices, at least one when n > 1.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double test_fraction, std::uint64_t seed);

}  // namespace magic
