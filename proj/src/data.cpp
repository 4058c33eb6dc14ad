#include "magic/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "magic/image_io.hpp"
#include "magic/util.hpp"

namespace magic {

void DistortionConfig::validate() const {
  if (!(sigma_min > 0.0) || sigma_max < sigma_min) throw ConfigError("blur sigma range must satisfy 0 < min <= max");
  for (const NoiseScale& n : noise) {
    if (n.a < 0.0 || n.b < 0.0) throw ConfigError("noise coefficients a, b must be non-negative");
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor<float> rgb_to_rcc(const Tensor<float>& rgb) {
  const Shape s = rgb.shape();
  if (s.c != 3) throw InputError("rgb_to_rcc expects 3 channels, got " + std::to_string(s.c));
  Tensor<float> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const double r = rgb.at(n, 0, y, x), g = rgb.at(n, 1, y, x), b = rgb.at(n, 2, y, x);
        const auto luma = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
        out.at(n, 0, y, x) = static_cast<float>(r);
        out.at(n, 1, y, x) = luma;
        out.at(n, 2, y, x) = luma;
      }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
  if (!(sigma > 0.0)) return image;
  const std::vector<double> k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const Shape s = image.shape();
  Tensor<float> out(s);
  std::vector<double> tmp(static_cast<std::size_t>(s.h) * s.w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int i = -r; i <= r; ++i) {
            acc += k[static_cast<std::size_t>(i + r)] * image.at(n, c, y, std::clamp(x + i, 0, s.w - 1));
          }
          tmp[static_cast<std::size_t>(y) * s.w + x] = acc;
        }
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int i = -r; i <= r; ++i) {
            acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, s.h - 1)) * s.w + x];
          }
          out.at(n, c, y, x) = static_cast<float>(acc);
        }
    }
  return out;
}

DatasetPair distort(const Tensor<float>& rgb, const DistortionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  DatasetPair p;
  p.seed = seed;
  p.target = rgb;
  p.sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max);
  p.noise_index = static_cast<int>(rng.below(2));
  const NoiseScale ns = cfg.noise[static_cast<std::size_t>(p.noise_index)];
  Tensor<float> x = gaussian_blur(rgb_to_rcc(rgb), p.sigma);
  for (Eigen::Index i = 0; i < x.values().size(); ++i) {
    const double v = x.values()[i];
    const double var = ns.a + ns.b * std::max(v, 0.0);
    x.values()[i] = static_cast<float>(std::clamp(v + std::sqrt(var) * rng.normal(), 0.0, 1.0));
  }
  p.input = std::move(x);
  return p;
}

namespace {

/// Gray level plus a red/green offset and a smaller blue/green offset; green
/// and blue stay strongly correlated as in camera footage.
std::array<double, 3> random_color(Rng& rng, double lo, double hi, double chroma) {
  const double l = rng.uniform(lo, hi);
  const double red = rng.uniform(-chroma, chroma);
  const double blue = rng.uniform(-chroma / 3.0, chroma / 3.0);
  return {l + red, l, l + blue};
}

}  // namespace

Tensor<float> synthetic_image(std::uint64_t seed, int height, int width) {
  Rng rng(seed);
  Tensor<float> img(Shape{1, 3, height, width});
  const std::array<double, 3> c0 = random_color(rng, 0.05, 0.5, 0.12);
  const std::array<double, 3> c1 = random_color(rng, 0.4, 0.95, 0.12);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  struct Wave {
    double fx, fy, phase, amp;
    std::array<double, 3> mix;
  };
  std::vector<Wave> waves(2 + rng.below(2));
  for (Wave& w : waves) {
    const double f = rng.uniform(0.05, 0.6);
    const double th = rng.uniform(0.0, std::numbers::pi);
    w = Wave{f * std::cos(th), f * std::sin(th), rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.03, 0.1),
             random_color(rng, 0.8, 1.0, 0.15)};
  }
  const double diag = std::hypot(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double t = 0.5 + ((x - width / 2.0) * dx + (y - height / 2.0) * dy) / diag;
      for (int c = 0; c < 3; ++c) {
        double v = c0[static_cast<std::size_t>(c)] + (c1[static_cast<std::size_t>(c)] - c0[static_cast<std::size_t>(c)]) * t;
        for (const Wave& w : waves) v += w.amp * w.mix[static_cast<std::size_t>(c)] * std::sin(w.fx * x + w.fy * y + w.phase);
        img.at(0, c, y, x) = static_cast<float>(v);
      }
    }
  const int shapes = 3 + static_cast<int>(rng.below(4));
  for (int k = 0; k < shapes; ++k) {
    const bool circle = rng.below(2) == 0;
    const double cx = rng.uniform(0.0, width), cy = rng.uniform(0.0, height);
    const double rx = rng.uniform(0.06, 0.25) * width, ry = rng.uniform(0.06, 0.25) * height;
    const std::array<double, 3> col = random_color(rng, 0.05, 0.95, 0.2);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double u = (x + 0.5 - cx) / rx, v = (y + 0.5 - cy) / ry;
        const bool inside = circle ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<float>(col[static_cast<std::size_t>(c)]);
      }
  }
  img.values() = img.values().cwiseMax(0.0f).cwiseMin(1.0f);
  return img;
}

Dataset make_synthetic_dataset(int count, int height, int width, std::uint64_t seed, const DistortionConfig& cfg) {
  if (count < 1) throw ConfigError("dataset count must be positive");
  Dataset ds;
  ds.seed = seed;
  ds.distortion = cfg;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t image_seed = derive_seed(seed, 2 * static_cast<std::uint64_t>(i));
    const std::uint64_t noise_seed = derive_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1);
    ds.pairs.push_back(distort(synthetic_image(image_seed, height, width), cfg, noise_seed));
  }
  return ds;
}

Dataset make_dataset_from_images(const std::string& dir, std::uint64_t seed, const DistortionConfig& cfg,
                                 bool srgb_decode) {
  if (!std::filesystem::is_directory(dir)) throw NotFoundError("image directory '" + dir + "' not found");
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".ppm" || ext == ".PNG" || ext == ".PPM") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no .png/.ppm images in '" + dir + "'");
  Dataset ds;
  ds.seed = seed;
  ds.distortion = cfg;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Tensor<float> rgb = read_image(files[i], ImageReadOptions{srgb_decode});
    if (rgb.shape().c != 3) throw InputError(files[i] + ": expected an RGB image");
    ds.pairs.push_back(distort(rgb, cfg, derive_seed(seed, 2 * i + 1)));
  }
  return ds;
}

namespace {

std::string image_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i << ".png";
  return os.str();
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(std::filesystem::path(dir) / "input");
  std::filesystem::create_directories(std::filesystem::path(dir) / "target");
  std::ostringstream m;
  m << std::setprecision(17);
  m << "magic-dataset 1\n";
  m << "seed " << ds.seed << '\n';
  m << "count " << ds.pairs.size() << '\n';
  m << "sigma_range " << ds.distortion.sigma_min << ' ' << ds.distortion.sigma_max << '\n';
  for (std::size_t k = 0; k < ds.distortion.noise.size(); ++k) {
    m << "noise" << k << ' ' << ds.distortion.noise[k].a << ' ' << ds.distortion.noise[k].b << '\n';
  }
  m << "# index file pair_seed sigma noise_index\n";
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const DatasetPair& p = ds.pairs[i];
    write_image((std::filesystem::path(dir) / "input" / image_name(i)).string(), p.input);
    write_image((std::filesystem::path(dir) / "target" / image_name(i)).string(), p.target);
    m << i << ' ' << image_name(i) << ' ' << p.seed << ' ' << p.sigma << ' ' << p.noise_index << '\n';
  }
  write_file_atomic(std::filesystem::path(dir) / "manifest.txt", m.str());
}

Dataset load_dataset(const std::string& dir) {
  const std::filesystem::path manifest = std::filesystem::path(dir) / "manifest.txt";
  if (!std::filesystem::exists(manifest)) throw NotFoundError("dataset manifest '" + manifest.string() + "' not found");
  std::istringstream is(read_file(manifest));
  Dataset ds;
  std::string key, line;
  std::size_t count = 0;
  is >> key;
  if (key != "magic-dataset") throw InputError(manifest.string() + ": not a dataset manifest");
  std::getline(is, line);
  is >> key >> ds.seed;
  is >> key >> count;
  is >> key >> ds.distortion.sigma_min >> ds.distortion.sigma_max;
  for (auto& n : ds.distortion.noise) is >> key >> n.a >> n.b;
  std::getline(is, line);
  std::getline(is, line);
  if (!is) throw InputError(manifest.string() + ": malformed header");
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t index = 0;
    std::string file;
    DatasetPair p;
    is >> index >> file >> p.seed >> p.sigma >> p.noise_index;
    if (!is) throw InputError(manifest.string() + ": truncated at entry " + std::to_string(i));
    p.input = read_image((std::filesystem::path(dir) / "input" / file).string());
    p.target = read_image((std::filesystem::path(dir) / "target" / file).string());
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double test_fraction, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<std::size_t>(i)], idx[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  int n_test = static_cast<int>(std::lround(n * test_fraction));
  if (n > 1) n_test = std::clamp(n_test, 1, n - 1);
  else n_test = 0;
  std::vector<int> test(idx.begin(), idx.begin() + n_test);
  std::vector<int> train(idx.begin() + n_test, idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

}  // namespace magic
