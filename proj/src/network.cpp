#include "magic/network.hpp"

#include <cmath>
#include <random>

namespace magic {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv: return "conv";
    case LayerKind::kIir: return "iir";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAdd: return "add";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kPool4: return "maxpool4";
    case LayerKind::kUpsample4: return "upsample4";
    case LayerKind::kSkipLine: return "skip_line";
    case LayerKind::kClamp01: return "clamp01";
  }
  return "?";
}

int Layer::vertical_extent() const {
  switch (kind) {
    case LayerKind::kConv: return conv.kh;
    case LayerKind::kPool4: return 4;
    default: return 1;
  }
}

std::int64_t Layer::macs_per_pixel() const {
  switch (kind) {
    case LayerKind::kConv: return conv.macs_per_pixel();
    case LayerKind::kIir: return 3LL * channels;
    default: return 0;
  }
}

const Layer& Network::layer(const std::string& name) const {
  for (const Layer& l : layers)
    if (l.name == name) return l;
  throw ConfigError("no layer named '" + name + "'");
}

std::vector<std::vector<int>> Network::consumers() const {
  std::vector<std::vector<int>> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (int in : layers[i].inputs) out[static_cast<std::size_t>(in)].push_back(static_cast<int>(i));
  return out;
}

namespace {

class Builder {
 public:
  explicit Builder(const NetworkConfig& cfg) : cfg_(cfg) {}

  Network build() {
    int x = add_layer(Layer{.kind = LayerKind::kInput, .name = "input", .channels = cfg_.in_channels});
    net_.input = x;
    std::vector<int> taps(cfg_.scales.size(), -1);
    int prev_channels = cfg_.in_channels;
    for (int s = 0; s <= cfg_.coarsest(); ++s) {
      const ScaleSpec& spec = cfg_.scales[static_cast<std::size_t>(s)];
      scale_ = s;
      const std::string p = "enc" + std::to_string(s);
      x = pointwise(p + ".entry", x, prev_channels, spec.channels);
      x = unary(LayerKind::kRelu, p + ".entry_relu", x);
      for (std::size_t b = 0; b < spec.encoder.size(); ++b) {
        x = block(p + ".b" + std::to_string(b), x, spec.encoder[b], spec.channels, spec.encoder_residual);
      }
      taps[static_cast<std::size_t>(s)] = x;
      prev_channels = spec.channels;
      if (s < cfg_.coarsest()) {
        x = unary(LayerKind::kPool4, "pool" + std::to_string(s), x);
        net_.layers.back().factor = spec.factor * 4;
        net_.layers.back().scale = s + 1;
      }
    }
    for (int s = cfg_.coarsest() - 1; s >= 0; --s) {
      const ScaleSpec& spec = cfg_.scales[static_cast<std::size_t>(s)];
      scale_ = s;
      const std::string p = "dec" + std::to_string(s);
      x = unary(LayerKind::kUpsample4, "up" + std::to_string(s), x);
      const int up_channels = prev_channels;
      int fuse_in = up_channels;
      if (const SkipSpec* sk = cfg_.skip_at(s)) {
        const std::string q = "skip" + std::to_string(s);
        const int skip_index = static_cast<int>(sk - cfg_.skips.data());
        int c = pointwise(q + ".compress", taps[static_cast<std::size_t>(s)], spec.channels, sk->compressed_channels, 0.5);
        Layer line{.kind = LayerKind::kSkipLine, .name = q + ".line", .inputs = {c}, .channels = sk->compressed_channels};
        line.skip_index = skip_index;
        line.partner = x;
        c = add_layer(line);
        c = pointwise(q + ".decompress", c, sk->compressed_channels, spec.channels);
        c = unary(LayerKind::kRelu, q + ".relu", c);
        x = add_layer(Layer{.kind = LayerKind::kConcat, .name = p + ".concat", .inputs = {x, c},
                            .channels = up_channels + spec.channels});
        fuse_in = up_channels + spec.channels;
      }
      x = pointwise(p + ".fuse", x, fuse_in, spec.channels);
      x = unary(LayerKind::kRelu, p + ".fuse_relu", x);
      for (std::size_t b = 0; b < spec.decoder.size(); ++b) {
        x = block(p + ".b" + std::to_string(b), x, spec.decoder[b], spec.channels, spec.decoder_residual);
      }
      prev_channels = spec.channels;
    }
    scale_ = 0;
    x = pointwise("head", x, cfg_.scales[0].channels, cfg_.out_channels);
    x = unary(LayerKind::kClamp01, "output", x);
    net_.output = x;
    return std::move(net_);
  }

 private:
  int add_layer(Layer l) {
    l.scale = scale_;
    l.factor = cfg_.scales[static_cast<std::size_t>(scale_)].factor;
    net_.layers.push_back(std::move(l));
    return static_cast<int>(net_.layers.size()) - 1;
  }

  int unary(LayerKind kind, const std::string& name, int x) {
    return add_layer(Layer{.kind = kind, .name = name, .inputs = {x}, .channels = net_.layers[static_cast<std::size_t>(x)].channels});
  }

  int add_param(const std::string& name, Shape shape, ParamSpec::Init init, int fan_in, double value = 0.0,
                std::optional<Box> box = std::nullopt) {
    net_.params.push_back(ParamSpec{name, shape, init, fan_in, value, box});
    return static_cast<int>(net_.params.size()) - 1;
  }

  int conv(const std::string& name, int x, ConvSpec spec, double bias_value = 0.0) {
    spec.validate();
    Layer l{.kind = LayerKind::kConv, .name = name, .inputs = {x}, .channels = spec.out_channels};
    l.conv = spec;
    const int fan_in = spec.in_per_group() * spec.kh * spec.kw;
    l.kernel_param = add_param(name + ".weight", Shape{spec.out_channels, spec.in_per_group(), spec.kh, spec.kw},
                               ParamSpec::Init::kFanInUniform, fan_in);
    l.bias_param = add_param(name + ".bias", Shape{1, spec.out_channels, 1, 1},
                             bias_value == 0.0 ? ParamSpec::Init::kZero : ParamSpec::Init::kConstant, fan_in, bias_value);
    return add_layer(std::move(l));
  }

  int pointwise(const std::string& name, int x, int cin, int cout, double bias_value = 0.0) {
    return conv(name, x, ConvSpec{cin, cout, 1, 1, 1}, bias_value);
  }

  int iir(const std::string& name, int x, int channels) {
    Layer l{.kind = LayerKind::kIir, .name = name, .inputs = {x}, .channels = channels};
    const Shape s{1, channels, 1, 1};
    l.iir_params = {
        add_param(name + ".w1", s, ParamSpec::Init::kConstant, 1, 0.5, Box{-kIirFeedbackLimit, kIirFeedbackLimit}),
        add_param(name + ".w2", s, ParamSpec::Init::kConstant, 1, 0.25),
        add_param(name + ".w3", s, ParamSpec::Init::kConstant, 1, 0.25),
    };
    return add_layer(std::move(l));
  }

  int block(const std::string& p, int x, const BlockSpec& b, int channels, bool residual) {
    int y = x;
    switch (b.kind) {
      case BlockKind::kGroupConv:
        y = conv(p + ".spatial", y, ConvSpec{channels, channels, b.groups, b.k, b.k});
        y = unary(LayerKind::kRelu, p + ".relu1", y);
        break;
      case BlockKind::kDepthwiseSeparable:
        y = conv(p + ".spatial", y, ConvSpec{channels, channels, channels, b.k, b.k});
        y = unary(LayerKind::kRelu, p + ".relu1", y);
        break;
      case BlockKind::kHybridFirIir:
        y = conv(p + ".hfir", y, ConvSpec{channels, channels, channels, 1, b.k});
        y = iir(p + ".iir", y, channels);
        y = unary(LayerKind::kRelu, p + ".relu1", y);
        break;
      case BlockKind::kPointwise:
        break;
    }
    y = pointwise(p + ".pw", y, channels, channels);
    if (residual) {
      Layer add{.kind = LayerKind::kAdd, .name = p + ".add", .inputs = {x, y}, .channels = channels};
      add.residual = true;
      y = add_layer(add);
    }
    return unary(LayerKind::kRelu, p + ".relu2", y);
  }

  const NetworkConfig& cfg_;
  Network net_;
  int scale_ = 0;
};

std::size_t block_params(const BlockSpec& b, std::size_t c) {
  const std::size_t k = static_cast<std::size_t>(b.k);
  const std::size_t pw = c * c + c;
  switch (b.kind) {
    case BlockKind::kGroupConv: return c * (c / static_cast<std::size_t>(b.groups)) * k * k + c + pw;
    case BlockKind::kDepthwiseSeparable: return c * k * k + c + pw;
    case BlockKind::kHybridFirIir: return c * k + c + 3 * c + pw;
    case BlockKind::kPointwise: return pw;
  }
  return 0;
}

}  // namespace

Network build_network(const NetworkConfig& cfg) {
  cfg.validate();
  return Builder(cfg).build();
}

std::size_t expected_parameter_count(const NetworkConfig& cfg) {
  cfg.validate();
  auto pw = [](std::size_t cin, std::size_t cout) { return cin * cout + cout; };
  std::size_t total = 0;
  std::size_t prev = static_cast<std::size_t>(cfg.in_channels);
  for (const ScaleSpec& s : cfg.scales) {
    const std::size_t c = static_cast<std::size_t>(s.channels);
    total += pw(prev, c);
    for (const BlockSpec& b : s.encoder) total += block_params(b, c);
    for (const BlockSpec& b : s.decoder) total += block_params(b, c);
    prev = c;
  }
  for (int s = 0; s < cfg.coarsest(); ++s) {
    const std::size_t c = static_cast<std::size_t>(cfg.scales[static_cast<std::size_t>(s)].channels);
    const std::size_t up = static_cast<std::size_t>(cfg.scales[static_cast<std::size_t>(s) + 1].channels);
    if (const SkipSpec* sk = cfg.skip_at(s)) {
      const std::size_t k = static_cast<std::size_t>(sk->compressed_channels);
      total += pw(c, k) + pw(k, c) + pw(up + c, c);
    } else {
      total += pw(up, c);
    }
  }
  total += pw(static_cast<std::size_t>(cfg.scales[0].channels), static_cast<std::size_t>(cfg.out_channels));
  return total;
}

MagicModel<float> build_model(const NetworkConfig& cfg, std::uint64_t seed) {
  MagicModel<float> m;
  m.config = cfg;
  m.network = build_network(cfg);
  m.active_in = cfg.in_channels;
  m.active_out = cfg.out_channels;
  std::mt19937_64 rng(seed);
  for (const ParamSpec& ps : m.network.params) {
    Tensor<float> t(ps.shape);
    switch (ps.init) {
      case ParamSpec::Init::kFanInUniform: {
        const double bound = std::sqrt(6.0 / ps.fan_in);
        for (Eigen::Index i = 0; i < t.values().size(); ++i) {
          const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          t.values()[i] = static_cast<float>((2.0 * u - 1.0) * bound);
        }
        break;
      }
      case ParamSpec::Init::kZero: break;
      case ParamSpec::Init::kConstant: t.values().setConstant(static_cast<float>(ps.value)); break;
    }
    m.params.push_back(Parameter<float>{ps.name, std::move(t), true, ps.constraint});
  }
  return m;
}

SkipCodec skip_codec_for(const SkipSpec& skip, SkipMode mode) {
  SkipCodec c;
  c.dpcm_cfg = skip.dpcm();
  if (!skip.dpcm_enabled || mode == SkipMode::kExact) return c;
  c.quantize = true;
  c.dpcm = mode == SkipMode::kConfigured;
  return c;
}

Tensor<float> pad_channels(const Tensor<float>& image, int channels) {
  const Shape s = image.shape();
  if (s.c > channels) throw ConfigError("image has " + std::to_string(s.c) + " channels, model accepts at most " + std::to_string(channels));
  if (s.c == channels) return image;
  Tensor<float> out(Shape{s.n, channels, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n)
    out.values().segment(out.offset(n, 0, 0, 0), s.c * plane) = image.values().segment(image.offset(n, 0, 0, 0), s.c * plane);
  return out;
}

Tensor<float> take_channels(const Tensor<float>& image, int channels) {
  const Shape s = image.shape();
  if (channels > s.c) throw ConfigError("cannot take " + std::to_string(channels) + " of " + std::to_string(s.c) + " channels");
  Tensor<float> out(Shape{s.n, channels, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n)
    out.values().segment(out.offset(n, 0, 0, 0), channels * plane) = image.values().segment(image.offset(n, 0, 0, 0), channels * plane);
  return out;
}

namespace {
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace

Tensor<float> reflect_pad(const Tensor<float>& image, int multiple) {
  const Shape s = image.shape();
  const int h = (s.h + multiple - 1) / multiple * multiple;
  const int w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w) return image;
  Tensor<float> out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = image.at(n, c, reflect_index(y, s.h), reflect_index(x, s.w));
  return out;
}

Tensor<float> crop(const Tensor<float>& image, int height, int width) {
  const Shape s = image.shape();
  if (height > s.h || width > s.w) throw ConfigError("crop larger than image");
  if (height == s.h && width == s.w) return image;
  Tensor<float> out(Shape{s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y)
        std::copy_n(image.row(n, c, y), width, out.row(n, c, y));
  return out;
}

Tensor<float> infer_image(const MagicModel<float>& model, const Tensor<float>& image, SkipMode mode) {
  const Shape s = image.shape();
  Tensor<float> in = reflect_pad(pad_channels(image, model.config.in_channels), model.config.spatial_multiple());
  Tensor<float> out = forward(model, in, mode);
  return take_channels(crop(out, s.h, s.w), model.active_out);
}

}  // namespace magic
