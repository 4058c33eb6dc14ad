#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "magic/autodiff.hpp"
#include "magic/config.hpp"
#include "magic/kernels.hpp"
#include "magic/tensor.hpp"

namespace magic {

enum class LayerKind { kInput, kConv, kIir, kRelu, kAdd, kConcat, kPool4, kUpsample4, kSkipLine, kClamp01 };

std::string_view layer_kind_name(LayerKind kind);

/// One node of the executable layer sequence. Layers are stored in an order
/// where every input precedes its consumer; a skip line is additionally
/// placed after its `partner`, the decoder-side stream it is merged with.
struct Layer {
  LayerKind kind = LayerKind::kInput;
  std::string name;
  std::vector<int> inputs;
  int scale = 0;   ///< index into NetworkConfig::scales
  int factor = 1;  ///< downsample factor of this layer's output
  int channels = 0;

  ConvSpec conv;
  int kernel_param = -1;
  int bias_param = -1;
  std::array<int, 3> iir_params{-1, -1, -1};

  int skip_index = -1;  ///< kSkipLine: index into NetworkConfig::skips
  int partner = -1;     ///< kSkipLine: layer whose row r releases skip row r
  bool residual = false;  ///< kAdd: residual (true) rather than other merges

  /// Vertical window of the layer in rows of its input.
  int vertical_extent() const;
  std::int64_t macs_per_pixel() const;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { kFanInUniform, kZero, kConstant } init = Init::kZero;
  int fan_in = 1;
  double value = 0.0;
  std::optional<Box> constraint;
};

struct Network {
  std::vector<Layer> layers;
  std::vector<ParamSpec> params;
  int input = 0;
  int output = 0;

  const Layer& layer(const std::string& name) const;
  std::vector<std::vector<int>> consumers() const;
};

/// Expands a validated config into its layer sequence and parameter list.
Network build_network(const NetworkConfig& cfg);

/// Closed-form parameter count evaluated straight from the config.
std::size_t expected_parameter_count(const NetworkConfig& cfg);

/// IIR feedback limit enforced by projection.
inline constexpr double kIirFeedbackLimit = 0.99;

template <typename Scalar>
class MagicModel {
 public:
  NetworkConfig config;
  Network network;
  std::vector<Parameter<Scalar>> params;
  int active_in = 0;   ///< leading input channels carrying data; the rest are zero-filled
  int active_out = 0;  ///< leading output channels that are supervised

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
  }

  Parameter<Scalar>& param(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw ConfigError("no parameter named '" + name + "'");
  }
  const Parameter<Scalar>& param(const std::string& name) const {
    return const_cast<MagicModel*>(this)->param(name);
  }

  void project() {
    for (auto& p : params) p.project();
  }

  void zero_grad() {
    for (auto& p : params) {
      p.tensor.ensure_grad();
      p.tensor.zero_grad();
    }
  }

  template <typename Other>
  MagicModel<Other> cast() const {
    MagicModel<Other> m;
    m.config = config;
    m.network = network;
    m.active_in = active_in;
    m.active_out = active_out;
    for (const auto& p : params) m.params.push_back(p.template cast<Other>());
    return m;
  }
};

/// Deterministic fan-in-uniform initialization from `seed`.
MagicModel<float> build_model(const NetworkConfig& cfg, std::uint64_t seed);

/// How skip lines treat their samples during a forward pass.
enum class SkipMode {
  kConfigured,    ///< quantize + DPCM where the config enables DPCM
  kQuantizeOnly,  ///< quantize where DPCM is enabled but bypass the DPCM loop
  kExact,         ///< no quantization anywhere (gradient verification)
};

SkipCodec skip_codec_for(const SkipSpec& skip, SkipMode mode);

/// Records the whole network into `g` on top of `input`. Parameters are bound
/// so that `g.backward` accumulates into `model.params`.
template <typename Scalar>
NodeId build_forward(Graph<Scalar>& g, MagicModel<Scalar>& model, NodeId input, SkipMode mode = SkipMode::kConfigured) {
  const Network& net = model.network;
  const Shape in_shape = g.value(input).shape();
  if (in_shape.c != model.config.in_channels) {
    throw ConfigError("forward: image channels " + std::to_string(in_shape.c) + " != model in_channels " +
                      std::to_string(model.config.in_channels));
  }
  const int m = model.config.spatial_multiple();
  if (in_shape.h % m != 0 || in_shape.w % m != 0) {
    throw ConfigError("forward: image height/width " + std::to_string(in_shape.h) + "x" + std::to_string(in_shape.w) +
                      " must be multiples of " + std::to_string(m));
  }
  std::vector<NodeId> pid;
  pid.reserve(model.params.size());
  for (auto& p : model.params) pid.push_back(g.param(p));
  std::vector<NodeId> ids(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    auto in = [&](int k) { return ids[static_cast<std::size_t>(L.inputs[static_cast<std::size_t>(k)])]; };
    switch (L.kind) {
      case LayerKind::kInput: ids[i] = input; break;
      case LayerKind::kConv:
        ids[i] = g.conv2d_grouped(in(0), pid[static_cast<std::size_t>(L.kernel_param)],
                                  pid[static_cast<std::size_t>(L.bias_param)], L.conv);
        break;
      case LayerKind::kIir:
        ids[i] = g.iir_vertical(in(0), pid[static_cast<std::size_t>(L.iir_params[0])],
                                pid[static_cast<std::size_t>(L.iir_params[1])],
                                pid[static_cast<std::size_t>(L.iir_params[2])]);
        break;
      case LayerKind::kRelu: ids[i] = g.relu(in(0)); break;
      case LayerKind::kAdd: ids[i] = g.residual_add(in(0), in(1)); break;
      case LayerKind::kConcat: ids[i] = g.concat_channels(in(0), in(1)); break;
      case LayerKind::kPool4: ids[i] = g.maxpool4(in(0)); break;
      case LayerKind::kUpsample4: ids[i] = g.upsample_nearest4(in(0)); break;
      case LayerKind::kSkipLine:
        ids[i] = g.skip_codec(in(0), skip_codec_for(model.config.skips[static_cast<std::size_t>(L.skip_index)], mode));
        break;
      case LayerKind::kClamp01: ids[i] = g.clamp01(in(0)); break;
    }
  }
  return ids[static_cast<std::size_t>(net.output)];
}

/// Whole-frame inference. Height and width must be multiples of 16 (of the
/// coarsest factor); channels must equal in_channels.
template <typename Scalar>
Tensor<Scalar> forward(const MagicModel<Scalar>& model, const Tensor<Scalar>& image,
                       SkipMode mode = SkipMode::kConfigured) {
  Graph<Scalar> g(false);
  // A non-recording graph never writes through parameter pointers.
  auto& mutable_model = const_cast<MagicModel<Scalar>&>(model);
  NodeId out = build_forward(g, mutable_model, g.input(image), mode);
  return g.value(out);
}

/// Zero-fills channels up to `channels`.
Tensor<float> pad_channels(const Tensor<float>& image, int channels);
/// Keeps the first `channels` channels.
Tensor<float> take_channels(const Tensor<float>& image, int channels);
/// Reflect-pads bottom/right so height and width become multiples of `multiple`.
Tensor<float> reflect_pad(const Tensor<float>& image, int multiple);
Tensor<float> crop(const Tensor<float>& image, int height, int width);

/// Image-level inference: channel zero-fill, reflect padding, forward, crop,
/// and only the active output channels returned.
Tensor<float> infer_image(const MagicModel<float>& model, const Tensor<float>& image,
                          SkipMode mode = SkipMode::kConfigured);

}  // namespace magic
