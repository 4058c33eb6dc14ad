#pragma once

// Tape-based reverse-mode differentiation for the fixed operator set of the
// network: grouped convolution, vertical IIR, 4x4 max-pool, nearest 4x
// upsample, ReLU, residual add, channel concat, output clamp, skip-line codec
// and a few scalar reductions used as losses.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "magic/errors.hpp"
#include "magic/kernels.hpp"
#include "magic/tensor.hpp"

namespace magic {

struct NodeId {
  std::size_t index = 0;
  bool operator==(const NodeId&) const = default;
};

template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;
  using Array = typename TensorT::Array;

  /// With `record` false no backward closures are kept (inference only).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Mix ReLU masks, clamp masks and pooling argmaxes into a signature so a
  /// finite-difference probe can tell when it crossed a kink.
  void track_nonsmooth(bool on) { track_ = on; }
  std::uint64_t nonsmooth_signature() const { return signature_; }

  NodeId input(TensorT value) { return push(std::move(value), false); }

  NodeId param(Parameter<Scalar>& p) {
    NodeId id = push(TensorT(p.tensor.shape(), p.tensor.values()), record_ && p.trainable);
    nodes_[id.index].param = &p;
    return id;
  }

  /// Binds a parameter as a constant (no gradient is tracked for it).
  NodeId param(const Parameter<Scalar>& p) { return push(TensorT(p.tensor.shape(), p.tensor.values()), false); }

  const TensorT& value(NodeId id) const { return nodes_.at(id.index).value; }
  const Array& gradient(NodeId id) const { return nodes_.at(id.index).grad; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return tape_.size(); }

  NodeId conv2d_grouped(NodeId x, NodeId kernel, NodeId bias, const ConvSpec& spec) {
    spec.validate();
    const Shape xs = value(x).shape();
    if (xs.c != spec.in_channels) {
      throw ConfigError("conv2d_grouped: input channels " + std::to_string(xs.c) + " != spec in_channels " +
                        std::to_string(spec.in_channels));
    }
    if (value(kernel).numel() != spec.kernel_size()) {
      throw ConfigError("conv2d_grouped: kernel elements " + std::to_string(value(kernel).numel()) +
                        " != out_channels*in_per_group*kh*kw " + std::to_string(spec.kernel_size()));
    }
    if (value(bias).numel() != static_cast<std::size_t>(spec.out_channels)) {
      throw ConfigError("conv2d_grouped: bias elements " + std::to_string(value(bias).numel()) +
                        " != out_channels " + std::to_string(spec.out_channels));
    }
    TensorT out(Shape{xs.n, spec.out_channels, xs.h, xs.w});
    {
      const TensorT& in = value(x);
      const Scalar* k = value(kernel).data();
      const Scalar* b = value(bias).data();
      const int py = spec.pad_y();
      for (int n = 0; n < xs.n; ++n) {
        for (int y = 0; y < xs.h; ++y) {
          kernels::conv_row<Scalar>(
              spec, k, b, xs.w,
              [&](int ky, int c) -> const Scalar* {
                const int yy = y + ky - py;
                return (yy < 0 || yy >= xs.h) ? nullptr : in.row(n, c, yy);
              },
              [&](int co) { return out.row(n, co, y); });
        }
      }
    }
    NodeId id = push(std::move(out), needs(x) || needs(kernel) || needs(bias));
    record([this, x, kernel, bias, spec, id]() {
      Node& xn = nodes_[x.index];
      Node& kn = nodes_[kernel.index];
      Node& bn = nodes_[bias.index];
      const Node& on = nodes_[id.index];
      const Shape xs = xn.value.shape();
      const int py = spec.pad_y();
      Scalar* gk = kn.requires_grad ? kn.grad.data() : nullptr;
      Scalar* gb = bn.requires_grad ? bn.grad.data() : nullptr;
      for (int n = 0; n < xs.n; ++n) {
        for (int y = 0; y < xs.h; ++y) {
          auto rows = [&](int ky, int c) -> const Scalar* {
            const int yy = y + ky - py;
            return (yy < 0 || yy >= xs.h) ? nullptr : xn.value.row(n, c, yy);
          };
          auto grad_rows = [&](int ky, int c) -> Scalar* {
            const int yy = y + ky - py;
            if (!xn.requires_grad || yy < 0 || yy >= xs.h) return nullptr;
            return xn.grad.data() + xn.value.offset(n, c, yy, 0);
          };
          auto grad_out = [&](int co) -> const Scalar* { return on.grad.data() + on.value.offset(n, co, y, 0); };
          kernels::conv_row_backward<Scalar>(spec, kn.value.data(), xs.w, rows, grad_out, grad_rows, gk, gb);
        }
      }
    });
    return id;
  }

  NodeId iir_vertical(NodeId x, NodeId w1, NodeId w2, NodeId w3) {
    const Shape xs = value(x).shape();
    for (NodeId w : {w1, w2, w3}) {
      if (value(w).numel() != static_cast<std::size_t>(xs.c)) {
        throw ConfigError("iir_vertical: weight elements " + std::to_string(value(w).numel()) +
                          " != input channels " + std::to_string(xs.c));
      }
    }
    TensorT out(xs);
    {
      const TensorT& in = value(x);
      Array carry(xs.w);
      for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
          carry.setZero();
          const Scalar a = value(w1).data()[c], b = value(w2).data()[c], d = value(w3).data()[c];
          for (int y = 0; y < xs.h; ++y) kernels::iir_row(in.row(n, c, y), carry.data(), out.row(n, c, y), a, b, d, xs.w);
        }
      }
    }
    NodeId id = push(std::move(out), needs(x) || needs(w1) || needs(w2) || needs(w3));
    record([this, x, w1, w2, w3, id]() {
      Node& xn = nodes_[x.index];
      Node& n1 = nodes_[w1.index];
      Node& n2 = nodes_[w2.index];
      Node& n3 = nodes_[w3.index];
      const Node& on = nodes_[id.index];
      const Shape xs = xn.value.shape();
      const int W = xs.w;
      Array dh_next(W), dh(W);
      for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
          const Scalar a = n1.value.data()[c], b = n2.value.data()[c], d = n3.value.data()[c];
          Scalar g1 = 0, g2 = 0, g3 = 0;
          dh_next.setZero();
          for (int y = xs.h - 1; y >= 0; --y) {
            const std::size_t off = on.value.offset(n, c, y, 0);
            dh = kernels::ConstRowMap<Scalar>(on.grad.data() + off, W) + a * dh_next;
            kernels::ConstRowMap<Scalar> xr(xn.value.data() + off, W);
            g3 += (dh * xr).sum();
            if (y > 0) {
              const std::size_t prev = on.value.offset(n, c, y - 1, 0);
              g1 += (dh * kernels::ConstRowMap<Scalar>(on.value.data() + prev, W)).sum();
              g2 += (dh * kernels::ConstRowMap<Scalar>(xn.value.data() + prev, W)).sum();
            }
            if (xn.requires_grad) {
              kernels::RowMap<Scalar>(xn.grad.data() + off, W) += d * dh + b * dh_next;
            }
            dh_next = dh;
          }
          if (n1.requires_grad) n1.grad[c] += g1;
          if (n2.requires_grad) n2.grad[c] += g2;
          if (n3.requires_grad) n3.grad[c] += g3;
        }
      }
    });
    return id;
  }

  NodeId maxpool4(NodeId x) {
    const Shape xs = value(x).shape();
    if (xs.h % 4 != 0 || xs.w % 4 != 0) {
      throw ConfigError("maxpool4: spatial size " + std::to_string(xs.h) + "x" + std::to_string(xs.w) +
                          " not divisible by 4");
    }
    const Shape os{xs.n, xs.c, xs.h / 4, xs.w / 4};
    TensorT out(os);
    std::vector<std::uint8_t> argmax(os.numel());
    {
      const TensorT& in = value(x);
      for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
          for (int yo = 0; yo < os.h; ++yo) {
            Scalar* acc = out.row(n, c, yo);
            for (int k = 0; k < 4; ++k) kernels::pool4_accumulate_row(in.row(n, c, 4 * yo + k), acc, xs.w, k == 0);
            for (int xo = 0; xo < os.w; ++xo) {
              const std::size_t oi = out.offset(n, c, yo, xo);
              std::uint8_t best = 0;
              for (std::uint8_t j = 0; j < 16; ++j) {
                if (in.at(n, c, 4 * yo + j / 4, 4 * xo + j % 4) == acc[xo]) {
                  best = j;
                  break;
                }
              }
              argmax[oi] = best;
              if (track_) mix(best);
            }
          }
        }
      }
    }
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id, argmax = std::move(argmax)]() {
      Node& xn = nodes_[x.index];
      const Node& on = nodes_[id.index];
      if (!xn.requires_grad) return;
      const Shape os = on.value.shape();
      for (int n = 0; n < os.n; ++n)
        for (int c = 0; c < os.c; ++c)
          for (int yo = 0; yo < os.h; ++yo)
            for (int xo = 0; xo < os.w; ++xo) {
              const std::size_t oi = on.value.offset(n, c, yo, xo);
              const int j = argmax[oi];
              xn.grad[static_cast<Eigen::Index>(xn.value.offset(n, c, 4 * yo + j / 4, 4 * xo + j % 4))] += on.grad[oi];
            }
    });
    return id;
  }

  NodeId upsample_nearest4(NodeId x) {
    const Shape xs = value(x).shape();
    TensorT out(Shape{xs.n, xs.c, xs.h * 4, xs.w * 4});
    {
      const TensorT& in = value(x);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
          for (int y = 0; y < xs.h * 4; ++y) kernels::upsample4_row(in.row(n, c, y / 4), out.row(n, c, y), xs.w);
    }
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id]() {
      Node& xn = nodes_[x.index];
      const Node& on = nodes_[id.index];
      if (!xn.requires_grad) return;
      const Shape os = on.value.shape();
      for (int n = 0; n < os.n; ++n)
        for (int c = 0; c < os.c; ++c)
          for (int y = 0; y < os.h; ++y)
            for (int xx = 0; xx < os.w; ++xx)
              xn.grad[static_cast<Eigen::Index>(xn.value.offset(n, c, y / 4, xx / 4))] +=
                  on.grad[static_cast<Eigen::Index>(on.value.offset(n, c, y, xx))];
    });
    return id;
  }

  NodeId relu(NodeId x) {
    TensorT out(value(x).shape(), value(x).values().cwiseMax(Scalar(0)));
    if (track_) mix_mask(value(x).values() > Scalar(0));
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id]() {
      Node& xn = nodes_[x.index];
      if (!xn.requires_grad) return;
      xn.grad += (xn.value.values() > Scalar(0)).select(nodes_[id.index].grad, Scalar(0));
    });
    return id;
  }

  NodeId residual_add(NodeId a, NodeId b) {
    if (!(value(a).shape() == value(b).shape())) {
      throw ConfigError("residual_add: shape " + to_string(value(a).shape()) + " != " + to_string(value(b).shape()));
    }
    TensorT out(value(a).shape(), value(a).values() + value(b).values());
    NodeId id = push(std::move(out), needs(a) || needs(b));
    record([this, a, b, id]() {
      const Array& g = nodes_[id.index].grad;
      if (nodes_[a.index].requires_grad) nodes_[a.index].grad += g;
      if (nodes_[b.index].requires_grad) nodes_[b.index].grad += g;
    });
    return id;
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    const Shape as = value(a).shape(), bs = value(b).shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
      throw ConfigError("concat_channels: (n, h, w) " + to_string(as) + " vs " + to_string(bs) + " mismatch");
    }
    const std::size_t plane = static_cast<std::size_t>(as.h) * as.w;
    TensorT out(Shape{as.n, as.c + bs.c, as.h, as.w});
    for (int n = 0; n < as.n; ++n) {
      out.values().segment(out.offset(n, 0, 0, 0), as.c * plane) = value(a).values().segment(value(a).offset(n, 0, 0, 0), as.c * plane);
      out.values().segment(out.offset(n, as.c, 0, 0), bs.c * plane) = value(b).values().segment(value(b).offset(n, 0, 0, 0), bs.c * plane);
    }
    NodeId id = push(std::move(out), needs(a) || needs(b));
    record([this, a, b, id, plane]() {
      Node& an = nodes_[a.index];
      Node& bn = nodes_[b.index];
      const Node& on = nodes_[id.index];
      const int ac = an.value.shape().c, bc = bn.value.shape().c;
      for (int n = 0; n < on.value.shape().n; ++n) {
        if (an.requires_grad) an.grad.segment(an.value.offset(n, 0, 0, 0), ac * plane) += on.grad.segment(on.value.offset(n, 0, 0, 0), ac * plane);
        if (bn.requires_grad) bn.grad.segment(bn.value.offset(n, 0, 0, 0), bc * plane) += on.grad.segment(on.value.offset(n, ac, 0, 0), bc * plane);
      }
    });
    return id;
  }

  NodeId clamp01(NodeId x) {
    const Array& v = value(x).values();
    TensorT out(value(x).shape(), v.cwiseMax(Scalar(0)).cwiseMin(Scalar(1)));
    if (track_) mix_mask((v >= Scalar(0)) && (v <= Scalar(1)));
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id]() {
      Node& xn = nodes_[x.index];
      if (!xn.requires_grad) return;
      const Array& v = xn.value.values();
      xn.grad += ((v >= Scalar(0)) && (v <= Scalar(1))).select(nodes_[id.index].grad, Scalar(0));
    });
    return id;
  }

  /// Skip-line codec round trip. Gradient is straight-through inside the
  /// representable [0, 1] range and zero where quantization clamps.
  NodeId skip_codec(NodeId x, const SkipCodec& codec) {
    if (!codec.quantize) return x;
    const TensorT& in = value(x);
    const Shape s = in.shape();
    TensorT out(s);
    std::vector<std::int32_t> codes(s.w), scratch;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y) {
          kernels::skip_encode_row(in.row(n, c, y), s.w, codec, codes);
          kernels::skip_decode_row(std::span<const std::int32_t>(codes), s.w, codec, out.row(n, c, y), scratch);
        }
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id]() {
      Node& xn = nodes_[x.index];
      if (!xn.requires_grad) return;
      const Array& v = xn.value.values();
      xn.grad += ((v >= Scalar(0)) && (v <= Scalar(1))).select(nodes_[id.index].grad, Scalar(0));
    });
    return id;
  }

  NodeId sum(NodeId x) {
    TensorT out(Shape{1, 1, 1, 1});
    out.values()[0] = value(x).values().sum();
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id]() {
      if (nodes_[x.index].requires_grad) nodes_[x.index].grad += nodes_[id.index].grad[0];
    });
    return id;
  }

  /// Scalar sum(weights * x); `weights` is a constant of the same size.
  NodeId weighted_sum(NodeId x, const Array& weights) {
    if (static_cast<std::size_t>(weights.size()) != value(x).numel()) {
      throw ConfigError("weighted_sum: weight count " + std::to_string(weights.size()) + " != tensor elements " +
                        std::to_string(value(x).numel()));
    }
    TensorT out(Shape{1, 1, 1, 1});
    out.values()[0] = (value(x).values() * weights).sum();
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id, weights]() {
      if (nodes_[x.index].requires_grad) nodes_[x.index].grad += nodes_[id.index].grad[0] * weights;
    });
    return id;
  }

  /// Mean absolute error between the first `channels` channels of x and target.
  NodeId mean_abs_error(NodeId x, const TensorT& target, int channels) {
    const Shape xs = value(x).shape(), ts = target.shape();
    if (xs.n != ts.n || xs.h != ts.h || xs.w != ts.w || channels > xs.c || channels > ts.c || channels < 1) {
      throw ConfigError("mean_abs_error: prediction " + to_string(xs) + " vs target " + to_string(ts) + " over " +
                        std::to_string(channels) + " channels");
    }
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    const Scalar count = static_cast<Scalar>(static_cast<std::size_t>(xs.n) * channels * plane);
    Scalar total = 0;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < channels; ++c)
        total += (value(x).values().segment(value(x).offset(n, c, 0, 0), plane) -
                  target.values().segment(target.offset(n, c, 0, 0), plane))
                     .abs()
                     .sum();
    TensorT out(Shape{1, 1, 1, 1});
    out.values()[0] = total / count;
    NodeId id = push(std::move(out), needs(x));
    record([this, x, id, target, channels, plane, count]() {
      Node& xn = nodes_[x.index];
      if (!xn.requires_grad) return;
      const Scalar g = nodes_[id.index].grad[0] / count;
      for (int n = 0; n < xn.value.shape().n; ++n)
        for (int c = 0; c < channels; ++c) {
          const Array d = xn.value.values().segment(xn.value.offset(n, c, 0, 0), plane) -
                          target.values().segment(target.offset(n, c, 0, 0), plane);
          xn.grad.segment(xn.value.offset(n, c, 0, 0), plane) += g * d.sign();
        }
    });
    return id;
  }

  /// Reverse sweep from a scalar loss; node gradients are reset first.
  void compute_gradients(NodeId loss) {
    if (!record_) throw UsageError("backward on a graph built without recording");
    if (value(loss).numel() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + to_string(value(loss).shape()));
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad.setZero();
    }
    if (!nodes_[loss.index].requires_grad) return;
    nodes_[loss.index].grad[0] = Scalar(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      if (nodes_[it->output].requires_grad) it->backward();
    }
  }

  /// Adds the last computed gradients into the bound Parameters.
  void accumulate_parameter_gradients() {
    for (Node& n : nodes_) {
      if (n.param != nullptr && n.requires_grad) n.param->tensor.grad() += n.grad;
    }
  }

  void backward(NodeId loss) {
    compute_gradients(loss);
    accumulate_parameter_gradients();
  }

 private:
  struct Node {
    TensorT value;
    Array grad;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
  };
  struct TapeEntry {
    std::size_t output;
    std::function<void()> backward;
  };

  bool needs(NodeId id) const { return nodes_[id.index].requires_grad; }

  NodeId push(TensorT value, bool requires_grad) {
    Node n;
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.grad = Array::Zero(static_cast<Eigen::Index>(value.numel()));
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  void record(std::function<void()> fn) {
    if (record_ && nodes_.back().requires_grad) tape_.push_back({nodes_.size() - 1, std::move(fn)});
  }

  void mix(std::uint64_t v) {
    signature_ ^= v + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  template <typename Mask>
  void mix_mask(const Mask& m) {
    std::uint64_t word = 0;
    int bits = 0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      word = (word << 1) | static_cast<std::uint64_t>(m[i]);
      if (++bits == 64) {
        mix(word);
        word = 0;
        bits = 0;
      }
    }
    mix(word);
  }

  bool record_;
  bool track_ = false;
  std::uint64_t signature_ = 0;
  std::vector<Node> nodes_;
  std::vector<TapeEntry> tape_;
};

}  // namespace magic
