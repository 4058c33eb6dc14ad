#include "magic/stream.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "magic/kernels.hpp"

namespace magic {

namespace {

struct Entry {
  int row = 0;
  Eigen::ArrayXf values;
  std::vector<std::int32_t> codes;
};

using Port = std::deque<Entry>;

const Entry* find_row(const Port& port, int row) {
  if (port.empty()) return nullptr;
  const int k = row - port.front().row;
  if (k < 0 || k >= static_cast<int>(port.size())) return nullptr;
  return &port[static_cast<std::size_t>(k)];
}

}  // namespace

struct StreamContext::Impl {
  struct State {
    int next = 0;
    int rows = std::numeric_limits<int>::max();
    int width = 0;
    std::vector<Port> ports;
    Eigen::ArrayXf carry;
    Eigen::ArrayXf acc;
    int acc_count = 0;
    SkipCodec codec;
  };

  std::vector<State> states;
  std::vector<std::vector<std::pair<int, int>>> consumers;  // (layer, port)
  std::vector<std::int32_t> scratch;
};

StreamContext::StreamContext(const MagicModel<float>& model, int width, int height, SkipMode mode)
    : model_(model),
      plan_(plan_schedule(model.config)),
      width_(width),
      height_(height),
      mode_(mode),
      impl_(std::make_unique<Impl>()) {
  const int m = model.config.spatial_multiple();
  if (width < m || width % m != 0) {
    throw InputError("stream width " + std::to_string(width) + " must be a positive multiple of " + std::to_string(m));
  }
  if (height < 0 || height % m != 0) {
    throw InputError("stream height " + std::to_string(height) + " must be a multiple of " + std::to_string(m));
  }
  const Network& net = model.network;
  impl_->states.resize(net.layers.size());
  impl_->consumers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    auto& st = impl_->states[i];
    st.width = width / L.factor;
    st.ports.resize(L.inputs.size());
    for (std::size_t j = 0; j < L.inputs.size(); ++j) {
      impl_->consumers[static_cast<std::size_t>(L.inputs[j])].emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
    if (L.kind == LayerKind::kIir) st.carry = Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(L.channels) * st.width);
    if (L.kind == LayerKind::kPool4) st.acc = Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(L.channels) * st.width);
    if (L.kind == LayerKind::kSkipLine) {
      st.codec = skip_codec_for(model.config.skips[static_cast<std::size_t>(L.skip_index)], mode);
    }
    if (height > 0) st.rows = height / L.factor;
  }
  for (const BufferPlan& b : plan_.buffers) usage_.push_back(BufferUsage{b, 0, 0});
}

StreamContext::~StreamContext() = default;

std::vector<StreamRow> StreamContext::push_line(const Eigen::ArrayXf& row) {
  if (flushed_) throw UsageError("push_line after the frame was flushed");
  if (height_ > 0 && rows_pushed_ >= height_) {
    throw UsageError("push_line beyond frame height " + std::to_string(height_));
  }
  const Eigen::Index expect = static_cast<Eigen::Index>(model_.config.in_channels) * width_;
  if (row.size() != expect) {
    throw InputError("push_line: row has " + std::to_string(row.size()) + " samples, expected in_channels*width = " +
                     std::to_string(expect));
  }
  ++rows_pushed_;
  return step(true, &row);
}

std::vector<StreamRow> StreamContext::flush() {
  if (flushed_) throw UsageError("flush called twice");
  if (rows_pushed_ == 0) throw UsageError("flush before any push_line");
  const int m = model_.config.spatial_multiple();
  if (height_ > 0 && rows_pushed_ != height_) {
    throw UsageError("flush after " + std::to_string(rows_pushed_) + " of " + std::to_string(height_) + " rows");
  }
  if (rows_pushed_ % m != 0) {
    throw InputError("frame height " + std::to_string(rows_pushed_) + " is not a multiple of " + std::to_string(m));
  }
  flushed_ = true;
  height_ = rows_pushed_;
  const Network& net = model_.network;
  for (std::size_t i = 0; i < net.layers.size(); ++i) impl_->states[i].rows = height_ / net.layers[i].factor;
  std::vector<StreamRow> out;
  const auto& out_state = impl_->states[static_cast<std::size_t>(net.output)];
  const int deadline = height_ + plan_.total_delay;
  while (out_state.next < out_state.rows) {
    if (time_ >= deadline) throw InternalError("stream: output not drained by line " + std::to_string(deadline));
    std::vector<StreamRow> rows = step(false, nullptr);
    for (auto& r : rows) out.push_back(std::move(r));
  }
  finished_ = true;
  return out;
}

std::vector<StreamRow> StreamContext::step(bool have_input, const Eigen::ArrayXf* input_row) {
  const Network& net = model_.network;
  const int t = time_;
  std::vector<StreamRow> emitted;
  auto& states = impl_->states;

  auto deliver = [&](int layer, int row, Eigen::ArrayXf values) {
    const auto& cons = impl_->consumers[static_cast<std::size_t>(layer)];
    for (std::size_t k = 0; k < cons.size(); ++k) {
      const auto [ci, pj] = cons[k];
      const Layer& C = net.layers[static_cast<std::size_t>(ci)];
      auto& cst = states[static_cast<std::size_t>(ci)];
      Entry e;
      e.row = row;
      if (C.kind == LayerKind::kSkipLine && cst.codec.quantize) {
        const int w = cst.width;
        e.codes.resize(static_cast<std::size_t>(C.channels) * w);
        for (int c = 0; c < C.channels; ++c) {
          kernels::skip_encode_row(values.data() + static_cast<std::ptrdiff_t>(c) * w, w, cst.codec,
                                   std::span<std::int32_t>(e.codes).subspan(static_cast<std::size_t>(c) * w, w));
        }
      } else {
        e.values = (k + 1 == cons.size()) ? std::move(values) : values;
      }
      cst.ports[static_cast<std::size_t>(pj)].push_back(std::move(e));
    }
    if (layer == net.output) {
      if (first_output_push_ < 0) first_output_push_ = t;
      ++rows_emitted_;
      emitted.push_back(StreamRow{row, std::move(values)});
    }
  };

  auto need = [&](const Port& port, int row, const Layer& L) -> const Entry& {
    const Entry* e = find_row(port, row);
    if (e == nullptr) {
      throw InternalError("stream: layer " + L.name + " scheduled before input row " + std::to_string(row) + " arrived");
    }
    return *e;
  };

  auto pop_before = [](Port& port, int row) {
    while (!port.empty() && port.front().row < row) port.pop_front();
  };

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    auto& st = states[i];
    const int lag = plan_.layers[i].lag;
    const int w = st.width;
    const Eigen::Index row_len = static_cast<Eigen::Index>(L.channels) * w;

    if (L.kind == LayerKind::kInput) {
      if (have_input) {
        deliver(static_cast<int>(i), st.next, *input_row);
        ++st.next;
      }
      continue;
    }

    if (L.kind == LayerKind::kPool4) {
      Port& port = st.ports[0];
      const int w_in = states[static_cast<std::size_t>(L.inputs[0])].width;
      while (!port.empty()) {
        const Entry e = std::move(port.front());
        port.pop_front();
        const int k = e.row % 4;
        for (int c = 0; c < L.channels; ++c) {
          kernels::pool4_accumulate_row(e.values.data() + static_cast<std::ptrdiff_t>(c) * w_in,
                                        st.acc.data() + static_cast<std::ptrdiff_t>(c) * w, w_in, k == 0);
        }
        st.acc_count = k + 1;
        if (k == 3) {
          if (L.factor * st.next + lag != t) throw InternalError("stream: pool " + L.name + " off schedule");
          st.acc_count = 0;
          deliver(static_cast<int>(i), st.next++, st.acc);
        }
      }
      continue;
    }

    while (st.next < st.rows && L.factor * st.next + lag <= t) {
      const int r = st.next;
      Eigen::ArrayXf out(row_len);
      switch (L.kind) {
        case LayerKind::kConv: {
          Port& port = st.ports[0];
          const int py = L.conv.pad_y();
          const int in_w = states[static_cast<std::size_t>(L.inputs[0])].width;
          const int in_rows = st.rows;
          std::vector<const float*> rows(static_cast<std::size_t>(L.conv.kh), nullptr);
          for (int ky = 0; ky < L.conv.kh; ++ky) {
            const int yy = r + ky - py;
            if (yy >= 0 && yy < in_rows) rows[static_cast<std::size_t>(ky)] = need(port, yy, L).values.data();
          }
          const auto& kern = model_.params[static_cast<std::size_t>(L.kernel_param)].tensor;
          const auto& bias = model_.params[static_cast<std::size_t>(L.bias_param)].tensor;
          kernels::conv_row<float>(
              L.conv, kern.data(), bias.data(), w,
              [&](int ky, int c) -> const float* {
                const float* base = rows[static_cast<std::size_t>(ky)];
                return base == nullptr ? nullptr : base + static_cast<std::ptrdiff_t>(c) * in_w;
              },
              [&](int co) { return out.data() + static_cast<std::ptrdiff_t>(co) * w; });
          pop_before(port, r + 1 - py);
          break;
        }
        case LayerKind::kIir: {
          Port& port = st.ports[0];
          const Entry& e = need(port, r, L);
          const float* w1 = model_.params[static_cast<std::size_t>(L.iir_params[0])].tensor.data();
          const float* w2 = model_.params[static_cast<std::size_t>(L.iir_params[1])].tensor.data();
          const float* w3 = model_.params[static_cast<std::size_t>(L.iir_params[2])].tensor.data();
          for (int c = 0; c < L.channels; ++c) {
            const std::ptrdiff_t o = static_cast<std::ptrdiff_t>(c) * w;
            kernels::iir_row(e.values.data() + o, st.carry.data() + o, out.data() + o, w1[c], w2[c], w3[c], w);
          }
          pop_before(port, r + 1);
          break;
        }
        case LayerKind::kRelu: {
          out = need(st.ports[0], r, L).values.cwiseMax(0.0f);
          pop_before(st.ports[0], r + 1);
          break;
        }
        case LayerKind::kClamp01: {
          out = need(st.ports[0], r, L).values.cwiseMax(0.0f).cwiseMin(1.0f);
          pop_before(st.ports[0], r + 1);
          break;
        }
        case LayerKind::kAdd: {
          out = need(st.ports[0], r, L).values + need(st.ports[1], r, L).values;
          pop_before(st.ports[0], r + 1);
          pop_before(st.ports[1], r + 1);
          break;
        }
        case LayerKind::kConcat: {
          const Eigen::ArrayXf& a = need(st.ports[0], r, L).values;
          const Eigen::ArrayXf& b = need(st.ports[1], r, L).values;
          out.head(a.size()) = a;
          out.tail(b.size()) = b;
          pop_before(st.ports[0], r + 1);
          pop_before(st.ports[1], r + 1);
          break;
        }
        case LayerKind::kUpsample4: {
          const int wc = states[static_cast<std::size_t>(L.inputs[0])].width;
          const Entry& e = need(st.ports[0], r / 4, L);
          for (int c = 0; c < L.channels; ++c) {
            kernels::upsample4_row(e.values.data() + static_cast<std::ptrdiff_t>(c) * wc,
                                   out.data() + static_cast<std::ptrdiff_t>(c) * w, wc);
          }
          if (r % 4 == 3) pop_before(st.ports[0], r / 4 + 1);
          break;
        }
        case LayerKind::kSkipLine: {
          const Entry& e = need(st.ports[0], r, L);
          if (st.codec.quantize) {
            for (int c = 0; c < L.channels; ++c) {
              kernels::skip_decode_row<float>(
                  std::span<const std::int32_t>(e.codes).subspan(static_cast<std::size_t>(c) * w, w), w, st.codec,
                  out.data() + static_cast<std::ptrdiff_t>(c) * w, impl_->scratch);
            }
          } else {
            out = e.values;
          }
          pop_before(st.ports[0], r + 1);
          break;
        }
        case LayerKind::kInput:
        case LayerKind::kPool4:
          break;
      }
      ++st.next;
      deliver(static_cast<int>(i), r, std::move(out));
    }
  }
  ++time_;
  measure();
  return emitted;
}

void StreamContext::measure() {
  const Network& net = model_.network;
  const auto& states = impl_->states;
  auto held = [&](int layer, int port_index) {
    const auto& st = states[static_cast<std::size_t>(layer)];
    return static_cast<std::int64_t>(st.ports[static_cast<std::size_t>(port_index)].size());
  };
  std::int64_t total = 0;
  for (BufferUsage& u : usage_) {
    const BufferPlan& b = u.plan;
    const Layer& L = net.layers[static_cast<std::size_t>(b.layer)];
    const auto& st = states[static_cast<std::size_t>(b.layer)];
    const std::int64_t row_samples = static_cast<std::int64_t>(width_ / b.factor) * b.channels;
    std::int64_t rows = 0;
    switch (b.kind) {
      case BufferKind::kFirLines:
      case BufferKind::kSkipFifo:
      case BufferKind::kUpsampleHold:
        rows = held(b.layer, 0);
        break;
      case BufferKind::kIirState:
        rows = (st.next > 0 && st.next < st.rows) ? 1 : 0;
        break;
      case BufferKind::kPoolAccumulator:
        rows = st.acc_count > 0 ? 1 : 0;
        break;
      case BufferKind::kResidualAlign:
        for (std::size_t j = 0; j < L.inputs.size(); ++j)
          if (L.inputs[j] == b.source) rows = held(b.layer, static_cast<int>(j));
        break;
    }
    u.current = rows * row_samples;
    u.peak = std::max(u.peak, u.current);
    total += u.current;
  }
  peak_total_ = std::max(peak_total_, total);

  // Ports not covered by a planned buffer must drain within the same line.
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& L = net.layers[i];
    for (std::size_t j = 0; j < L.inputs.size(); ++j) {
      if (states[i].ports[j].empty()) continue;
      bool planned = false;
      for (const BufferPlan& b : plan_.buffers) {
        if (b.layer != static_cast<int>(i)) continue;
        if (b.kind == BufferKind::kResidualAlign ? b.source == L.inputs[j] : j == 0) planned = true;
      }
      if (!planned) throw InternalError("stream: unplanned rows held at " + L.name);
    }
  }
}

std::string StreamContext::trace() const {
  std::ostringstream os;
  os << "# layer kind factor delay lag buffered_lines peak_samples\n";
  for (const LayerPlan& lp : plan_.layers) {
    std::int64_t peak = 0;
    for (const BufferUsage& u : usage_)
      if (u.plan.layer == lp.layer) peak += u.peak;
    os << lp.name << ' ' << layer_kind_name(lp.kind) << ' ' << lp.factor << ' ' << lp.delay << ' ' << lp.lag << ' '
       << lp.buffered_lines << ' ' << peak << '\n';
  }
  os << "# total_delay " << plan_.total_delay << " first_output_push " << first_output_push_ << " rows_in "
     << rows_pushed_ << " rows_out " << rows_emitted_ << " peak_total_samples " << peak_total_
     << " planned_total_samples " << plan_.total_samples(width_) << '\n';
  return os.str();
}

Tensor<float> stream_infer(const MagicModel<float>& model, const Tensor<float>& image, SkipMode mode,
                           std::string* trace) {
  const Shape s = image.shape();
  if (s.n != 1) throw InputError("stream_infer expects a single image (n = 1)");
  if (s.c != model.config.in_channels) {
    throw ConfigError("stream_infer: image channels " + std::to_string(s.c) + " != model in_channels " +
                      std::to_string(model.config.in_channels));
  }
  StreamContext ctx(model, s.w, s.h, mode);
  Tensor<float> out(Shape{1, model.config.out_channels, s.h, s.w});
  auto store = [&](const std::vector<StreamRow>& rows) {
    for (const StreamRow& r : rows)
      for (int c = 0; c < model.config.out_channels; ++c)
        std::copy_n(r.values.data() + static_cast<std::ptrdiff_t>(c) * s.w, s.w, out.row(0, c, r.index));
  };
  Eigen::ArrayXf line(static_cast<Eigen::Index>(s.c) * s.w);
  for (int y = 0; y < s.h; ++y) {
    for (int c = 0; c < s.c; ++c) std::copy_n(image.row(0, c, y), s.w, line.data() + static_cast<std::ptrdiff_t>(c) * s.w);
    store(ctx.push_line(line));
  }
  store(ctx.flush());
  if (ctx.rows_emitted() != s.h) throw InternalError("stream_infer: emitted " + std::to_string(ctx.rows_emitted()) + " rows");
  if (trace != nullptr) *trace = ctx.trace();
  return out;
}

}  // namespace magic
