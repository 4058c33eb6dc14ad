#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "magic/line_plan.hpp"
#include "magic/network.hpp"

namespace magic {

/// One emitted output line, channel-major: `values[c * width + x]`.
struct StreamRow {
  int index = 0;
  Eigen::ArrayXf values;
};

struct BufferUsage {
  BufferPlan plan;
  std::int64_t current = 0;  ///< samples held after the latest line
  std::int64_t peak = 0;
};

/// Raster-order executor. Rows go in top to bottom through push_line; every
/// layer emits its row r at input line factor * r + lag, so the output row
/// r leaves after input line r + total_delay. flush() supplies the zero rows
/// below the frame and drains the pipeline.
class StreamContext {
 public:
  /// `height` of 0 means the frame height is only known at flush().
  StreamContext(const MagicModel<float>& model, int width, int height = 0, SkipMode mode = SkipMode::kConfigured);
  ~StreamContext();
  StreamContext(const StreamContext&) = delete;
  StreamContext& operator=(const StreamContext&) = delete;

  /// `row` holds in_channels * width samples, channel-major.
  std::vector<StreamRow> push_line(const Eigen::ArrayXf& row);
  std::vector<StreamRow> flush();

  const LinePlan& plan() const { return plan_; }
  int width() const { return width_; }
  int rows_pushed() const { return rows_pushed_; }
  int rows_emitted() const { return rows_emitted_; }
  /// Push index (0-based) during which the first output row left, or -1.
  int first_output_push() const { return first_output_push_; }
  bool finished() const { return finished_; }

  const std::vector<BufferUsage>& buffers() const { return usage_; }
  /// Largest total of simultaneously held samples seen after any line.
  std::int64_t peak_total_samples() const { return peak_total_; }

  /// One record per layer: delay, lag, buffered lines, peak samples.
  std::string trace() const;

 private:
  struct Impl;
  std::vector<StreamRow> step(bool have_input, const Eigen::ArrayXf* row);
  void measure();

  const MagicModel<float>& model_;
  LinePlan plan_;
  int width_;
  int height_;
  SkipMode mode_;
  int rows_pushed_ = 0;
  int rows_emitted_ = 0;
  int first_output_push_ = -1;
  int time_ = 0;
  bool flushed_ = false;
  bool finished_ = false;
  std::int64_t peak_total_ = 0;
  std::vector<BufferUsage> usage_;
  std::unique_ptr<Impl> impl_;
};

/// Push every row of `image` (1 x C x H x W), flush, and assemble.
Tensor<float> stream_infer(const MagicModel<float>& model, const Tensor<float>& image,
                           SkipMode mode = SkipMode::kConfigured, std::string* trace = nullptr);

}  // namespace magic
