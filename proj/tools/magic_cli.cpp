#include <CLI11.hpp>
#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "magic/checkpoint.hpp"
#include "magic/cost_model.hpp"
#include "magic/data.hpp"
#include "magic/dpcm.hpp"
#include "magic/image_io.hpp"
#include "magic/metrics.hpp"
#include "magic/stream.hpp"
#include "magic/trainer.hpp"
#include "magic/util.hpp"

namespace fs = std::filesystem;
using namespace magic;

namespace {

/// Command-line mistakes caught after parsing (conflicting or out-of-range values).
class FlagError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "flags"; }
};

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    write_file_atomic(out_path, text);
  }
}

std::vector<const DatasetPair*> pick(const Dataset& ds, const std::vector<int>& idx) {
  std::vector<const DatasetPair*> out;
  for (int i : idx) out.push_back(&ds.pairs[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<const DatasetPair*> all_pairs(const Dataset& ds) {
  std::vector<const DatasetPair*> out;
  for (const auto& p : ds.pairs) out.push_back(&p);
  return out;
}

Tensor<float> stream_whole(const MagicModel<float>& model, const Tensor<float>& image, std::string* trace) {
  const int m = model.config.spatial_multiple();
  Tensor<float> in = reflect_pad(pad_channels(image, model.config.in_channels), m);
  Tensor<float> out = stream_infer(model, in, SkipMode::kConfigured, trace);
  return take_channels(crop(out, image.shape().h, image.shape().w), model.active_out);
}

struct Options {
  std::string config = "magic-ref";
  std::string checkpoint;
  std::uint64_t seed = 1;
  std::string out;

  // datagen
  int count = 48;
  int height = 128;
  int width = 128;
  std::string images;
  bool srgb = false;

  // train / eval
  std::string data;
  int epochs = 16;
  int patch = 64;
  int batch = 4;
  int steps = 50;
  double lr = 4e-3;
  double test_fraction = 0.2;

  // infer
  std::string input;
  bool verify = false;
  std::string trace;

  // cost
  std::string compare;
  int cost_width = 1920;
  int cost_height = 1080;
  double fps = 30.0;
  double clock = 5e8;
  int activation_bits = 16;
  int weight_bits = 8;

  // dpcm-bench
  int bits = 8;
  int input_bits = 12;
  int rows = 1000;
  int row_width = 1920;

  // quantize
  int terms = 3;
  int min_exp = -15;
};

int run_datagen(const Options& o) {
  if (o.out.empty()) throw FlagError("datagen needs --out");
  Dataset ds = o.images.empty() ? make_synthetic_dataset(o.count, o.height, o.width, o.seed)
                                : make_dataset_from_images(o.images, o.seed, {}, o.srgb);
  write_dataset(ds, o.out);
  std::cout << "wrote " << ds.pairs.size() << " pairs to " << o.out << '\n';
  return 0;
}

int run_train(const Options& o) {
  if (o.data.empty() || o.out.empty()) throw FlagError("train needs --data and --out");
  const NetworkConfig cfg = load_config(o.config);
  const Dataset ds = load_dataset(o.data);
  const auto [train_idx, test_idx] = split_indices(static_cast<int>(ds.pairs.size()), o.test_fraction, o.seed);
  MagicModel<float> model = o.checkpoint.empty() ? build_model(cfg, o.seed) : load_checkpoint(o.checkpoint, cfg);
  TrainConfig tc;
  tc.patch = o.patch;
  tc.batch = o.batch;
  tc.epochs = o.epochs;
  tc.steps_per_epoch = o.steps;
  tc.lr = o.lr;
  tc.seed = o.seed;
  const auto train_set = pick(ds, train_idx);
  const auto test_set = pick(ds, test_idx);
  TrainResult r = train(model, train_set, test_set, tc, [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " loss " << std::setprecision(6) << e.train_loss << " test_psnr "
              << e.test_psnr << " test_ssim " << e.test_ssim << '\n';
  });
  fs::create_directories(o.out);
  save_checkpoint(model, (fs::path(o.out) / "model.ckpt").string());
  write_file_atomic(fs::path(o.out) / "loss.csv", r.loss_csv());
  write_file_atomic(fs::path(o.out) / "epochs.csv", r.epoch_csv());
  if (!test_set.empty()) write_file_atomic(fs::path(o.out) / "eval.csv", evaluate(model, test_set).to_text());
  std::cout << "checkpoint " << (fs::path(o.out) / "model.ckpt").string() << '\n';
  return 0;
}

int run_infer(const Options& o) {
  if (o.checkpoint.empty() || o.input.empty() || o.out.empty()) throw FlagError("infer needs --checkpoint, --input and --out");
  const MagicModel<float> model = load_checkpoint(o.checkpoint);
  write_image(o.out, infer_image(model, read_image(o.input)));
  return 0;
}

int run_stream_infer(const Options& o) {
  if (o.checkpoint.empty() || o.input.empty() || o.out.empty()) {
    throw FlagError("stream-infer needs --checkpoint, --input and --out");
  }
  const MagicModel<float> model = load_checkpoint(o.checkpoint);
  const Tensor<float> image = read_image(o.input);
  std::string trace;
  const Tensor<float> out = stream_whole(model, image, &trace);
  if (!o.trace.empty()) write_file_atomic(o.trace, trace);
  write_image(o.out, out);
  if (o.verify) {
    const Tensor<float> ref = infer_image(model, image);
    const double diff = (ref.values() - out.values()).abs().maxCoeff();
    std::cout << "max_abs_diff " << std::setprecision(9) << diff << '\n';
    if (!(diff <= 1e-6)) throw InternalError("streamed output differs from whole-frame output by " + std::to_string(diff));
    std::cout << "verify ok\n";
  }
  return 0;
}

HardwareParams hardware(const Options& o) {
  HardwareParams hw;
  hw.width = o.cost_width;
  hw.height = o.cost_height;
  hw.fps = o.fps;
  hw.clock_hz = o.clock;
  hw.activation_bits = o.activation_bits;
  hw.weight_bits = o.weight_bits;
  return hw;
}

int run_cost(const Options& o) {
  const HardwareParams hw = hardware(o);
  const CostReport a = memory_logic_report(load_config(o.config), hw);
  std::ostringstream os;
  os << a.to_text();
  if (!o.compare.empty()) {
    const CostReport b = memory_logic_report(load_config(o.compare), hw);
    os << '\n' << b.to_text() << '\n';
    os << "metric," << a.config_name << ',' << b.config_name << ",delta\n";
    auto row = [&](const char* name, double x, double y) {
      os << name << ',' << std::setprecision(15) << x << ',' << y << ',' << x - y << '\n';
    };
    row("line_buffer_bits", static_cast<double>(a.line_buffer_bits), static_cast<double>(b.line_buffer_bits));
    row("alignment_bits", static_cast<double>(a.alignment_bits), static_cast<double>(b.alignment_bits));
    row("total_memory_bits", static_cast<double>(a.total_memory_bits), static_cast<double>(b.total_memory_bits));
    row("latency_lines", a.latency_lines, b.latency_lines);
    row("macs_per_second", a.macs_per_second, b.macs_per_second);
    row("weight_bits", static_cast<double>(a.weight_bits), static_cast<double>(b.weight_bits));
  }
  emit(os.str(), o.out);
  return 0;
}

int run_rf(const Options& o) {
  std::ostringstream os;
  ReceptiveField rf;
  if (!o.checkpoint.empty()) {
    rf = receptive_field(load_checkpoint(o.checkpoint));
  } else {
    rf = receptive_field(load_config(o.config));
  }
  os << "horizontal " << rf.horizontal << '\n';
  if (rf.vertical_unbounded) {
    os << "vertical unbounded\n";
    os << "vertical_effective " << rf.vertical_effective << '\n';
  } else {
    os << "vertical " << rf.vertical << '\n';
  }
  emit(os.str(), o.out);
  return 0;
}

int run_dpcm_bench(const Options& o) {
  const DpcmConfig cfg{o.input_bits, o.bits};
  cfg.validate();
  if (o.rows < 1 || o.row_width < 1) throw FlagError("--rows and --row-width must be positive");
  Rng rng(o.seed);
  double max_err = 0.0, sq = 0.0;
  std::int64_t samples = 0;
  for (int r = 0; r < o.rows; ++r) {
    // Smooth rows: a slow sinusoid plus mild noise, like feature-map lines.
    std::vector<std::int32_t> row(static_cast<std::size_t>(o.row_width));
    const double phase = rng.uniform(0.0, 6.283185307179586);
    const double freq = rng.uniform(0.002, 0.05);
    for (int x = 0; x < o.row_width; ++x) {
      const double v = 0.5 + 0.35 * std::sin(phase + freq * x) + 0.01 * rng.normal();
      row[static_cast<std::size_t>(x)] = quantize_unit(v, o.input_bits);
    }
    const auto dec = dpcm_decode(dpcm_encode(row, cfg), cfg);
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double e = std::abs(static_cast<double>(dec[i] - row[i]));
      max_err = std::max(max_err, e);
      sq += e * e;
    }
    samples += o.row_width;
  }
  std::ostringstream os;
  os << "input_bits " << o.input_bits << '\n';
  os << "residual_bits " << o.bits << '\n';
  os << "step " << cfg.step() << '\n';
  os << "lossless " << (cfg.lossless() ? "yes" : "no") << '\n';
  os << "rows " << o.rows << " width " << o.row_width << '\n';
  os << "raw_bits_per_row " << static_cast<std::int64_t>(o.row_width) * o.input_bits << '\n';
  os << "encoded_bits_per_row " << dpcm_encoded_bits(static_cast<std::size_t>(o.row_width), cfg) << '\n';
  os << "savings_ratio " << std::setprecision(6) << dpcm_savings_ratio(static_cast<std::size_t>(o.row_width), cfg) << '\n';
  os << "max_abs_error " << max_err << '\n';
  os << "rms_error " << std::sqrt(sq / static_cast<double>(samples)) << '\n';
  emit(os.str(), o.out);
  return 0;
}

int run_eval(const Options& o) {
  if (o.checkpoint.empty() || o.data.empty()) throw FlagError("eval needs --checkpoint and --data");
  const MagicModel<float> model = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.data);
  emit(evaluate(model, all_pairs(ds)).to_text(), o.out);
  return 0;
}

int run_quantize(const Options& o) {
  if (o.checkpoint.empty() || o.out.empty()) throw FlagError("quantize needs --checkpoint and --out");
  if (o.terms < 1 || o.terms > 3) throw FlagError("--terms must be 1, 2 or 3");
  const MagicModel<float> model = load_checkpoint(o.checkpoint);
  const MagicModel<float> q = shift_sum_quantize(model, o.terms, o.min_exp);
  save_checkpoint(q, o.out);
  std::cout << "terms " << o.terms << '\n';
  if (!o.data.empty()) {
    const Dataset ds = load_dataset(o.data);
    std::vector<Tensor<float>> images;
    for (const auto& p : ds.pairs) images.push_back(p.input);
    const QuantizedDelta d = quantized_forward_delta(model, images, o.terms);
    std::cout << "psnr_vs_float " << std::fixed << std::setprecision(3) << d.psnr << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Graph tensors are large and short-lived; keep freed pages in the heap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"magic: line-streaming image restoration toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  Options o;

  auto add_common = [&](CLI::App* s, bool config, bool checkpoint, bool out, const std::string& out_help) {
    if (config) s->add_option("--config", o.config, "Network config: magic-ref, fir-ablation or a file")->capture_default_str();
    if (checkpoint) s->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    s->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    if (out) s->add_option("--out", o.out, out_help);
  };

  CLI::App* datagen = app.add_subcommand("datagen", "Write a distorted/clean image pair dataset");
  add_common(datagen, false, false, true, "Output dataset directory");
  datagen->add_option("--count", o.count, "Number of synthetic images")->capture_default_str();
  datagen->add_option("--height", o.height, "Synthetic image height")->capture_default_str();
  datagen->add_option("--width", o.width, "Synthetic image width")->capture_default_str();
  datagen->add_option("--images", o.images, "Directory of clean RGB images (replaces synthetic images)");
  datagen->add_flag("--srgb", o.srgb, "Linearize sRGB-encoded source images");

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  add_common(train_cmd, true, true, true, "Output directory (model.ckpt, loss.csv, epochs.csv, eval.csv)");
  train_cmd->add_option("--data", o.data, "Dataset directory")->required();
  train_cmd->add_option("--epochs", o.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--patch", o.patch, "Patch size (multiple of 16)")->capture_default_str();
  train_cmd->add_option("--batch", o.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--steps", o.steps, "Steps per epoch (0: one patch per image)")->capture_default_str();
  train_cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--test-fraction", o.test_fraction, "Held-out fraction")->capture_default_str();

  CLI::App* infer = app.add_subcommand("infer", "Whole-frame inference on one image");
  add_common(infer, false, true, true, "Output image (.png or .ppm)");
  infer->add_option("--input", o.input, "Input image")->required();

  CLI::App* stream = app.add_subcommand("stream-infer", "Line-by-line streaming inference on one image");
  add_common(stream, false, true, true, "Output image (.png or .ppm)");
  stream->add_option("--input", o.input, "Input image")->required();
  stream->add_flag("--verify", o.verify, "Compare against whole-frame inference (max abs diff <= 1e-6)");
  stream->add_option("--trace", o.trace, "Write the per-layer delay/buffer trace here");

  CLI::App* cost = app.add_subcommand("cost", "Memory, compute and latency report");
  add_common(cost, true, false, true, "Report file (default: stdout)");
  cost->add_option("--compare", o.compare, "Second config to compare against");
  cost->add_option("--width", o.cost_width, "Frame width")->capture_default_str();
  cost->add_option("--height", o.cost_height, "Frame height")->capture_default_str();
  cost->add_option("--fps", o.fps, "Frames per second")->capture_default_str();
  cost->add_option("--clock", o.clock, "Clock frequency in Hz")->capture_default_str();
  cost->add_option("--activation-bits", o.activation_bits, "Bits per buffered activation")->capture_default_str();
  cost->add_option("--weight-bits", o.weight_bits, "Bits per weight")->capture_default_str();

  CLI::App* rf = app.add_subcommand("rf", "Receptive field of a config or trained checkpoint");
  add_common(rf, true, true, true, "Report file (default: stdout)");

  CLI::App* bench = app.add_subcommand("dpcm-bench", "DPCM codec error and bit budget on smooth rows");
  add_common(bench, false, false, true, "Report file (default: stdout)");
  bench->add_option("--bits", o.bits, "Residual bits")->capture_default_str();
  bench->add_option("--input-bits", o.input_bits, "Sample bits")->capture_default_str();
  bench->add_option("--rows", o.rows, "Rows to code")->capture_default_str();
  bench->add_option("--row-width", o.row_width, "Samples per row")->capture_default_str();

  CLI::App* eval = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint on a dataset");
  add_common(eval, false, true, true, "Report file (default: stdout)");
  eval->add_option("--data", o.data, "Dataset directory")->required();

  CLI::App* quant = app.add_subcommand("quantize", "Shift-sum quantize a checkpoint's weights");
  add_common(quant, false, true, true, "Quantized checkpoint path");
  quant->add_option("--terms", o.terms, "Signed power-of-two terms per weight (1-3)")->capture_default_str();
  quant->add_option("--min-exp", o.min_exp, "Smallest exponent")->capture_default_str();
  quant->add_option("--data", o.data, "Dataset to report output PSNR against the float model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[flags] " << e.what() << '\n';
    return 2;
  }

  try {
    if (*datagen) return run_datagen(o);
    if (*train_cmd) return run_train(o);
    if (*infer) return run_infer(o);
    if (*stream) return run_stream_infer(o);
    if (*cost) return run_cost(o);
    if (*rf) return run_rf(o);
    if (*bench) return run_dpcm_bench(o);
    if (*eval) return run_eval(o);
    if (*quant) return run_quantize(o);
  } catch (const FlagError& e) {
    std::cerr << "error[" << e.category() << "] " << e.what() << '\n';
    return 2;
  } catch (const NotFoundError& e) {
    std::cerr << "error[" << e.category() << "] " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "] " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal] " << e.what() << '\n';
    return 1;
  }
  return 1;
}
