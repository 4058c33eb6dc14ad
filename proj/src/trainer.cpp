#include "magic/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "magic/metrics.hpp"

namespace magic {

void TrainConfig::validate() const {
  if (patch < 16 || patch % 16 != 0) throw ConfigError("patch size must be a positive multiple of 16, got " + std::to_string(patch));
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be non-negative");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(lr_final_fraction >= 0.0 && lr_final_fraction <= 1.0)) throw ConfigError("lr_final_fraction must be in [0, 1]");
}

std::string TrainResult::loss_csv() const {
  std::ostringstream os;
  os << std::setprecision(9) << "step,loss\n";
  for (std::size_t i = 0; i < step_loss.size(); ++i) os << i + 1 << ',' << step_loss[i] << '\n';
  return os.str();
}

std::string TrainResult::epoch_csv() const {
  std::ostringstream os;
  os << std::setprecision(9) << "epoch,train_loss,test_psnr,test_ssim\n";
  for (const EpochRecord& e : epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.test_psnr << ',' << e.test_ssim << '\n';
  }
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "index,psnr,ssim,input_psnr,input_ssim\n";
  for (const ImageScore& s : images) {
    os << s.index << ',' << s.psnr << ',' << s.ssim << ',' << s.input_psnr << ',' << s.input_ssim << '\n';
  }
  os << "mean," << psnr << ',' << ssim << ',' << input_psnr << ',' << input_ssim << '\n';
  return os.str();
}

Tensor<float> model_input(const MagicModel<float>& model, const Tensor<float>& image) {
  return pad_channels(image, model.config.in_channels);
}

namespace {

Tensor<float> crop_patch(const Tensor<float>& img, int y0, int x0, int size, bool flip) {
  const Shape s = img.shape();
  Tensor<float> out(Shape{1, s.c, size, size});
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(0, c, y, x) = img.at(0, c, y0 + y, flip ? x0 + size - 1 - x : x0 + x);
  return out;
}

struct Adam {
  std::vector<Eigen::ArrayXf> m, v;
  int t = 0;
};

}  // namespace

TrainResult train(MagicModel<float>& model, const std::vector<const DatasetPair*>& train_set,
                  const std::vector<const DatasetPair*>& test_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw TrainingError("training set is empty");
  const int channels = train_set.front()->input.shape().c;
  const int out_channels = train_set.front()->target.shape().c;
  if (channels > model.config.in_channels || out_channels > model.config.out_channels) {
    throw ConfigError("dataset has " + std::to_string(channels) + "/" + std::to_string(out_channels) +
                      " channels, model accepts " + std::to_string(model.config.in_channels) + "/" +
                      std::to_string(model.config.out_channels));
  }
  for (const DatasetPair* p : train_set) {
    if (p->input.shape().h < cfg.patch || p->input.shape().w < cfg.patch) {
      throw ConfigError("training image smaller than the " + std::to_string(cfg.patch) + " px patch");
    }
  }
  model.active_in = channels;
  model.active_out = out_channels;

  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  Adam adam;
  for (const auto& p : model.params) {
    adam.m.push_back(Eigen::ArrayXf::Zero(p.tensor.values().size()));
    adam.v.push_back(Eigen::ArrayXf::Zero(p.tensor.values().size()));
  }
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : static_cast<int>((train_set.size() + static_cast<std::size_t>(cfg.batch) - 1) / cfg.batch);
  const int total_steps = steps * cfg.epochs;
  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < steps; ++step) {
      model.zero_grad();
      double batch_loss = 0.0;
      for (int b = 0; b < cfg.batch; ++b) {
        const DatasetPair& pair = *train_set[rng.below(train_set.size())];
        const Shape s = pair.input.shape();
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.h - cfg.patch + 1)));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.w - cfg.patch + 1)));
        const bool flip = cfg.flip && rng.below(2) == 1;
        Tensor<float> in = model_input(model, crop_patch(pair.input, y0, x0, cfg.patch, flip));
        Tensor<float> target = crop_patch(pair.target, y0, x0, cfg.patch, flip);
        Graph<float> g;
        NodeId out = build_forward(g, model, g.input(std::move(in)), SkipMode::kConfigured);
        NodeId loss = g.mean_abs_error(out, target, out_channels);
        const double l = g.value(loss).values()[0];
        if (!std::isfinite(l)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step + 1));
        }
        batch_loss += l;
        g.backward(loss);
      }
      batch_loss /= cfg.batch;
      ++adam.t;
      const double progress = static_cast<double>(adam.t - 1) / std::max(1, total_steps - 1);
      const double decay = cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      const float lr = static_cast<float>(cfg.lr * decay);
      const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
      const float c1 = static_cast<float>(1.0 - std::pow(cfg.beta1, adam.t));
      const float c2 = static_cast<float>(1.0 - std::pow(cfg.beta2, adam.t));
      const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto& p = model.params[i];
        if (!p.trainable) continue;
        const Eigen::ArrayXf grad = p.tensor.grad() * inv_batch;
        adam.m[i] = b1 * adam.m[i] + (1.0f - b1) * grad;
        adam.v[i] = b2 * adam.v[i] + (1.0f - b2) * grad.square();
        p.tensor.values() -= lr * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + static_cast<float>(cfg.eps));
      }
      model.project();
      result.step_loss.push_back(batch_loss);
      epoch_loss += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
    if (cfg.eval_each_epoch && !test_set.empty()) {
      const EvalReport ev = evaluate(model, test_set);
      rec.test_psnr = ev.psnr;
      rec.test_ssim = ev.ssim;
    }
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  for (auto& p : model.params) p.tensor.clear_grad();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

EvalReport evaluate(const MagicModel<float>& model, const std::vector<const DatasetPair*>& set) {
  EvalReport r;
  int index = 0;
  for (const DatasetPair* p : set) {
    ImageScore s;
    s.index = index++;
    const int oc = p->target.shape().c;
    Tensor<float> out = take_channels(infer_image(model, p->input), oc);
    s.psnr = psnr(out, p->target);
    s.ssim = ssim(out, p->target);
    s.input_psnr = psnr(p->input, p->target);
    s.input_ssim = ssim(p->input, p->target);
    r.psnr += s.psnr;
    r.ssim += s.ssim;
    r.input_psnr += s.input_psnr;
    r.input_ssim += s.input_ssim;
    r.images.push_back(s);
  }
  if (!set.empty()) {
    const double n = static_cast<double>(set.size());
    r.psnr /= n;
    r.ssim /= n;
    r.input_psnr /= n;
    r.input_ssim /= n;
  }
  return r;
}

}  // namespace magic
