#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "magic/data.hpp"
#include "magic/network.hpp"

namespace magic {

struct TrainConfig {
  int patch = 64;
  int batch = 4;
  int epochs = 10;
  /// Optimizer steps per epoch; 0 means one patch per training image.
  int steps_per_epoch = 0;
  double lr = 4e-3;
  /// Cosine decay from lr down to lr * lr_final_fraction over the whole run.
  double lr_final_fraction = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  bool flip = true;
  /// Held-out evaluation after every epoch (needs a test set).
  bool eval_each_epoch = true;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_psnr = 0.0;
  double test_ssim = 0.0;
};

struct TrainResult {
  std::vector<double> step_loss;
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;

  std::string loss_csv() const;
  std::string epoch_csv() const;
};

struct ImageScore {
  int index = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double input_psnr = 0.0;
  double input_ssim = 0.0;
};

struct EvalReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double input_psnr = 0.0;  ///< distorted input vs target
  double input_ssim = 0.0;
  std::vector<ImageScore> images;

  std::string to_text() const;
};

/// Adam on mean absolute error over the active output channels; w1 is
/// projected back into range after every step.
TrainResult train(MagicModel<float>& model, const std::vector<const DatasetPair*>& train_set,
                  const std::vector<const DatasetPair*>& test_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Full-frame evaluation through the whole-frame forward pass.
EvalReport evaluate(const MagicModel<float>& model, const std::vector<const DatasetPair*>& set);

/// Zero-fill to in_channels (model.active_in is set from the data).
Tensor<float> model_input(const MagicModel<float>& model, const Tensor<float>& image);

}  // namespace magic
