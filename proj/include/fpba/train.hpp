#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpba/augment.hpp"
#include "fpba/data.hpp"
#include "fpba/detector.hpp"

namespace fpba {

/// Adam with bias correction; one instance per parameter buffer.
class Adam {
 public:
  Adam(std::size_t params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;  // initial rate
  std::string schedule = "constant";  // constant | cosine (per-epoch decay towards 0)
  std::uint64_t seed = 0;
  PreprocessSpec preprocess;
  std::function<void(const EpochStats&)> on_epoch;
};

/// Learning rate for `epoch` (0-based) under cfg.schedule.
double scheduled_learning_rate(const TrainConfig& cfg, std::size_t epoch);

/// Trains a fresh detector of `arch` on the train split with binary
/// cross-entropy and Adam, applying `augment` to every mini-batch. Records
/// final train/val accuracy in the returned detector.
Detector train_detector(Arch arch, const LabeledDataset& data, const AugmentConfig& augment,
                        const TrainConfig& cfg);

/// Mean BCE loss over a batch and its parameter gradients for the detector's
/// backbone and head (accumulated, already divided by the batch size).
double detector_loss_and_grads(const Detector& det, const Tensor& x, std::span<const int> labels,
                               std::span<double> backbone_grad, std::span<double> head_grad,
                               std::size_t* correct = nullptr);

}  // namespace fpba
