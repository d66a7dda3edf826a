#include "fpba/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fpba/error.hpp"

namespace fpba {

Adam::Adam(std::size_t params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(params, 0.0), v_(params, 0.0) {
  if (!(lr > 0.0)) throw InvalidParameter("adam: learning rate must be positive");
}

void Adam::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw InvalidParameter("adam: learning rate must be positive");
  lr_ = lr;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw InvalidInput("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

double detector_loss_and_grads(const Detector& det, const Tensor& x, std::span<const int> labels,
                               std::span<double> backbone_grad, std::span<double> head_grad, std::size_t* correct) {
  const nn::Dims dims = image_dims(x);
  const std::size_t n = x.shape().n;
  const double scale = 1.0 / static_cast<double>(n);
  nn::Trace trace, head_trace;
  std::vector<double> feature_grad(det.feature_dim()), image_grad(x.shape().per_image());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    det.backbone().forward(x.image(i), dims, trace);
    det.head().forward(trace.output(), {det.feature_dim(), 1, 1}, head_trace);
    const double z = head_trace.output()[0];
    loss += bce_loss(z, labels[i]);
    if (correct) *correct += predict_label(z) == labels[i];
    const double g[1] = {bce_grad(z, labels[i]) * scale};
    det.head().backward(head_trace, g, feature_grad, head_grad);
    det.backbone().backward(trace, feature_grad, image_grad, backbone_grad);
  }
  return loss * scale;
}

double scheduled_learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.schedule == "constant") return cfg.learning_rate;
  if (cfg.schedule == "cosine") {
    const double t = static_cast<double>(epoch) / static_cast<double>(std::max<std::size_t>(cfg.epochs, 1));
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  throw InvalidParameter("train: schedule must be constant or cosine, got '" + cfg.schedule + "'");
}

Detector train_detector(Arch arch, const LabeledDataset& data, const AugmentConfig& augment, const TrainConfig& cfg) {
  augment.validate();
  if (cfg.batch_size == 0) throw InvalidParameter("train: batch_size must be positive");
  scheduled_learning_rate(cfg, 0);
  data.validate();
  const auto train_idx = data.indices(Split::Train);
  const bool has_real = std::any_of(train_idx.begin(), train_idx.end(), [&](std::size_t i) { return data.labels[i] == 0; });
  const bool has_fake = std::any_of(train_idx.begin(), train_idx.end(), [&](std::size_t i) { return data.labels[i] == 1; });
  if (!has_real || !has_fake) throw InvalidDataset("train: the training split must contain both classes");

  PreprocessSpec pre = cfg.preprocess;
  pre.channels = data.images.shape().c;
  Detector det = Detector::make(arch, pre, cfg.seed);
  Adam backbone_opt(det.backbone().param_count(), cfg.learning_rate);
  Adam head_opt(det.head().param_count(), cfg.learning_rate);
  Rng rng = make_rng(cfg.seed, 2);

  const auto val = data.view(Split::Val);
  std::vector<std::size_t> order = train_idx;
  std::vector<double> backbone_grad(det.backbone().param_count()), head_grad(det.head().param_count());
  EpochStats stats;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    backbone_opt.set_learning_rate(scheduled_learning_rate(cfg, epoch));
    head_opt.set_learning_rate(scheduled_learning_rate(cfg, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch_idx(order.data() + start, end - start);
      auto batch = data.view(batch_idx);
      const Tensor x = augment.p_blur > 0.0 || augment.p_jpeg > 0.0 ? fpba::augment(batch.images, augment, rng)
                                                                      : batch.images;
      std::fill(backbone_grad.begin(), backbone_grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      const double loss = detector_loss_and_grads(det, x, batch.labels, backbone_grad, head_grad, &correct);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train: loss became non-finite", "epoch " + std::to_string(epoch) + ", batch at " +
                                                                   std::to_string(start));
      }
      loss_sum += loss * static_cast<double>(end - start);
      backbone_opt.step(det.backbone().params(), backbone_grad);
      head_opt.step(det.head().params(), head_grad);
    }
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    stats.val_accuracy = val.images.shape().n ? accuracy(det, val.images, val.labels) : 0.0;
    if (cfg.on_epoch) cfg.on_epoch(stats);
  }
  if (cfg.epochs == 0) {
    const auto tr = data.view(Split::Train);
    stats.train_accuracy = accuracy(det, tr.images, tr.labels);
    stats.val_accuracy = val.images.shape().n ? accuracy(det, val.images, val.labels) : 0.0;
  }

  nlohmann::json aug;
  to_json(aug, augment);
  det.record = TrainingRecord{cfg.seed, cfg.epochs, cfg.learning_rate, stats.train_accuracy, stats.val_accuracy, aug};
  return det;
}

}  // namespace fpba
