#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fpba/tensor.hpp"

namespace fpba {

/// Differentiable binary classifier seen from the outside: raw logits and the
/// input gradient of the binary cross-entropy loss. Label 1 means fake.
///
/// `loss_gradient` differentiates the *sum* of per-image losses, so row n of
/// the result depends only on image n.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::vector<double> logits(const Tensor& x) const = 0;
  virtual Tensor loss_gradient(const Tensor& x, std::span<const int> labels) const = 0;
  virtual bool has_gradient() const { return true; }
  virtual std::string name() const { return "classifier"; }
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// BCE in log-sum-exp form: softplus(z) - y*z = -log p(y | z).
inline double bce_loss(double logit, int label) {
  const double softplus = logit > 0.0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
  return softplus - static_cast<double>(label) * logit;
}

inline double bce_grad(double logit, int label) { return sigmoid(logit) - static_cast<double>(label); }

inline int predict_label(double logit) { return logit > 0.0 ? 1 : 0; }

std::vector<int> predict(const Classifier& model, const Tensor& x);

}  // namespace fpba
