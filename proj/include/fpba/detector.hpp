#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpba/classifier.hpp"
#include "fpba/nn.hpp"
#include "json.hpp"

namespace fpba {

enum class Arch { SpatialCnn, FrequencyMlp };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& tag);

/// Differentiable input pipeline that runs in front of the backbone.
struct PreprocessSpec {
  std::size_t input_size = 64;
  std::size_t channels = 3;
  std::vector<double> mean = {0.485, 0.456, 0.406};
  std::vector<double> stddev = {0.229, 0.224, 0.225};
  std::string resize = "bilinear";  // "nearest" is accepted but blocks gradients
};

void to_json(nlohmann::json& j, const PreprocessSpec& p);
void from_json(const nlohmann::json& j, PreprocessSpec& p);

/// Metadata recorded by training; part of the checkpoint manifest.
struct TrainingRecord {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  nlohmann::json augment = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const TrainingRecord& r);
void from_json(const nlohmann::json& j, TrainingRecord& r);

/// Binary AIGI detector split into a feature backbone (preprocessing
/// included) and a linear classifier head mapping F features to one logit.
class Detector : public Classifier {
 public:
  Detector(std::string arch_tag, PreprocessSpec preprocess, nn::Sequential body, nn::Sequential head);

  static Detector make(Arch arch, const PreprocessSpec& preprocess, std::uint64_t seed);

  std::vector<double> logits(const Tensor& x) const override;
  Tensor loss_gradient(const Tensor& x, std::span<const int> labels) const override;
  bool has_gradient() const override { return backbone_.differentiable() && head_.differentiable(); }
  std::string name() const override { return name_.empty() ? arch_tag_ : name_; }

  void set_name(std::string name) { name_ = std::move(name); }
  const std::string& arch_tag() const { return arch_tag_; }
  const PreprocessSpec& preprocess() const { return preprocess_; }
  std::size_t feature_dim() const { return feature_dim_; }

  const nn::Sequential& backbone() const { return backbone_; }
  nn::Sequential& backbone() { return backbone_; }
  const nn::Sequential& head() const { return head_; }
  nn::Sequential& head() { return head_; }
  std::size_t preprocess_layers() const { return preprocess_layers_; }
  nlohmann::json body_architecture() const;

  // Per-image building blocks shared with the Bayesian ensemble and attacks.
  void backbone_forward(std::span<const double> image, nn::Dims dims, nn::Trace& trace) const;
  void backbone_backward(const nn::Trace& trace, std::span<const double> feature_grad,
                         std::span<double> image_grad) const;
  double head_logit(std::span<const double> features) const;
  // Writes d logit / d features * dlogit into feature_grad.
  void head_backward(std::span<const double> features, double dlogit, std::span<double> feature_grad) const;

  /// FNV-1a over backbone and head parameters.
  std::uint64_t checksum() const;

  TrainingRecord record;

 private:
  void require_gradient() const;

  std::string arch_tag_;
  std::string name_;
  PreprocessSpec preprocess_;
  std::size_t preprocess_layers_ = 0;
  nn::Sequential backbone_;
  nn::Sequential head_;
  std::size_t feature_dim_ = 0;
};

nn::Dims image_dims(const Tensor& x);

/// Logits of `model` for `x`; equivalent to model.logits(x).
std::vector<double> forward_logits(const Classifier& model, const Tensor& x);
/// Input gradient of the summed binary cross-entropy loss.
Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels);

double accuracy(const Classifier& model, const Tensor& x, std::span<const int> labels);

}  // namespace fpba
