#include "fpba/detector.hpp"

#include <algorithm>

#include "fpba/error.hpp"

namespace fpba {

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::SpatialCnn:
      return "spatial-cnn";
    case Arch::FrequencyMlp:
      return "frequency-mlp";
  }
  return "unknown";
}

Arch parse_arch(const std::string& tag) {
  if (tag == "spatial-cnn") return Arch::SpatialCnn;
  if (tag == "frequency-mlp") return Arch::FrequencyMlp;
  throw InvalidParameter("unknown architecture '" + tag + "' (expected spatial-cnn or frequency-mlp)");
}

void to_json(nlohmann::json& j, const PreprocessSpec& p) {
  j = {{"input_size", p.input_size}, {"channels", p.channels}, {"mean", p.mean}, {"std", p.stddev},
       {"resize", p.resize}};
}

void from_json(const nlohmann::json& j, PreprocessSpec& p) {
  j.at("input_size").get_to(p.input_size);
  j.at("channels").get_to(p.channels);
  j.at("mean").get_to(p.mean);
  j.at("std").get_to(p.stddev);
  j.at("resize").get_to(p.resize);
}

void to_json(nlohmann::json& j, const TrainingRecord& r) {
  j = {{"seed", r.seed},
       {"epochs", r.epochs},
       {"learning_rate", r.learning_rate},
       {"train_accuracy", r.train_accuracy},
       {"val_accuracy", r.val_accuracy},
       {"augment", r.augment}};
}

void from_json(const nlohmann::json& j, TrainingRecord& r) {
  r.seed = j.value("seed", std::uint64_t{0});
  r.epochs = j.value("epochs", std::size_t{0});
  r.learning_rate = j.value("learning_rate", 0.0);
  r.train_accuracy = j.value("train_accuracy", 0.0);
  r.val_accuracy = j.value("val_accuracy", 0.0);
  r.augment = j.value("augment", nlohmann::json::object());
}

namespace {

std::vector<nn::LayerPtr> make_preprocess_layers(const PreprocessSpec& p) {
  if (p.mean.size() != p.channels || p.stddev.size() != p.channels) {
    throw InvalidParameter("preprocess: mean/std must have one entry per channel");
  }
  std::vector<nn::LayerPtr> layers;
  if (p.resize == "bilinear") {
    layers.push_back(nn::resize_bilinear(p.input_size, p.input_size));
  } else if (p.resize == "nearest") {
    layers.push_back(nn::resize_nearest(p.input_size, p.input_size));
  } else {
    throw InvalidParameter("preprocess: unknown resize mode '" + p.resize + "'");
  }
  layers.push_back(nn::normalize(p.mean, p.stddev));
  return layers;
}

}  // namespace

Detector::Detector(std::string arch_tag, PreprocessSpec preprocess, nn::Sequential body, nn::Sequential head)
    : arch_tag_(std::move(arch_tag)), preprocess_(std::move(preprocess)), head_(std::move(head)) {
  auto layers = make_preprocess_layers(preprocess_);
  preprocess_layers_ = layers.size();
  for (const auto& l : body.layers()) layers.push_back(l);
  backbone_ = nn::Sequential(std::move(layers));
  // Preprocessing has no parameters, so the buffers line up one to one.
  std::copy(body.params().begin(), body.params().end(), backbone_.params().begin());

  const nn::Dims in{preprocess_.channels, preprocess_.input_size, preprocess_.input_size};
  feature_dim_ = backbone_.output_dims(in).size();
  const nn::Dims out = head_.output_dims({feature_dim_, 1, 1});
  if (out.size() != 1) throw InvalidParameter("detector head must produce a single logit");
}

Detector Detector::make(Arch arch, const PreprocessSpec& preprocess, std::uint64_t seed) {
  const std::size_t c = preprocess.channels;
  const std::size_t s = preprocess.input_size;
  std::vector<nn::LayerPtr> body;
  std::size_t features = 0;
  switch (arch) {
    case Arch::SpatialCnn:
      if (s < 8) throw InvalidParameter("spatial-cnn needs input_size >= 8");
      body = {nn::conv3x3(c, 16),  nn::relu(), nn::max_pool2(), nn::conv3x3(16, 32),  nn::relu(),
              nn::max_pool2(),     nn::conv3x3(32, 64), nn::relu(), nn::max_pool2(), nn::conv3x3(64, 128),
              nn::relu(),          nn::global_avg_pool()};
      features = 128;
      break;
    case Arch::FrequencyMlp:
      // Fixed centring keeps the shared log-magnitude offset out of the first layer.
      body = {nn::grayscale(),  nn::dct(),  nn::log_magnitude(1e-5), nn::normalize({-3.5}, {1.5}),
              nn::linear(s * s, 64), nn::relu(), nn::linear(64, 32), nn::relu()};
      features = 32;
      break;
  }
  nn::Sequential body_net(std::move(body));
  nn::Sequential head({nn::linear(features, 1)});
  Rng rng = make_rng(seed, 1);
  body_net.init(rng);
  head.init(rng);
  return Detector(to_string(arch), preprocess, std::move(body_net), std::move(head));
}

nlohmann::json Detector::body_architecture() const {
  nlohmann::json arch = backbone_.architecture();
  arch.erase(arch.begin(), arch.begin() + static_cast<std::ptrdiff_t>(preprocess_layers_));
  return arch;
}

nn::Dims image_dims(const Tensor& x) { return {x.shape().c, x.shape().h, x.shape().w}; }

void Detector::backbone_forward(std::span<const double> image, nn::Dims dims, nn::Trace& trace) const {
  backbone_.forward(image, dims, trace);
}

void Detector::backbone_backward(const nn::Trace& trace, std::span<const double> feature_grad,
                                 std::span<double> image_grad) const {
  backbone_.backward(trace, feature_grad, image_grad, {});
}

double Detector::head_logit(std::span<const double> features) const {
  return head_.forward(features, {feature_dim_, 1, 1})[0];
}

void Detector::head_backward(std::span<const double> features, double dlogit,
                             std::span<double> feature_grad) const {
  nn::Trace trace;
  head_.forward(features, {feature_dim_, 1, 1}, trace);
  const double g[1] = {dlogit};
  head_.backward(trace, g, feature_grad, {});
}

std::vector<double> Detector::logits(const Tensor& x) const {
  check_batch(x, "forward_logits");
  if (x.shape().c != preprocess_.channels) {
    throw InvalidInput("forward_logits: detector expects " + std::to_string(preprocess_.channels) + " channels");
  }
  const nn::Dims dims = image_dims(x);
  std::vector<double> out(x.shape().n);
  nn::Trace trace;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    backbone_.forward(x.image(n), dims, trace);
    out[n] = head_logit(trace.output());
  }
  return out;
}

void Detector::require_gradient() const {
  if (!has_gradient()) {
    throw CapabilityError("detector '" + name() + "' has a non-differentiable preprocessing step");
  }
}

Tensor Detector::loss_gradient(const Tensor& x, std::span<const int> labels) const {
  require_gradient();
  check_batch(x, "input_gradient");
  check_labels(x, labels, "input_gradient");
  if (x.shape().c != preprocess_.channels) {
    throw InvalidInput("input_gradient: detector expects " + std::to_string(preprocess_.channels) + " channels");
  }
  const nn::Dims dims = image_dims(x);
  Tensor grad(x.shape());
  nn::Trace trace;
  std::vector<double> feature_grad(feature_dim_);
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    backbone_.forward(x.image(n), dims, trace);
    const double z = head_logit(trace.output());
    head_backward(trace.output(), bce_grad(z, labels[n]), feature_grad);
    backbone_.backward(trace, feature_grad, grad.image(n), {});
  }
  return grad;
}

std::uint64_t Detector::checksum() const {
  const auto b = backbone_.params();
  const auto h = head_.params();
  std::uint64_t sum = fnv1a(b.data(), b.size_bytes());
  return fnv1a(h.data(), h.size_bytes(), sum);
}

std::vector<int> predict(const Classifier& model, const Tensor& x) {
  const auto z = model.logits(x);
  std::vector<int> out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), predict_label);
  return out;
}

std::vector<double> forward_logits(const Classifier& model, const Tensor& x) { return model.logits(x); }

Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  if (!model.has_gradient()) throw CapabilityError("model '" + model.name() + "' does not provide gradients");
  return model.loss_gradient(x, labels);
}

double accuracy(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  if (x.shape().n == 0) return 0.0;
  check_labels(x, labels, "accuracy");
  const auto pred = predict(model, x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace fpba
