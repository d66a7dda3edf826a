#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fpba/data.hpp"
#include "fpba/detector.hpp"
#include "fpba/nn.hpp"
#include "fpba/rng.hpp"

namespace fpba {

/// Small MLP g(features) -> logit appended behind a frozen backbone:
/// linear(F, H) -> sigmoid -> linear(H, 1), H = min(F, 128). The output layer
/// starts at zero so a fresh head leaves the base logits untouched.
class AppendedHead {
 public:
  AppendedHead() = default;
  AppendedHead(std::size_t feature_dim, Rng& rng);

  static std::size_t hidden_width(std::size_t feature_dim) { return std::min<std::size_t>(feature_dim, 128); }

  std::size_t feature_dim() const { return feature_dim_; }
  double logit(std::span<const double> features) const;
  /// Accumulates d(head logit)/d(features) * dlogit into feature_grad and,
  /// when param_grad is non-empty, d/d(params) * dlogit into param_grad.
  void backward(std::span<const double> features, double dlogit, std::span<double> feature_grad,
                std::span<double> param_grad) const;

  nn::Sequential& net() { return net_; }
  const nn::Sequential& net() const { return net_; }
  std::span<double> params() { return net_.params(); }
  std::span<const double> params() const { return net_.params(); }

 private:
  std::size_t feature_dim_ = 0;
  nn::Sequential net_;
};

/// Step size sigma, friction F, per-parameter preconditioner C (EMA of h^2)
/// with averaging horizon tau. With `adapt_tau` the horizon follows the
/// scale-adapted scheme tau <- tau * (1 - g^2 / C) + 1, where g is the EMA of h.
struct SghmcConfig {
  double step_size = 0.1;
  double friction = 0.05;
  double initial_preconditioner = 1.0;
  double initial_tau = 1.5;
  bool adapt_tau = true;
  bool scale_step_by_batch = false;  // step_size *= sqrt(batch / dataset)
  double prior_precision = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SghmcConfig& c);
void from_json(const nlohmann::json& j, SghmcConfig& c);

struct SghmcState {
  double step_size = 0.1;
  double friction = 0.05;
  std::vector<double> preconditioner;  // C, strictly positive
  std::vector<double> tau;
  std::vector<double> grad_average;    // g, only used when adapting tau
  bool adapt_tau = true;
  std::size_t steps = 0;
  Rng rng;

  static SghmcState create(std::size_t params, const SghmcConfig& cfg, double step_size, std::uint64_t stream);
  void validate() const;
};

/// One update of the adaptive SGHMC sampler:
///   theta <- theta - sigma^2 C^(-1/2) h + N(0, max(0, 2 F sigma^3 C^(-1) - sigma^4))
///   C     <- (1 - 1/tau) C + (1/tau) h^2
/// Throws DivergenceError when h or the result is non-finite.
void sghmc_step(std::span<double> params, std::span<const double> grad, SghmcState& state);

/// Frozen detector plus K appended heads; logits for head k are
/// g_k(f(x)) + f_c(f(x)).
class BayesEnsemble {
 public:
  BayesEnsemble(Detector base, std::size_t heads, std::uint64_t seed);

  std::size_t size() const { return heads_.size(); }
  const Detector& base() const { return base_; }
  const AppendedHead& head(std::size_t k) const;
  AppendedHead& head(std::size_t k);
  std::uint64_t base_checksum() const { return base_checksum_; }
  bool post_trained() const { return post_trained_; }
  void mark_post_trained(nlohmann::json sampler_manifest);
  const nlohmann::json& sampler_manifest() const { return sampler_manifest_; }

  /// Combined logit for one image's backbone features.
  double combined_logit(std::size_t k, std::span<const double> features) const;

  std::vector<double> combined_logits(std::size_t k, const Tensor& x) const;
  /// (1/K) sum_k sigmoid(combined logit k).
  std::vector<double> bma_predict(const Tensor& x) const;

  void save(const std::filesystem::path& path) const;
  /// `base` must be the detector the ensemble was trained on; its checksum is
  /// compared with the recorded one.
  static BayesEnsemble load(const std::filesystem::path& path, Detector base);

 private:
  Detector base_;
  std::uint64_t base_checksum_ = 0;
  std::vector<AppendedHead> heads_;
  bool post_trained_ = false;
  nlohmann::json sampler_manifest_ = nlohmann::json::object();
};

/// Convenience views of one ensemble member as a classifier.
class EnsembleMember : public Classifier {
 public:
  EnsembleMember(const BayesEnsemble& e, std::size_t k) : ensemble_(&e), k_(k) {}
  std::vector<double> logits(const Tensor& x) const override { return ensemble_->combined_logits(k_, x); }
  Tensor loss_gradient(const Tensor& x, std::span<const int> labels) const override;
  std::string name() const override { return "member-" + std::to_string(k_); }

 private:
  const BayesEnsemble* ensemble_;
  std::size_t k_;
};

std::vector<double> combined_logits(const BayesEnsemble& e, std::size_t k, const Tensor& x);
std::vector<double> bma_predict(const BayesEnsemble& e, const Tensor& x);

struct PostTrainConfig {
  std::size_t heads = 3;             // K
  std::size_t outer_iterations = 200;  // N_tra
  std::size_t inner_steps = 1;       // M per mini-batch
  std::size_t batch_size = 64;
  bool interleaved = true;           // heads alternate per mini-batch; false runs each chain to completion
  SghmcConfig sampler;
  std::function<void(std::size_t iteration, std::size_t head, double loss)> on_step;

  void validate() const;
};

void to_json(nlohmann::json& j, const PostTrainConfig& c);
void from_json(const nlohmann::json& j, PostTrainConfig& c);

/// Samples K heads with SGHMC on the train split while the base detector
/// stays frozen. The potential is the mini-batch estimate of the negative log
/// likelihood scaled to the dataset size plus a Gaussian prior.
BayesEnsemble post_train(const Detector& base, const LabeledDataset& data, const PostTrainConfig& cfg);

/// Gradient of the head potential on a batch of cached features; returns
/// the mean negative log likelihood.
double head_potential_grad(const BayesEnsemble& e, std::size_t k, std::span<const std::vector<double>> features,
                           std::span<const int> labels, double dataset_size, double prior_precision,
                           std::span<double> grad);

}  // namespace fpba
