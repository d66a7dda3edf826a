#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpba/bayes.hpp"
#include "fpba/classifier.hpp"
#include "fpba/frequency.hpp"
#include "fpba/tensor.hpp"
#include "json.hpp"

namespace fpba {

enum class Method { Ifgsm, Mifgsm, Pgd, Spectrum, Ensemble, Fpba };

std::string to_string(Method m);
Method parse_method(const std::string& tag);
const std::vector<Method>& all_methods();

/// Budgets live on the [0,1] pixel scale. All attacks are untargeted and
/// ascend the binary cross-entropy of the true label.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t iterations = 10;
  std::size_t spectrum_samples = 10;  // N
  double momentum = 1.0;              // MI-FGSM decay
  bool random_start = true;           // honoured by pgd and ensemble_attack
  std::uint64_t seed = 0;
  SpectrumTransformParams spectrum;
  std::size_t heads = 3;              // K used by fpba, at most the ensemble size
  bool sequential_spectrum = false;   // chain the N transforms instead of drawing them independently
  bool record_trajectory = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

struct AttackResult {
  Tensor adversarial;
  std::vector<std::uint8_t> success;  // prediction of the attacked model differs from the label
  std::vector<double> linf;
  std::size_t iterations = 0;
  std::vector<Tensor> trajectory;     // iterates x^1..x^I when recorded

  double success_fraction() const;
};

/// Clamps x_adv into [x - eps, x + eps] and then into [0, 1].
Tensor project(const Tensor& x_adv, const Tensor& x, double epsilon);

/// Gradient of the summed loss w.r.t. the current iterate.
using GradientFn = std::function<Tensor(const Tensor& x_adv, std::size_t iteration)>;

/// Shared driver: x^{i+1} = project(x^i + alpha * sign(grad(x^i))), with
/// optional L1-normalised momentum. Success is judged by `judge`.
AttackResult sign_attack(const Classifier& judge, const Tensor& x, std::span<const int> labels,
                         const AttackConfig& cfg, const Tensor& start, const GradientFn& grad, bool use_momentum);

AttackResult ifgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
AttackResult mifgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
/// I-FGSM from a uniform random start in the eps-ball when cfg.random_start.
AttackResult pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
/// Averages input gradients over N random spectrum transforms per step.
AttackResult spectrum_attack(const Classifier& model, const Tensor& x, std::span<const int> labels,
                             const AttackConfig& cfg);
/// Sign steps on the mean of per-model losses; success uses the mean logit.
AttackResult ensemble_attack(std::span<const Classifier* const> models, const Tensor& x,
                             std::span<const int> labels, const AttackConfig& cfg);
/// Frequency-based post-train Bayesian attack on the first cfg.heads heads.
/// Success is judged by the frozen base detector.
AttackResult fpba(const BayesEnsemble& e, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);

/// Gradient direction used by one fpba iteration: the sum over the N spectrum
/// draws (averaged) and the spatial term, each averaged over the K heads.
Tensor fpba_gradient(const BayesEnsemble& e, const Tensor& x_adv, std::span<const int> labels,
                     const AttackConfig& cfg, Rng& rng);

/// Input gradient of (1/K) sum_k loss_k for the first K heads.
Tensor ensemble_head_gradient(const BayesEnsemble& e, std::size_t heads, const Tensor& x,
                              std::span<const int> labels);

/// Dispatch by method. `ensemble_members` feeds Method::Ensemble; `bayes`
/// feeds Method::Fpba. The rest attack `model`.
struct AttackTargets {
  const Classifier* model = nullptr;
  std::vector<const Classifier*> ensemble_members;
  const BayesEnsemble* bayes = nullptr;
};
AttackResult run_attack(Method m, const AttackTargets& targets, const Tensor& x, std::span<const int> labels,
                        const AttackConfig& cfg);

}  // namespace fpba
