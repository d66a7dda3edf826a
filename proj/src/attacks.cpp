#include "fpba/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "fpba/error.hpp"

namespace fpba {

namespace {

constexpr std::uint64_t kStartStream = 11;
constexpr std::uint64_t kSpectrumStream = 12;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor random_start(const Tensor& x, double epsilon, std::uint64_t seed) {
  Rng rng = make_rng(seed, kStartStream);
  Tensor out = x;
  for (double& v : out.values()) v += uniform(rng, -epsilon, epsilon);
  return project(out, x, epsilon);
}

void check_inputs(const Tensor& x, std::span<const int> labels, const char* op) {
  check_batch(x, op);
  check_labels(x, labels, op);
  if (!x.in_unit_range()) throw InvalidInput(std::string(op) + ": images must lie in [0,1]");
}

void require_gradient(const Classifier& m, const char* op) {
  if (!m.has_gradient()) throw CapabilityError(std::string(op) + ": model '" + m.name() + "' has no input gradient");
}

// Average of gradients over N spectrum draws, mapped back to pixel space.
template <typename Grad>
Tensor spectrum_average(const Tensor& x_adv, const AttackConfig& cfg, Rng& rng, const Grad& grad) {
  Tensor acc(x_adv.shape(), 0.0);
  const Tensor* src = &x_adv;
  Tensor chained;
  for (std::size_t n = 0; n < cfg.spectrum_samples; ++n) {
    SpectrumDraw d = spectrum_transform_draw(*src, cfg.spectrum.rho, cfg.spectrum.sigma_noise, rng);
    const Tensor g = spectrum_transform_backward(grad(d.output), d.mask);
    for (std::size_t i = 0; i < acc.size(); ++i) acc.values()[i] += g.values()[i];
    if (cfg.sequential_spectrum) {
      chained = std::move(d.output);
      src = &chained;
    }
  }
  const double inv = 1.0 / static_cast<double>(cfg.spectrum_samples);
  for (double& v : acc.values()) v *= inv;
  return acc;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Ifgsm: return "ifgsm";
    case Method::Mifgsm: return "mifgsm";
    case Method::Pgd: return "pgd";
    case Method::Spectrum: return "spectrum";
    case Method::Ensemble: return "ensemble";
    case Method::Fpba: return "fpba";
  }
  return "?";
}

Method parse_method(const std::string& tag) {
  for (Method m : all_methods()) {
    if (to_string(m) == tag) return m;
  }
  throw InvalidParameter("unknown attack method '" + tag + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> m = {Method::Ifgsm,    Method::Mifgsm,   Method::Pgd,
                                        Method::Spectrum, Method::Ensemble, Method::Fpba};
  return m;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidParameter("attack: epsilon must lie in [0,1]");
  // epsilon = 0 is a valid no-op budget whatever the step size.
  if (!(alpha >= 0.0) || (epsilon > 0.0 && alpha > epsilon)) {
    throw InvalidParameter("attack: alpha must lie in [0, epsilon]");
  }
  if (iterations == 0) throw InvalidParameter("attack: iterations must be >= 1");
  if (spectrum_samples == 0) throw InvalidParameter("attack: spectrum_samples must be >= 1");
  if (!(momentum >= 0.0) || !std::isfinite(momentum)) throw InvalidParameter("attack: momentum must be >= 0");
  if (heads == 0) throw InvalidParameter("attack: heads must be >= 1");
  spectrum.validate();
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"alpha", c.alpha},
       {"iterations", c.iterations},
       {"spectrum_samples", c.spectrum_samples},
       {"momentum", c.momentum},
       {"random_start", c.random_start},
       {"seed", c.seed},
       {"rho", c.spectrum.rho},
       {"sigma_noise", c.spectrum.sigma_noise},
       {"heads", c.heads},
       {"sequential_spectrum", c.sequential_spectrum}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  const AttackConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.alpha = j.value("alpha", d.alpha);
  c.iterations = j.value("iterations", d.iterations);
  c.spectrum_samples = j.value("spectrum_samples", d.spectrum_samples);
  c.momentum = j.value("momentum", d.momentum);
  c.random_start = j.value("random_start", d.random_start);
  c.seed = j.value("seed", d.seed);
  c.spectrum.rho = j.value("rho", d.spectrum.rho);
  c.spectrum.sigma_noise = j.value("sigma_noise", d.spectrum.sigma_noise);
  c.heads = j.value("heads", d.heads);
  c.sequential_spectrum = j.value("sequential_spectrum", d.sequential_spectrum);
}

double AttackResult::success_fraction() const {
  if (success.empty()) return 0.0;
  std::size_t s = 0;
  for (auto v : success) s += v;
  return static_cast<double>(s) / static_cast<double>(success.size());
}

Tensor project(const Tensor& x_adv, const Tensor& x, double epsilon) {
  if (x_adv.shape() != x.shape()) {
    throw InvalidInput("project: shapes " + x_adv.shape().str() + " and " + x.shape().str() + " differ");
  }
  Tensor out(x.shape());
  const auto a = x_adv.values();
  const auto b = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = std::min(std::max(a[i], b[i] - epsilon), b[i] + epsilon);
    o[i] = std::min(std::max(v, 0.0), 1.0);
  }
  return out;
}

AttackResult sign_attack(const Classifier& judge, const Tensor& x, std::span<const int> labels,
                         const AttackConfig& cfg, const Tensor& start, const GradientFn& grad, bool use_momentum) {
  AttackResult r;
  r.adversarial = start;
  if (cfg.epsilon > 0.0) {
    const Shape s = x.shape();
    Tensor velocity(s, 0.0);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      Tensor g = grad(r.adversarial, it);
      if (use_momentum) {
        for (std::size_t n = 0; n < s.n; ++n) {
          auto gi = g.image(n);
          auto vi = velocity.image(n);
          double l1 = 0.0;
          for (double v : gi) l1 += std::abs(v);
          const double inv = l1 > 0.0 ? 1.0 / l1 : 0.0;
          for (std::size_t i = 0; i < gi.size(); ++i) {
            vi[i] = cfg.momentum * vi[i] + gi[i] * inv;
            gi[i] = vi[i];
          }
        }
      }
      Tensor next = r.adversarial;
      auto nv = next.values();
      const auto gv = g.values();
      for (std::size_t i = 0; i < nv.size(); ++i) nv[i] += cfg.alpha * sign(gv[i]);
      r.adversarial = project(next, x, cfg.epsilon);
      if (cfg.record_trajectory) r.trajectory.push_back(r.adversarial);
      ++r.iterations;
    }
  }
  const auto z = judge.logits(r.adversarial);
  r.success.resize(z.size());
  r.linf.resize(z.size());
  for (std::size_t n = 0; n < z.size(); ++n) {
    r.success[n] = predict_label(z[n]) != labels[n] ? 1 : 0;
    double m = 0.0;
    const auto a = r.adversarial.image(n);
    const auto b = x.image(n);
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    r.linf[n] = m;
  }
  return r;
}

AttackResult ifgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  check_inputs(x, labels, "ifgsm");
  require_gradient(model, "ifgsm");
  return sign_attack(model, x, labels, cfg, x,
                     [&](const Tensor& xa, std::size_t) { return model.loss_gradient(xa, labels); }, false);
}

AttackResult mifgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  check_inputs(x, labels, "mifgsm");
  require_gradient(model, "mifgsm");
  return sign_attack(model, x, labels, cfg, x,
                     [&](const Tensor& xa, std::size_t) { return model.loss_gradient(xa, labels); }, true);
}

AttackResult pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  check_inputs(x, labels, "pgd");
  require_gradient(model, "pgd");
  const Tensor start = cfg.random_start ? random_start(x, cfg.epsilon, cfg.seed) : x;
  return sign_attack(model, x, labels, cfg, start,
                     [&](const Tensor& xa, std::size_t) { return model.loss_gradient(xa, labels); }, false);
}

AttackResult spectrum_attack(const Classifier& model, const Tensor& x, std::span<const int> labels,
                             const AttackConfig& cfg) {
  cfg.validate();
  check_inputs(x, labels, "spectrum_attack");
  require_gradient(model, "spectrum_attack");
  Rng rng = make_rng(cfg.seed, kSpectrumStream);
  return sign_attack(
      model, x, labels, cfg, x,
      [&](const Tensor& xa, std::size_t) {
        return spectrum_average(xa, cfg, rng, [&](const Tensor& t) { return model.loss_gradient(t, labels); });
      },
      false);
}

namespace {

class MeanLogit : public Classifier {
 public:
  explicit MeanLogit(std::span<const Classifier* const> models) : models_(models) {}
  std::vector<double> logits(const Tensor& x) const override {
    std::vector<double> acc = models_[0]->logits(x);
    for (std::size_t m = 1; m < models_.size(); ++m) {
      const auto z = models_[m]->logits(x);
      for (std::size_t i = 0; i < z.size(); ++i) acc[i] += z[i];
    }
    for (double& v : acc) v /= static_cast<double>(models_.size());
    return acc;
  }
  Tensor loss_gradient(const Tensor& x, std::span<const int> labels) const override {
    Tensor acc = models_[0]->loss_gradient(x, labels);
    for (std::size_t m = 1; m < models_.size(); ++m) {
      const Tensor g = models_[m]->loss_gradient(x, labels);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.values()[i] += g.values()[i];
    }
    const double inv = 1.0 / static_cast<double>(models_.size());
    for (double& v : acc.values()) v *= inv;
    return acc;
  }

 private:
  std::span<const Classifier* const> models_;
};

}  // namespace

AttackResult ensemble_attack(std::span<const Classifier* const> models, const Tensor& x,
                             std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  if (models.empty()) throw InvalidParameter("ensemble_attack: empty model list");
  check_inputs(x, labels, "ensemble_attack");
  for (const Classifier* m : models) {
    if (m == nullptr) throw InvalidParameter("ensemble_attack: null model");
    require_gradient(*m, "ensemble_attack");
  }
  const MeanLogit mean(models);
  const Tensor start = cfg.random_start ? random_start(x, cfg.epsilon, cfg.seed) : x;
  return sign_attack(mean, x, labels, cfg, start,
                     [&](const Tensor& xa, std::size_t) { return mean.loss_gradient(xa, labels); }, false);
}

Tensor ensemble_head_gradient(const BayesEnsemble& e, std::size_t heads, const Tensor& x,
                              std::span<const int> labels) {
  const Detector& base = e.base();
  const nn::Dims dims = image_dims(x);
  const std::size_t f = base.feature_dim();
  const double inv_k = 1.0 / static_cast<double>(heads);
  Tensor grad(x.shape());
  nn::Trace trace;
  std::vector<double> fg(f), acc(f);
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    base.backbone_forward(x.image(n), dims, trace);
    const auto feat = trace.output();
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < heads; ++k) {
      const double dz = bce_grad(e.combined_logit(k, feat), labels[n]);
      base.head_backward(feat, dz, fg);
      e.head(k).backward(feat, dz, fg, {});
      for (std::size_t i = 0; i < f; ++i) acc[i] += fg[i];
    }
    for (double& v : acc) v *= inv_k;
    base.backbone_backward(trace, acc, grad.image(n));
  }
  return grad;
}

Tensor fpba_gradient(const BayesEnsemble& e, const Tensor& x_adv, std::span<const int> labels,
                     const AttackConfig& cfg, Rng& rng) {
  const std::size_t k = cfg.heads;
  Tensor total =
      spectrum_average(x_adv, cfg, rng, [&](const Tensor& t) { return ensemble_head_gradient(e, k, t, labels); });
  const Tensor spatial = ensemble_head_gradient(e, k, x_adv, labels);
  for (std::size_t i = 0; i < total.size(); ++i) total.values()[i] += spatial.values()[i];
  return total;
}

AttackResult fpba(const BayesEnsemble& e, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  if (!e.post_trained()) throw PreconditionError("fpba: ensemble has not been post-trained");
  if (cfg.heads > e.size()) {
    throw InvalidParameter("fpba: config asks for " + std::to_string(cfg.heads) + " heads, ensemble has " +
                           std::to_string(e.size()));
  }
  check_inputs(x, labels, "fpba");
  require_gradient(e.base(), "fpba");
  if (x.shape().c != e.base().preprocess().channels) throw InvalidInput("fpba: channel count mismatch");
  Rng rng = make_rng(cfg.seed, kSpectrumStream);
  return sign_attack(
      e.base(), x, labels, cfg, x, [&](const Tensor& xa, std::size_t) { return fpba_gradient(e, xa, labels, cfg, rng); },
      false);
}

AttackResult run_attack(Method m, const AttackTargets& t, const Tensor& x, std::span<const int> labels,
                        const AttackConfig& cfg) {
  auto need_model = [&]() -> const Classifier& {
    if (t.model == nullptr) throw InvalidParameter(to_string(m) + ": no model given");
    return *t.model;
  };
  switch (m) {
    case Method::Ifgsm: return ifgsm(need_model(), x, labels, cfg);
    case Method::Mifgsm: return mifgsm(need_model(), x, labels, cfg);
    case Method::Pgd: return pgd(need_model(), x, labels, cfg);
    case Method::Spectrum: return spectrum_attack(need_model(), x, labels, cfg);
    case Method::Ensemble: return ensemble_attack(t.ensemble_members, x, labels, cfg);
    case Method::Fpba:
      if (t.bayes == nullptr) throw InvalidParameter("fpba: no Bayesian ensemble given");
      return fpba(*t.bayes, x, labels, cfg);
  }
  throw InvalidParameter("unknown method");
}

}  // namespace fpba
