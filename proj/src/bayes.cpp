#include "fpba/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fpba/checkpoint.hpp"
#include "fpba/error.hpp"

namespace fpba {

namespace {

constexpr std::uint64_t kHeadInitStream = 500;
constexpr std::uint64_t kBatchStream = 1000;
constexpr std::uint64_t kNoiseStream = 2000;

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

AppendedHead::AppendedHead(std::size_t feature_dim, Rng& rng) : feature_dim_(feature_dim) {
  if (feature_dim == 0) throw InvalidParameter("appended head: feature dimension must be positive");
  const std::size_t h = hidden_width(feature_dim);
  net_ = nn::Sequential({nn::linear(feature_dim, h), nn::sigmoid(), nn::linear(h, 1, true)});
  net_.init(rng);
}

double AppendedHead::logit(std::span<const double> features) const {
  return net_.forward(features, {feature_dim_, 1, 1})[0];
}

void AppendedHead::backward(std::span<const double> features, double dlogit, std::span<double> feature_grad,
                            std::span<double> param_grad) const {
  nn::Trace trace;
  net_.forward(features, {feature_dim_, 1, 1}, trace);
  std::vector<double> g(feature_dim_);
  const double gy[1] = {dlogit};
  net_.backward(trace, gy, g, param_grad);
  for (std::size_t i = 0; i < feature_dim_; ++i) feature_grad[i] += g[i];
}

// ---------------------------------------------------------------------------
// SGHMC

void SghmcConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidParameter("sghmc: step_size must be > 0");
  if (!(friction > 0.0) || !std::isfinite(friction)) throw InvalidParameter("sghmc: friction must be > 0");
  if (!(initial_preconditioner > 0.0)) throw InvalidParameter("sghmc: initial_preconditioner must be > 0");
  if (!(initial_tau >= 1.0)) throw InvalidParameter("sghmc: initial_tau must be >= 1");
  if (!(prior_precision >= 0.0)) throw InvalidParameter("sghmc: prior_precision must be >= 0");
}

void to_json(nlohmann::json& j, const SghmcConfig& c) {
  j = {{"step_size", c.step_size},
       {"friction", c.friction},
       {"initial_preconditioner", c.initial_preconditioner},
       {"initial_tau", c.initial_tau},
       {"adapt_tau", c.adapt_tau},
       {"scale_step_by_batch", c.scale_step_by_batch},
       {"prior_precision", c.prior_precision},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SghmcConfig& c) {
  const SghmcConfig d;
  c.step_size = j.value("step_size", d.step_size);
  c.friction = j.value("friction", d.friction);
  c.initial_preconditioner = j.value("initial_preconditioner", d.initial_preconditioner);
  c.initial_tau = j.value("initial_tau", d.initial_tau);
  c.adapt_tau = j.value("adapt_tau", d.adapt_tau);
  c.scale_step_by_batch = j.value("scale_step_by_batch", d.scale_step_by_batch);
  c.prior_precision = j.value("prior_precision", d.prior_precision);
  c.seed = j.value("seed", d.seed);
}

SghmcState SghmcState::create(std::size_t params, const SghmcConfig& cfg, double step_size, std::uint64_t stream) {
  cfg.validate();
  SghmcState s;
  s.step_size = step_size;
  s.friction = cfg.friction;
  s.preconditioner.assign(params, cfg.initial_preconditioner);
  s.tau.assign(params, cfg.initial_tau);
  s.grad_average.assign(params, 0.0);
  s.adapt_tau = cfg.adapt_tau;
  s.rng = make_rng(cfg.seed, stream);
  s.validate();
  return s;
}

void SghmcState::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidParameter("sghmc: step_size must be > 0");
  if (!(friction > 0.0)) throw InvalidParameter("sghmc: friction must be > 0");
  if (tau.size() != preconditioner.size() || grad_average.size() != preconditioner.size()) {
    throw InvalidParameter("sghmc: state vectors disagree in length");
  }
  for (double c : preconditioner) {
    if (!(c > 0.0)) throw InvalidParameter("sghmc: preconditioner entries must be > 0");
  }
  for (double t : tau) {
    if (!(t >= 1.0)) throw InvalidParameter("sghmc: tau entries must be >= 1");
  }
}

void sghmc_step(std::span<double> params, std::span<const double> grad, SghmcState& state) {
  const std::size_t n = params.size();
  if (grad.size() != n || state.preconditioner.size() != n) {
    throw InvalidInput("sghmc_step: gradient has " + std::to_string(grad.size()) + " entries, parameters " +
                       std::to_string(n) + ", state " + std::to_string(state.preconditioner.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grad[i])) {
      throw DivergenceError("sghmc_step: non-finite gradient",
                            "step=" + std::to_string(state.steps) + " index=" + std::to_string(i) +
                                " grad=" + std::to_string(grad[i]) + " C=" + std::to_string(state.preconditioner[i]));
    }
  }
  const double s2 = state.step_size * state.step_size;
  const double s3 = s2 * state.step_size;
  const double s4 = s2 * s2;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = state.preconditioner[i];
    const double z = normal(state.rng);
    const double var = 2.0 * state.friction * s3 / c - s4;
    params[i] -= s2 / std::sqrt(c) * grad[i];
    if (var > 0.0) params[i] += std::sqrt(var) * z;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double h = grad[i];
    const double r = 1.0 / state.tau[i];
    double& c = state.preconditioner[i];
    c = std::max((1.0 - r) * c + r * h * h, std::numeric_limits<double>::min());
    if (state.adapt_tau) {
      double& g = state.grad_average[i];
      g = (1.0 - r) * g + r * h;
      // tau = xi + 1 with xi <- 1 + xi (1 - g^2/C); g^2 <= C keeps tau >= 2 and avoids the r = 1 fixed point.
      state.tau[i] = 2.0 + (state.tau[i] - 1.0) * std::max(1.0 - g * g / c, 0.0);
    }
  }
  ++state.steps;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(params[i])) {
      throw DivergenceError("sghmc_step: parameters became non-finite",
                            "step=" + std::to_string(state.steps) + " index=" + std::to_string(i) +
                                " grad=" + std::to_string(grad[i]) + " C=" + std::to_string(state.preconditioner[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// Ensemble

BayesEnsemble::BayesEnsemble(Detector base, std::size_t heads, std::uint64_t seed)
    : base_(std::move(base)), base_checksum_(base_.checksum()) {
  if (heads == 0) throw InvalidParameter("bayes ensemble: K must be >= 1");
  heads_.reserve(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    Rng rng = make_rng(seed, kHeadInitStream + k);
    heads_.emplace_back(base_.feature_dim(), rng);
  }
}

const AppendedHead& BayesEnsemble::head(std::size_t k) const {
  if (k >= heads_.size()) {
    throw InvalidParameter("head index " + std::to_string(k) + " out of range (K=" + std::to_string(size()) + ")");
  }
  return heads_[k];
}

AppendedHead& BayesEnsemble::head(std::size_t k) {
  return const_cast<AppendedHead&>(static_cast<const BayesEnsemble&>(*this).head(k));
}

void BayesEnsemble::mark_post_trained(nlohmann::json sampler_manifest) {
  post_trained_ = true;
  sampler_manifest_ = std::move(sampler_manifest);
}

double BayesEnsemble::combined_logit(std::size_t k, std::span<const double> features) const {
  return head(k).logit(features) + base_.head_logit(features);
}

std::vector<double> BayesEnsemble::combined_logits(std::size_t k, const Tensor& x) const {
  head(k);
  check_batch(x, "combined_logits");
  if (x.shape().c != base_.preprocess().channels) {
    throw InvalidInput("combined_logits: detector expects " + std::to_string(base_.preprocess().channels) +
                       " channels");
  }
  const nn::Dims dims = image_dims(x);
  std::vector<double> out(x.shape().n);
  nn::Trace trace;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    base_.backbone_forward(x.image(n), dims, trace);
    out[n] = combined_logit(k, trace.output());
  }
  return out;
}

std::vector<double> BayesEnsemble::bma_predict(const Tensor& x) const {
  check_batch(x, "bma_predict");
  if (x.shape().c != base_.preprocess().channels) {
    throw InvalidInput("bma_predict: detector expects " + std::to_string(base_.preprocess().channels) + " channels");
  }
  const nn::Dims dims = image_dims(x);
  std::vector<double> out(x.shape().n, 0.0);
  nn::Trace trace;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    base_.backbone_forward(x.image(n), dims, trace);
    // Mean as p0 + mean(p_k - p0): exact when every head agrees with the first.
    const double p0 = sigmoid(combined_logit(0, trace.output()));
    double spread = 0.0;
    for (std::size_t k = 1; k < heads_.size(); ++k) spread += sigmoid(combined_logit(k, trace.output())) - p0;
    out[n] = p0 + spread / static_cast<double>(heads_.size());
  }
  return out;
}

void BayesEnsemble::save(const std::filesystem::path& path) const {
  Archive ar;
  for (std::size_t k = 0; k < heads_.size(); ++k) put_params(ar, "head" + std::to_string(k) + ".", heads_[k].net());
  const nlohmann::json manifest = {{"format", "fpba-ensemble/1"},
                                   {"base_checksum", hex64(base_checksum_)},
                                   {"base_arch", base_.arch_tag()},
                                   {"heads", heads_.size()},
                                   {"feature_dim", base_.feature_dim()},
                                   {"hidden_width", AppendedHead::hidden_width(base_.feature_dim())},
                                   {"post_trained", post_trained_},
                                   {"sampler", sampler_manifest_}};
  ar.put_text("manifest.json", manifest.dump(2));
  ar.save(path);
}

BayesEnsemble BayesEnsemble::load(const std::filesystem::path& path, Detector base) {
  if (!std::filesystem::exists(path)) throw IoError("ensemble checkpoint '" + path.string() + "' not found");
  const Archive ar = Archive::load(path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ar.text("manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ensemble manifest: ") + e.what());
  }
  if (m.value("format", "") != "fpba-ensemble/1") throw FormatError("ensemble: not an ensemble checkpoint");
  try {
    if (m.at("base_checksum").get<std::string>() != hex64(base.checksum())) {
      throw PreconditionError("ensemble: base detector checksum differs from the one the heads were trained on");
    }
    if (m.at("feature_dim").get<std::size_t>() != base.feature_dim()) {
      throw FormatError("ensemble: feature dimension disagrees with base detector");
    }
    BayesEnsemble e(std::move(base), m.at("heads").get<std::size_t>(), 0);
    for (std::size_t k = 0; k < e.size(); ++k) get_params(ar, "head" + std::to_string(k) + ".", e.heads_[k].net());
    e.post_trained_ = m.value("post_trained", false);
    e.sampler_manifest_ = m.value("sampler", nlohmann::json::object());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("ensemble manifest: ") + ex.what());
  }
}

Tensor EnsembleMember::loss_gradient(const Tensor& x, std::span<const int> labels) const {
  const Detector& base = ensemble_->base();
  const AppendedHead& h = ensemble_->head(k_);
  if (!base.has_gradient()) throw CapabilityError("ensemble member: base detector has no input gradient");
  check_batch(x, "input_gradient");
  check_labels(x, labels, "input_gradient");
  const nn::Dims dims = image_dims(x);
  Tensor grad(x.shape());
  nn::Trace trace;
  std::vector<double> fg(base.feature_dim());
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    base.backbone_forward(x.image(n), dims, trace);
    const double dz = bce_grad(ensemble_->combined_logit(k_, trace.output()), labels[n]);
    base.head_backward(trace.output(), dz, fg);
    h.backward(trace.output(), dz, fg, {});
    base.backbone_backward(trace, fg, grad.image(n));
  }
  return grad;
}

std::vector<double> combined_logits(const BayesEnsemble& e, std::size_t k, const Tensor& x) {
  return e.combined_logits(k, x);
}

std::vector<double> bma_predict(const BayesEnsemble& e, const Tensor& x) { return e.bma_predict(x); }

// ---------------------------------------------------------------------------
// Post-training

void PostTrainConfig::validate() const {
  if (heads == 0) throw InvalidParameter("post_train: heads must be >= 1");
  if (outer_iterations == 0) throw InvalidParameter("post_train: outer_iterations must be >= 1");
  if (inner_steps == 0) throw InvalidParameter("post_train: inner_steps must be >= 1");
  if (batch_size == 0) throw InvalidParameter("post_train: batch_size must be >= 1");
  sampler.validate();
}

void to_json(nlohmann::json& j, const PostTrainConfig& c) {
  j = {{"heads", c.heads},
       {"outer_iterations", c.outer_iterations},
       {"inner_steps", c.inner_steps},
       {"batch_size", c.batch_size},
       {"interleaved", c.interleaved},
       {"sampler", c.sampler}};
}

void from_json(const nlohmann::json& j, PostTrainConfig& c) {
  const PostTrainConfig d;
  c.heads = j.value("heads", d.heads);
  c.outer_iterations = j.value("outer_iterations", d.outer_iterations);
  c.inner_steps = j.value("inner_steps", d.inner_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.interleaved = j.value("interleaved", d.interleaved);
  c.sampler = j.value("sampler", d.sampler);
}

double head_potential_grad(const BayesEnsemble& e, std::size_t k, std::span<const std::vector<double>> features,
                           std::span<const int> labels, double dataset_size, double prior_precision,
                           std::span<double> grad) {
  const AppendedHead& h = e.head(k);
  if (features.size() != labels.size() || features.empty()) {
    throw InvalidInput("head_potential_grad: need a non-empty batch with one label per feature vector");
  }
  if (grad.size() != h.params().size()) throw InvalidInput("head_potential_grad: gradient buffer has wrong size");
  std::fill(grad.begin(), grad.end(), 0.0);
  const double scale = dataset_size / static_cast<double>(features.size());
  std::vector<double> fg(e.base().feature_dim());
  double nll = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double z = e.combined_logit(k, features[i]);
    nll += bce_loss(z, labels[i]);
    h.backward(features[i], scale * bce_grad(z, labels[i]), fg, grad);
  }
  const auto theta = h.params();
  for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += prior_precision * theta[p];
  return nll / static_cast<double>(features.size());
}

BayesEnsemble post_train(const Detector& base, const LabeledDataset& data, const PostTrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const auto train_idx = data.indices(Split::Train);
  if (train_idx.empty()) throw InvalidDataset("post_train: empty train split");

  BayesEnsemble e(base, cfg.heads, cfg.sampler.seed);
  const std::uint64_t before = e.base().checksum();

  // The backbone is frozen, so features are computed once.
  const auto view = data.view(train_idx);
  const nn::Dims dims = image_dims(view.images);
  std::vector<std::vector<double>> features(train_idx.size());
  {
    nn::Trace trace;
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
      e.base().backbone_forward(view.images.image(i), dims, trace);
      features[i].assign(trace.output().begin(), trace.output().end());
    }
  }

  const double n_data = static_cast<double>(train_idx.size());
  const std::size_t batch = std::min(cfg.batch_size, train_idx.size());
  double step = cfg.sampler.step_size;
  if (cfg.sampler.scale_step_by_batch) step *= std::sqrt(static_cast<double>(batch) / n_data);

  const std::size_t n_params = e.head(0).params().size();
  std::vector<SghmcState> states;
  std::vector<Rng> batch_rngs;
  std::vector<std::vector<std::size_t>> orders(cfg.heads);
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    states.push_back(SghmcState::create(n_params, cfg.sampler, step, kNoiseStream + k));
    batch_rngs.push_back(make_rng(cfg.sampler.seed, kBatchStream + k));
    orders[k].resize(train_idx.size());
    std::iota(orders[k].begin(), orders[k].end(), 0);
  }

  std::vector<std::vector<double>> bf(batch);
  std::vector<int> bl(batch);
  std::vector<double> grad(n_params);
  std::vector<double> last_loss(cfg.heads, 0.0);

  auto run = [&](std::size_t j, std::size_t k) {
    // Partial Fisher-Yates: the first `batch` entries become the mini-batch.
    auto& ord = orders[k];
    for (std::size_t i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, ord.size() - 1);
      std::swap(ord[i], ord[pick(batch_rngs[k])]);
      bf[i] = features[ord[i]];
      bl[i] = view.labels[ord[i]];
    }
    AppendedHead& h = e.head(k);
    for (std::size_t m = 0; m < cfg.inner_steps; ++m) {
      const double loss = head_potential_grad(e, k, bf, bl, n_data, cfg.sampler.prior_precision, grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("post_train: loss became non-finite",
                              "iteration=" + std::to_string(j) + " head=" + std::to_string(k) +
                                  " inner_step=" + std::to_string(m) + " sampler_steps=" +
                                  std::to_string(states[k].steps));
      }
      sghmc_step(h.params(), grad, states[k]);
      last_loss[k] = loss;
    }
    if (cfg.on_step) cfg.on_step(j, k, last_loss[k]);
  };

  if (cfg.interleaved) {
    for (std::size_t j = 0; j < cfg.outer_iterations; ++j)
      for (std::size_t k = 0; k < cfg.heads; ++k) run(j, k);
  } else {
    for (std::size_t k = 0; k < cfg.heads; ++k)
      for (std::size_t j = 0; j < cfg.outer_iterations; ++j) run(j, k);
  }

  if (e.base().checksum() != before) throw Error("post_train: base detector parameters changed");

  nlohmann::json chains = nlohmann::json::array();
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const auto& s = states[k];
    const double c_mean = std::accumulate(s.preconditioner.begin(), s.preconditioner.end(), 0.0) / n_params;
    const double tau_mean = std::accumulate(s.tau.begin(), s.tau.end(), 0.0) / n_params;
    chains.push_back({{"head", k},
                      {"steps", s.steps},
                      {"final_loss", last_loss[k]},
                      {"preconditioner_mean", c_mean},
                      {"tau_mean", tau_mean},
                      {"rng_state_hash", hex64(fnv1a(rng_state(s.rng).data(), rng_state(s.rng).size()))}});
  }
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < cfg.heads; ++a)
    for (std::size_t b = a + 1; b < cfg.heads; ++b)
      min_dist = std::min(min_dist, std::sqrt(squared_distance(e.head(a).params(), e.head(b).params())));
  e.mark_post_trained({{"config", cfg},
                       {"effective_step_size", step},
                       {"train_samples", train_idx.size()},
                       {"min_pairwise_distance", cfg.heads > 1 ? min_dist : 0.0},
                       {"chains", chains}});
  return e;
}

}  // namespace fpba
