#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fpba/attacks.hpp"
#include "fpba/error.hpp"
#include "fpba/eval.hpp"
#include "support.hpp"

using namespace fpba;
using fpba::testing::bit_equal;
using fpba::testing::LinearModel;
using fpba::testing::random_batch;
using fpba::testing::small_detector;

namespace {

LinearModel linear_model(std::size_t dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, 3);
  std::vector<double> w(dim);
  for (auto& v : w) v = normal(rng, 0.0, 0.05);
  w[1] = 0.0;
  return LinearModel(w, 0.1);
}

BayesEnsemble random_ensemble(const Detector& base, std::size_t heads, std::uint64_t seed) {
  BayesEnsemble e(base, heads, seed);
  Rng rng = make_rng(seed, 9);
  for (std::size_t k = 0; k < heads; ++k) {
    for (double& p : e.head(k).params()) p = normal(rng, 0.0, 0.3);
  }
  e.mark_post_trained(nlohmann::json::object());
  return e;
}

AttackConfig plain(std::size_t iterations = 5) {
  AttackConfig c;
  c.iterations = iterations;
  c.random_start = false;
  c.record_trajectory = true;
  return c;
}

bool same_trajectory(const AttackResult& a, const AttackResult& b) {
  if (a.trajectory.size() != b.trajectory.size()) return false;
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    if (!bit_equal(a.trajectory[i], b.trajectory[i])) return false;
  }
  return bit_equal(a.adversarial, b.adversarial) && a.success == b.success;
}

}  // namespace

TEST_CASE("projection equals the min/max oracle") {
  const Tensor x = random_batch(3, 2, 5, 5, 1);
  const Tensor a = random_batch(3, 2, 5, 5, 2, -0.5, 1.5);
  for (double eps : {0.0, 0.03, 0.2, 1.0}) {
    const Tensor p = project(a, x, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double lo = std::max(0.0, x[i] - eps), hi = std::min(1.0, x[i] + eps);
      CHECK(p[i] == std::min(hi, std::max(lo, a[i])));
    }
  }
  CHECK_THROWS_AS(project(a, random_batch(1, 2, 5, 5, 0), 0.1), InvalidInput);
}

TEST_CASE("i-fgsm on a linear model has a closed form") {
  const Tensor x = random_batch(2, 3, 4, 4, 3);
  const LinearModel m = linear_model(48, 1);
  const Labels y = {0, 1};
  const AttackConfig cfg = plain(3);
  const auto r = ifgsm(m, x, y, cfg);
  const double travel = std::min(3.0 * cfg.alpha, cfg.epsilon);
  for (std::size_t n = 0; n < 2; ++n) {
    const double dir = y[n] == 0 ? 1.0 : -1.0;  // raise the logit of a real image, lower a fake one
    for (std::size_t i = 0; i < 48; ++i) {
      const double w = m.weights()[i];
      const double s = w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0);
      const double expected = std::clamp(x.image(n)[i] + dir * s * travel, 0.0, 1.0);
      CHECK(r.adversarial.image(n)[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  CHECK(r.iterations == 3);
  CHECK(r.trajectory.size() == 3);
}

TEST_CASE("momentum does not change a constant-direction attack") {
  const Tensor x = random_batch(2, 3, 4, 4, 4);
  const LinearModel m = linear_model(48, 2);
  const Labels y = {1, 0};
  CHECK(same_trajectory(mifgsm(m, x, y, plain(6)), ifgsm(m, x, y, plain(6))));
}

TEST_CASE("degenerate configurations reduce to i-fgsm bit for bit") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 5);
  const Tensor x = random_batch(3, 3, 8, 8, 5);
  const Labels y = {0, 1, 1};
  AttackConfig cfg = plain(6);
  const auto base = ifgsm(det, x, y, cfg);

  SUBCASE("pgd without a random start") { CHECK(same_trajectory(pgd(det, x, y, cfg), base)); }
  SUBCASE("spectrum attack with one identity draw") {
    cfg.spectrum_samples = 1;
    cfg.spectrum = {0.0, 0.0, 0};
    CHECK(same_trajectory(spectrum_attack(det, x, y, cfg), base));
  }
  SUBCASE("fpba with one zero-initialised head and one identity draw") {
    BayesEnsemble e(det, 1, 0);
    e.mark_post_trained(nlohmann::json::object());
    cfg.heads = 1;
    cfg.spectrum_samples = 1;
    cfg.spectrum = {0.0, 0.0, 0};
    CHECK(same_trajectory(fpba::fpba(e, x, y, cfg), base));
  }
  SUBCASE("ensemble of one model") {
    const Classifier* one[] = {&det};
    CHECK(same_trajectory(ensemble_attack(one, x, y, cfg), base));
  }
}

TEST_CASE("fpba gradient equals its term-by-term expansion") {
  const Detector det = small_detector(Arch::FrequencyMlp, 8, 6);
  const BayesEnsemble e = random_ensemble(det, 3, 6);
  const Tensor x = random_batch(2, 3, 8, 8, 6);
  const Labels y = {1, 0};
  AttackConfig cfg;
  cfg.heads = 2;
  cfg.spectrum_samples = 3;
  cfg.spectrum = {0.4, 0.05, 0};
  Rng rng = make_rng(3);
  Rng replay = rng;
  const Tensor g = fpba_gradient(e, x, y, cfg, rng);

  auto head_mean_grad = [&](const Tensor& t) {
    Tensor acc(t.shape());
    for (std::size_t k = 0; k < cfg.heads; ++k) {
      const Tensor gk = EnsembleMember(e, k).loss_gradient(t, y);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gk[i] / static_cast<double>(cfg.heads);
    }
    return acc;
  };
  Tensor expected(x.shape());
  for (std::size_t n = 0; n < cfg.spectrum_samples; ++n) {
    Tensor noisy = x;
    std::normal_distribution<double> nd(0.0, cfg.spectrum.sigma_noise);
    for (double& v : noisy.values()) v += nd(replay);
    Tensor mask(x.shape());
    std::uniform_real_distribution<double> ud(1.0 - cfg.spectrum.rho, 1.0 + cfg.spectrum.rho);
    for (double& v : mask.values()) v = ud(replay);
    Tensor spec = dct2(noisy);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= mask[i];
    Tensor back = dct2(head_mean_grad(idct2(spec)));
    for (std::size_t i = 0; i < back.size(); ++i) back[i] *= mask[i];
    const Tensor term = idct2(back);
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += term[i] / 3.0;
  }
  const Tensor spatial = head_mean_grad(x);
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += spatial[i];
  CHECK(max_abs_diff(g, expected) < 1e-10);
}

TEST_CASE("ensemble head gradient averages member gradients") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 7);
  const BayesEnsemble e = random_ensemble(det, 3, 7);
  const Tensor x = random_batch(2, 3, 8, 8, 7);
  const Labels y = {0, 1};
  const Tensor g = ensemble_head_gradient(e, 3, x, y);
  Tensor mean(x.shape());
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor gk = EnsembleMember(e, k).loss_gradient(x, y);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += gk[i] / 3.0;
  }
  CHECK(max_abs_diff(g, mean) < 1e-12);
}

TEST_CASE("fpba success is judged by the base detector") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 8);
  const BayesEnsemble e = random_ensemble(det, 3, 8);
  const Tensor x = random_batch(4, 3, 8, 8, 8);
  const Labels y = {0, 1, 0, 1};
  AttackConfig cfg;
  cfg.iterations = 3;
  cfg.spectrum_samples = 2;
  const auto r = fpba::fpba(e, x, y, cfg);
  const auto z = det.logits(r.adversarial);
  for (std::size_t n = 0; n < 4; ++n) CHECK(r.success[n] == (predict_label(z[n]) != y[n]));
  const auto again = fpba::fpba(e, x, y, cfg);
  CHECK(bit_equal(again.adversarial, r.adversarial));
}

TEST_CASE("attack preconditions") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 9);
  const Tensor x = random_batch(1, 3, 8, 8, 9);
  const Labels y = {1};
  AttackConfig cfg;
  BayesEnsemble fresh(det, 2, 0);
  CHECK_THROWS_AS(fpba::fpba(fresh, x, y, cfg), PreconditionError);
  fresh.mark_post_trained(nlohmann::json::object());
  CHECK_THROWS_AS(fpba::fpba(fresh, x, y, cfg), InvalidParameter);  // 3 heads requested

  AttackConfig bad = cfg;
  bad.alpha = 2 * bad.epsilon;
  CHECK_THROWS_AS(ifgsm(det, x, y, bad), InvalidParameter);
  bad = cfg;
  bad.iterations = 0;
  CHECK_THROWS_AS(ifgsm(det, x, y, bad), InvalidParameter);
  Tensor outside = x;
  outside[0] = 1.5;
  CHECK_THROWS_AS(ifgsm(det, outside, y, cfg), InvalidInput);
  CHECK_THROWS_AS(ensemble_attack({}, x, y, cfg), InvalidParameter);

  PreprocessSpec pre;
  pre.input_size = 8;
  pre.resize = "nearest";
  const Detector blocked = Detector::make(Arch::SpatialCnn, pre, 0);
  CHECK_THROWS_AS(pgd(blocked, x, y, cfg), CapabilityError);

  CHECK(parse_method("fpba") == Method::Fpba);
  for (Method m : all_methods()) CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("cw"), InvalidParameter);
  AttackTargets none;
  CHECK_THROWS_AS(run_attack(Method::Pgd, none, x, y, cfg), InvalidParameter);
}

TEST_CASE("zero budget returns the input") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 10);
  const Tensor x = random_batch(2, 3, 8, 8, 10);
  const Labels y = {0, 1};
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  const auto r = pgd(det, x, y, cfg);
  CHECK(bit_equal(r.adversarial, x));
  CHECK(r.iterations == 0);
  CHECK(r.linf == std::vector<double>{0.0, 0.0});
}

TEST_CASE("random start stays in the budget and is seeded") {
  const LinearModel m = linear_model(48, 4);
  const Tensor x = random_batch(2, 3, 4, 4, 11);
  const Labels y = {0, 1};
  AttackConfig cfg;
  cfg.iterations = 1;
  cfg.alpha = 0.0;
  const auto a = pgd(m, x, y, cfg);
  CHECK(max_abs_diff(a.adversarial, x) <= cfg.epsilon);
  CHECK(max_abs_diff(a.adversarial, x) > 0.0);
  CHECK(bit_equal(pgd(m, x, y, cfg).adversarial, a.adversarial));
  cfg.seed = 1;
  CHECK_FALSE(bit_equal(pgd(m, x, y, cfg).adversarial, a.adversarial));
}

TEST_CASE("sequential spectrum draws differ from independent ones") {
  const Detector det = small_detector(Arch::FrequencyMlp, 8, 12);
  const Tensor x = random_batch(1, 3, 8, 8, 12);
  const Labels y = {1};
  AttackConfig cfg = plain(4);
  cfg.spectrum_samples = 3;
  const auto independent = spectrum_attack(det, x, y, cfg);
  cfg.sequential_spectrum = true;
  const auto chained = spectrum_attack(det, x, y, cfg);
  CHECK(max_abs_diff(chained.adversarial, x) <= cfg.epsilon + 1e-12);
  CHECK_FALSE(bit_equal(chained.adversarial, independent.adversarial));
  cfg.spectrum_samples = 1;
  cfg.sequential_spectrum = false;
  const auto one = spectrum_attack(det, x, y, cfg);
  cfg.sequential_spectrum = true;
  CHECK(bit_equal(spectrum_attack(det, x, y, cfg).adversarial, one.adversarial));
}

TEST_CASE("every attack respects the budget on random configurations") {
  const Detector det = small_detector(Arch::FrequencyMlp, 8, 13);
  const BayesEnsemble e = random_ensemble(det, 3, 13);
  const EnsembleMember m0(e, 0), m1(e, 1);
  AttackTargets targets;
  targets.model = &det;
  targets.bayes = &e;
  targets.ensemble_members = {&m0, &m1};
  Rng rng = make_rng(14);
  for (int trial = 0; trial < 60; ++trial) {
    AttackConfig cfg;
    cfg.epsilon = uniform(rng, 0.0, 0.1);
    cfg.alpha = uniform(rng, 0.0, cfg.epsilon);
    cfg.iterations = 1 + static_cast<std::size_t>(uniform(rng, 0.0, 4.0));
    cfg.spectrum_samples = 1 + static_cast<std::size_t>(uniform(rng, 0.0, 3.0));
    cfg.spectrum.rho = uniform(rng, 0.0, 0.9);
    cfg.spectrum.sigma_noise = uniform(rng, 0.0, 0.1);
    cfg.heads = 1 + static_cast<std::size_t>(uniform(rng, 0.0, 3.0));
    cfg.random_start = uniform(rng, 0.0, 1.0) < 0.5;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const Method method = all_methods()[static_cast<std::size_t>(trial) % all_methods().size()];
    const Tensor x = random_batch(2, 3, 12, 12, 100 + static_cast<std::uint64_t>(trial));
    const Labels y = {0, 1};
    const auto r = run_attack(method, targets, x, y, cfg);
    CHECK(max_abs_diff(r.adversarial, x) <= cfg.epsilon + 1e-12);
    CHECK(r.adversarial.in_unit_range());
    if (cfg.epsilon > 0.0) {
      CHECK(image_quality(x, r.adversarial).psnr >= psnr_floor(cfg.epsilon) - 1e-9);
    }
  }
}

TEST_CASE("attack config json round trip") {
  AttackConfig c;
  c.epsilon = 4.0 / 255.0;
  c.iterations = 7;
  c.spectrum.rho = 0.25;
  c.sequential_spectrum = true;
  nlohmann::json j;
  to_json(j, c);
  AttackConfig back;
  from_json(j, back);
  CHECK(back.epsilon == c.epsilon);
  CHECK(back.iterations == 7);
  CHECK(back.spectrum.rho == 0.25);
  CHECK(back.sequential_spectrum);
}
