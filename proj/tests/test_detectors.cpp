#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "fpba/archive.hpp"
#include "fpba/augment.hpp"
#include "fpba/checkpoint.hpp"
#include "fpba/data.hpp"
#include "fpba/error.hpp"
#include "fpba/train.hpp"
#include "support.hpp"

using namespace fpba;
using fpba::testing::random_batch;
using fpba::testing::small_detector;

namespace {

double summed_loss(const Classifier& m, const Tensor& x, std::span<const int> y) {
  const auto z = m.logits(x);
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += bce_loss(z[i], y[i]);
  return s;
}

void check_input_gradient(const Classifier& m, const Tensor& x, std::span<const int> y, double tol) {
  const Tensor g = m.loss_gradient(x, y);
  REQUIRE(g.shape() == x.shape());
  const double h = 1e-6;
  for (std::size_t k = 0; k < x.size(); k += 7) {
    Tensor xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const double fd = (summed_loss(m, xp, y) - summed_loss(m, xm, y)) / (2 * h);
    CHECK(g[k] == doctest::Approx(fd).epsilon(tol).scale(1e-3));
  }
}

}  // namespace

TEST_CASE("bce is the negative log likelihood") {
  for (double z : {-40.0, -3.0, 0.0, 0.7, 35.0}) {
    CHECK(bce_loss(z, 1) == doctest::Approx(-std::log(sigmoid(z))).epsilon(1e-9));
    CHECK(bce_loss(z, 0) == doctest::Approx(-std::log(sigmoid(-z))).epsilon(1e-9));
    CHECK(std::isfinite(bce_loss(1000.0 * z, 0)));
  }
  CHECK(bce_grad(0.0, 1) == -0.5);
}

TEST_CASE("detector input gradients match finite differences") {
  const auto y = fpba::testing::alternating_labels(2);
  SUBCASE("spatial cnn") {
    const Detector det = small_detector(Arch::SpatialCnn, 8, 1);
    check_input_gradient(det, random_batch(2, 3, 8, 8, 1), y, 1e-5);
  }
  SUBCASE("frequency mlp") {
    const Detector det = small_detector(Arch::FrequencyMlp, 8, 2);
    check_input_gradient(det, random_batch(2, 3, 8, 8, 2), y, 1e-4);
  }
  SUBCASE("bilinear resize in front of the backbone") {
    const Detector det = small_detector(Arch::SpatialCnn, 8, 3);
    check_input_gradient(det, random_batch(2, 3, 12, 12, 3), y, 1e-5);
  }
}

TEST_CASE("nearest resize blocks gradients") {
  PreprocessSpec pre;
  pre.input_size = 8;
  pre.resize = "nearest";
  const Detector det = Detector::make(Arch::SpatialCnn, pre, 0);
  CHECK_FALSE(det.has_gradient());
  const auto x = random_batch(1, 3, 16, 16, 0);
  CHECK(det.logits(x).size() == 1);
  CHECK_THROWS_AS(det.loss_gradient(x, Labels{0}), CapabilityError);
}

TEST_CASE("per-image gradient rows are independent") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 4);
  const Tensor x = random_batch(3, 3, 8, 8, 4);
  const Labels y = {0, 1, 1};
  const Tensor g = det.loss_gradient(x, y);
  const std::size_t one[] = {1};
  const Tensor g1 = det.loss_gradient(x.gather(one), Labels{1});
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g.image(1)[i] == g1[i]);
}

TEST_CASE("detector rejects malformed batches") {
  const Detector det = small_detector(Arch::SpatialCnn, 8, 0);
  CHECK_THROWS_AS(det.logits(Tensor()), InvalidInput);
  Tensor bad = random_batch(1, 3, 8, 8, 0);
  bad[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(det.logits(bad), InvalidInput);
  CHECK_THROWS_AS(det.loss_gradient(random_batch(2, 3, 8, 8, 0), Labels{0}), InvalidInput);
  CHECK_THROWS_AS(det.loss_gradient(random_batch(1, 3, 8, 8, 0), Labels{2}), InvalidInput);
  CHECK_THROWS_AS(parse_arch("resnet"), InvalidParameter);
}

TEST_CASE("checkpoint round trip preserves logits and checksum") {
  fpba::testing::TempDir dir("ckpt");
  for (Arch arch : {Arch::SpatialCnn, Arch::FrequencyMlp}) {
    Detector det = small_detector(arch, 16, 5);
    det.record.val_accuracy = 0.75;
    save_detector(dir / "d.npz", det);
    const Detector back = load_detector(dir / "d.npz");
    CHECK(back.checksum() == det.checksum());
    CHECK(back.arch_tag() == to_string(arch));
    CHECK(back.record.val_accuracy == 0.75);
    const Tensor x = random_batch(2, 3, 16, 16, 1);
    CHECK(back.logits(x) == det.logits(x));
  }
  CHECK_THROWS_AS(load_detector(dir / "missing.npz"), IoError);
  std::ofstream(dir / "junk.npz") << "not a zip";
  CHECK_THROWS(load_detector(dir / "junk.npz"));
}

TEST_CASE("checkpoint with a tampered parameter is rejected") {
  fpba::testing::TempDir dir("tamper");
  const Detector det = small_detector(Arch::FrequencyMlp, 8, 6);
  save_detector(dir / "d.npz", det);
  Archive ar = Archive::load(dir / "d.npz");
  const auto names = ar.array_names();
  REQUIRE_FALSE(names.empty());
  auto values = ar.array(names.front()).to_doubles();
  values[0] += 1.0;
  ar.put(names.front(), make_array(std::span<const double>(values), ar.array(names.front()).shape));
  ar.save(dir / "t.npz");
  CHECK_THROWS_AS(load_detector(dir / "t.npz"), FormatError);
}

TEST_CASE("adam matches its closed form on the first step") {
  Adam opt(2, 0.1);
  std::vector<double> p = {1.0, -1.0};
  const std::vector<double> g = {3.0, -0.5};
  opt.step(p, g);
  // The first bias-corrected step is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-0.9));
  CHECK_THROWS_AS(Adam(1, 0.0), InvalidParameter);
}

TEST_CASE("learning-rate schedules") {
  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 0.2;
  for (std::size_t e = 0; e < 4; ++e) CHECK(scheduled_learning_rate(tc, e) == 0.2);
  tc.schedule = "cosine";
  CHECK(scheduled_learning_rate(tc, 0) == 0.2);
  CHECK(scheduled_learning_rate(tc, 1) == doctest::Approx(0.1 * (1.0 + std::sqrt(0.5))));
  CHECK(scheduled_learning_rate(tc, 2) == doctest::Approx(0.1));
  CHECK(scheduled_learning_rate(tc, 3) == doctest::Approx(0.1 * (1.0 - std::sqrt(0.5))));
  tc.schedule = "step";
  CHECK_THROWS_AS(scheduled_learning_rate(tc, 0), InvalidParameter);

  Adam opt(1, 0.1);
  opt.set_learning_rate(0.05);
  std::vector<double> p = {1.0};
  const std::vector<double> g = {2.0};
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK_THROWS_AS(opt.set_learning_rate(-1.0), InvalidParameter);
}

TEST_CASE("blur and jpeg augmentation") {
  const Tensor x = random_batch(2, 3, 16, 16, 7);
  CHECK(gaussian_blur(x, 0.0).storage() == x.storage());
  Tensor flat(Shape{1, 3, 16, 16}, 0.4);
  CHECK(max_abs_diff(gaussian_blur(flat, 2.0), flat) < 1e-12);
  const Tensor b = gaussian_blur(x, 1.5);
  double var_x = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    var_x += (x[i] - 0.5) * (x[i] - 0.5);
    var_b += (b[i] - 0.5) * (b[i] - 0.5);
  }
  CHECK(var_b < var_x);

  const Tensor j = jpeg_roundtrip(x, 100);
  CHECK(j.shape() == x.shape());
  CHECK(j.in_unit_range());
  CHECK(max_abs_diff(jpeg_roundtrip(flat, 90), flat) < 2.0 / 255.0);

  Rng rng = make_rng(0);
  CHECK(augment(x, AugmentConfig::none(), rng).storage() == x.storage());
  Rng r1 = make_rng(3), r2 = make_rng(3);
  CHECK(augment(x, AugmentConfig::defense(), r1).storage() == augment(x, AugmentConfig::defense(), r2).storage());
  AugmentConfig bad;
  bad.p_blur = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
}

TEST_CASE("training fits an easy synthetic task deterministically") {
  SynthConfig sc;
  sc.n_per_class = 60;
  sc.image_size = 32;
  sc.families = {"gan"};
  const auto data = synth_dataset(sc);
  TrainConfig tc;
  tc.epochs = 12;
  tc.learning_rate = 3e-3;
  std::vector<double> losses;
  tc.on_epoch = [&](const EpochStats& s) { losses.push_back(s.train_loss); };
  const Detector a = train_detector(Arch::FrequencyMlp, data, AugmentConfig::none(), tc);
  REQUIRE(losses.size() == 12);
  CHECK(losses.back() < losses.front());
  CHECK(a.record.train_accuracy > 0.9);
  const Detector b = train_detector(Arch::FrequencyMlp, data, AugmentConfig::none(), tc);
  CHECK(a.checksum() == b.checksum());
}

TEST_CASE("training refuses a single-class split") {
  SynthConfig sc;
  sc.n_per_class = 10;
  sc.image_size = 32;
  auto data = synth_dataset(sc);
  for (auto& l : data.labels) l = 0;
  CHECK_THROWS_AS(train_detector(Arch::FrequencyMlp, data, AugmentConfig::none(), TrainConfig{}), InvalidDataset);
}
