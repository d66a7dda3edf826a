#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fpba/error.hpp"
#include "fpba/eval.hpp"
#include "support.hpp"

using namespace fpba;
using fpba::testing::LookupModel;
using fpba::testing::random_batch;

namespace {

// Images whose first pixel encodes an id that LookupModel maps to a logit.
Tensor id_batch(std::size_t first_id, std::size_t n) {
  Tensor t(Shape{n, 1, 2, 2}, 0.5);
  for (std::size_t i = 0; i < n; ++i) t.image(i)[0] = static_cast<double>(first_id + i) / 1000.0;
  return t;
}

// Victim logits: correct on clean ids unless listed in `clean_wrong`; on the
// adversarial ids of row r (100 (r+1) + i) wrong exactly for i in flips[r].
LookupModel victim(const std::set<std::size_t>& clean_wrong, const std::vector<std::set<std::size_t>>& flips) {
  std::vector<double> table(400, 0.0);
  auto logit = [](std::size_t i, bool wrong) { return ((i % 2 == 1) != wrong) ? 3.0 : -3.0; };
  for (std::size_t i = 0; i < 6; ++i) {
    table[i] = logit(i, clean_wrong.count(i) > 0);
    for (std::size_t r = 0; r < flips.size(); ++r) table[100 * (r + 1) + i] = logit(i, flips[r].count(i) > 0);
  }
  return LookupModel(table);
}

double gauss(int d) { return std::exp(-d * d / (2.0 * 1.5 * 1.5)); }

// Direct 2-D windowed SSIM on the 8-bit scale, averaged over valid positions.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  double norm = 0.0;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) norm += gauss(i) * gauss(j);
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0.0;
  int count = 0;
  for (int ci = 5; ci < h - 5; ++ci) {
    for (int cj = 5; cj < w - 5; ++cj) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = -5; i <= 5; ++i) {
        for (int j = -5; j <= 5; ++j) {
          const double wt = gauss(i) * gauss(j) / norm;
          const double x = 255.0 * a[(ci + i) * w + cj + j], y = 255.0 * b[(ci + i) * w + cj + j];
          mx += wt * x;
          my += wt * y;
          sxx += wt * x * x;
          syy += wt * y * y;
          sxy += wt * x * y;
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace

TEST_CASE("transfer matrix cells and row averages") {
  const Tensor clean = id_batch(0, 6);
  const Labels y = {0, 1, 0, 1, 0, 1};
  const std::vector<Tensor> adv = {id_batch(100, 6), id_batch(200, 6)};
  const LookupModel a = victim({}, {{0, 1, 2, 3, 4, 5}, {0}});
  const LookupModel b = victim({0}, {{1, 2}, {1, 2, 3, 4, 5}});
  const LookupModel c = victim({0, 1}, {{2, 3, 4, 5}, {2}});
  const std::vector<Victim> victims = {{"a", &a}, {"b", &b}, {"c", &c}};
  const auto m = score_transfer({"a", "b"}, {"pgd", "pgd"}, adv, victims, clean, y, 5);

  REQUIRE(m.rows() == 2);
  CHECK(m.cells[0][0].white_box);
  CHECK(m.cells[1][1].white_box);
  CHECK_FALSE(m.cells[0][2].white_box);
  CHECK(m.cells[0][0].asr == 100.0);
  CHECK(m.cells[0][1].asr == doctest::Approx(40.0));
  CHECK(m.cells[0][1].valid == 5);
  CHECK(m.cells[0][1].asr_real == doctest::Approx(50.0));
  CHECK(m.cells[0][1].asr_fake == doctest::Approx(100.0 / 3.0));
  CHECK(m.cells[0][2].asr == 100.0);
  CHECK(m.cells[0][2].flagged);
  CHECK_FALSE(m.cells[0][1].flagged);
  CHECK(m.cells[1][0].asr == doctest::Approx(100.0 / 6.0));
  CHECK(m.cells[1][2].asr == doctest::Approx(25.0));
  CHECK(m.average(0) == doctest::Approx(70.0));
  CHECK(m.average(1) == doctest::Approx((100.0 / 6.0 + 25.0) / 2.0));

  const auto j = m.to_json();
  CHECK(j.dump().find("\"white_box\":true") != std::string::npos);
}

TEST_CASE("transfer csv has one row per surrogate, attack and victim") {
  const Tensor clean = id_batch(0, 6);
  const Labels y = {0, 1, 0, 1, 0, 1};
  const std::vector<Tensor> adv = {id_batch(100, 6), id_batch(200, 6), id_batch(100, 6), id_batch(200, 6)};
  const LookupModel a = victim({}, {{0}, {1}}), b = victim({}, {{2}, {3}}), c = victim({}, {{}, {}});
  const std::vector<Victim> victims = {{"s1", &a}, {"s2", &b}, {"other", &c}};
  const auto m = score_transfer({"s1", "s1", "s2", "s2"}, {"pgd", "fpba", "pgd", "fpba"}, adv, victims, clean, y, 1);
  std::istringstream csv(m.to_csv());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "surrogate,attack,victim,asr,asr_real,asr_fake,valid,valid_real,valid_fake,white_box,flagged,average");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 12);
}

TEST_CASE("cells without valid samples drop out of the average") {
  const Tensor clean = id_batch(0, 6);
  const Labels y = {0, 1, 0, 1, 0, 1};
  const LookupModel good = victim({}, {{0, 1, 2}});
  const LookupModel blind = victim({0, 1, 2, 3, 4, 5}, {{}});
  const auto m = score_transfer({"x"}, {"pgd"}, {id_batch(100, 6)}, {{"good", &good}, {"blind", &blind}}, clean, y, 1);
  CHECK(m.cells[0][1].valid == 0);
  CHECK(m.average(0) == doctest::Approx(50.0));
  const auto only_wb = score_transfer({"good"}, {"pgd"}, {id_batch(100, 6)}, {{"good", &good}}, clean, y, 1);
  CHECK(std::isnan(only_wb.average(0)));
}

TEST_CASE("transfer_eval crafts once per row and scores every victim") {
  const Detector s = fpba::testing::small_detector(Arch::SpatialCnn, 12, 1);
  const Detector v = fpba::testing::small_detector(Arch::FrequencyMlp, 12, 2);
  const Tensor x = random_batch(6, 3, 12, 12, 3);
  const Labels y = {0, 1, 0, 1, 0, 1};
  AttackTargets t;
  t.model = &s;
  TransferConfig cfg;
  cfg.attack.iterations = 2;
  cfg.min_valid = 1;
  const auto m = transfer_eval({{"s", t}}, {{"s", &s}, {"v", &v}}, {Method::Ifgsm, Method::Pgd}, x, y, cfg);
  CHECK(m.rows() == 2);
  CHECK(m.attacks == std::vector<std::string>{"ifgsm", "pgd"});
  CHECK(m.cells[1][0].white_box);
  const auto clean_ok = correctly_classified(v, x, y);
  CHECK(m.cells[0][1].valid == clean_ok.size());
}

TEST_CASE("balanced subset alternates the classes") {
  const Labels y = {0, 0, 0, 1, 1, 0, 1};
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6};
  CHECK(balanced_subset(idx, y, 5) == std::vector<std::size_t>{0, 3, 1, 4, 2});
  CHECK(balanced_subset(idx, y, 100).size() == 7);
  CHECK(balanced_subset(idx, y, 0).empty());
}

TEST_CASE("image quality identities") {
  const Tensor x = random_batch(2, 3, 16, 14, 1);
  const auto same = image_quality(x, x);
  CHECK(same.mse == 0.0);
  CHECK(std::isinf(same.psnr));
  CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-12));

  // A uniform shift by delta gives MSE (255 delta)^2 and PSNR -20 log10(delta).
  Tensor base(Shape{1, 3, 16, 16}, 0.25);
  Tensor shifted(Shape{1, 3, 16, 16}, 0.25 + 4.0 / 255.0);
  const auto q = image_quality(base, shifted);
  CHECK(q.mse == doctest::Approx(16.0));
  CHECK(q.psnr == doctest::Approx(-20.0 * std::log10(4.0 / 255.0)));
  CHECK(q.psnr == doctest::Approx(psnr_floor(4.0 / 255.0)));
  CHECK(psnr_from_mse(q.mse) == q.psnr);

  CHECK_THROWS_AS(image_quality(random_batch(1, 1, 8, 8, 0), random_batch(1, 1, 8, 8, 1)), InvalidInput);
  CHECK_THROWS_AS(image_quality(x, random_batch(1, 3, 16, 14, 0)), InvalidInput);
}

TEST_CASE("ssim matches a direct windowed computation") {
  const Tensor a = random_batch(1, 1, 15, 13, 2);
  Tensor b = a;
  Rng rng = make_rng(5);
  for (double& v : b.values()) v = std::clamp(v + normal(rng, 0.0, 0.05), 0.0, 1.0);
  const std::vector<double> av(a.values().begin(), a.values().end()), bv(b.values().begin(), b.values().end());
  CHECK(ssim_plane(a.values(), b.values(), 15, 13) == doctest::Approx(ssim_oracle(av, bv, 15, 13)).epsilon(1e-10));
  CHECK(image_quality(a, b).ssim < 1.0);
}

TEST_CASE("gradient diagnostic samples the requested number of components") {
  std::vector<double> w(3 * 12 * 12);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i % 4 == 0) ? 0.0 : 1e-4 * static_cast<double>(i % 7 + 1);
  const fpba::testing::LinearModel m(w, 0.0);
  const Tensor x = random_batch(500, 3, 12, 12, 3);
  const auto y = fpba::testing::alternating_labels(500);
  const auto d = gradient_diagnostic(m, x, y, 150, 1e-6, 0);
  CHECK(d.samples.size() == 75000);
  CHECK(d.images == 500);
  // A quarter of the weights are zero, so about a quarter of the components are.
  CHECK(d.near_zero_fraction == doctest::Approx(0.25).epsilon(0.05));

  const auto small = gradient_diagnostic(m, x, y, 432, 1e-6, 0);
  std::size_t zeros = 0;
  for (double v : small.samples) zeros += v == 0.0;
  CHECK(zeros == 500 * 108);  // every coordinate drawn exactly once per image

  CHECK(gradient_diagnostic(m, x, y, 150, 1e-6, 0).samples == d.samples);
  CHECK_THROWS_AS(gradient_diagnostic(m, x, y, 433), InvalidParameter);
  CHECK_THROWS_AS(gradient_diagnostic(m, x, y, 0), InvalidParameter);
}

TEST_CASE("attack success rate counts label flips") {
  const LookupModel v = victim({}, {{1, 4}});
  const Labels y = {0, 1, 0, 1, 0, 1};
  CHECK(attack_success_rate(v, id_batch(100, 6), y) == doctest::Approx(100.0 / 3.0));
  CHECK_THROWS_AS(attack_success_rate(v, Tensor(), Labels{}), InvalidInput);
}

TEST_CASE("family breakdown groups by generator") {
  const LookupModel v = victim({1}, {{3}});
  const Labels y = {0, 1, 0, 1, 0, 1};
  const std::vector<std::string> fam = {"real", "gan", "real", "gan", "real", "diffusion"};
  const auto scores = family_breakdown(v, id_batch(0, 6), id_batch(100, 6), y, fam);
  bool saw_gan = false;
  for (const auto& s : scores) {
    if (s.family == "gan") {
      saw_gan = true;
      CHECK(s.count == 2);
      CHECK(s.clean_accuracy == doctest::Approx(0.5));
      CHECK(s.asr == doctest::Approx(100.0));
    }
  }
  CHECK(saw_gan);
}
