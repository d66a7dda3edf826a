#include <cmath>
#include <numbers>

#include "doctest.h"
#include "fpba/error.hpp"
#include "fpba/frequency.hpp"
#include "support.hpp"

using namespace fpba;
using fpba::testing::random_batch;

namespace {

// Orthonormal DCT-II written as the explicit cosine double sum.
std::vector<double> dct_oracle(const std::vector<double>& x, std::size_t h, std::size_t w) {
  std::vector<double> out(h * w);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      const double au = u == 0 ? std::sqrt(1.0 / h) : std::sqrt(2.0 / h);
      const double av = v == 0 ? std::sqrt(1.0 / w) : std::sqrt(2.0 / w);
      double s = 0.0;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          s += x[i * w + j] * std::cos(std::numbers::pi * (2.0 * i + 1.0) * u / (2.0 * h)) *
               std::cos(std::numbers::pi * (2.0 * j + 1.0) * v / (2.0 * w));
        }
      }
      out[u * w + v] = au * av * s;
    }
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("dct2 matches the cosine-sum oracle") {
  for (std::size_t h : {8u, 5u}) {
    const std::size_t w = 8;
    const Tensor x = random_batch(2, 3, h, w, h);
    const Tensor s = dct2(x);
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> plane(h * w);
        for (std::size_t i = 0; i < h * w; ++i) plane[i] = x.image(n)[c * h * w + i];
        const auto ref = dct_oracle(plane, h, w);
        for (std::size_t i = 0; i < h * w; ++i) CHECK(std::abs(s.image(n)[c * h * w + i] - ref[i]) < 1e-10);
      }
    }
  }
}

TEST_CASE("idct2 inverts dct2 and preserves energy") {
  const Tensor x = random_batch(3, 3, 16, 12, 4, -2.0, 2.0);
  const Tensor s = dct2(x);
  CHECK(max_abs_diff(idct2(s), x) < 1e-12);
  CHECK(std::abs(dot(s, s) - dot(x, x)) < 1e-9);
  // DC coefficient of a constant plane is value * sqrt(h w).
  Tensor flat(Shape{1, 1, 8, 8}, 0.25);
  CHECK(dct2(flat)[0] == doctest::Approx(0.25 * 8.0));
}

TEST_CASE("single precision round trip") {
  Rng rng = make_rng(9);
  std::vector<float> in(64 * 64), spec(64 * 64), back(64 * 64);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    for (float& v : in) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    dct2_plane<float>(in, spec, 64, 64);
    idct2_plane<float>(spec, back, 64, 64);
    for (std::size_t i = 0; i < in.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(in[i] - back[i])));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("dct2 rejects non-finite input") {
  Tensor x(Shape{1, 1, 4, 4}, 0.5);
  x[3] = std::nan("");
  CHECK_THROWS_AS(dct2(x), InvalidInput);
}

TEST_CASE("identity spectrum transform returns the input untouched") {
  const Tensor x = random_batch(2, 3, 8, 8, 1);
  Rng rng = make_rng(1);
  const Rng before = rng;
  const auto d = spectrum_transform_draw(x, 0.0, 0.0, rng);
  CHECK(d.output.storage() == x.storage());
  CHECK(d.mask.empty());
  CHECK(rng == before);
}

TEST_CASE("spectrum transform equals its composition from parts") {
  const Tensor x = random_batch(2, 3, 8, 8, 2);
  const double rho = 0.5, sigma = 0.1;
  Rng rng = make_rng(5);
  Rng replay = rng;
  const auto d = spectrum_transform_draw(x, rho, sigma, rng);

  Tensor noisy = x;
  std::normal_distribution<double> nd(0.0, sigma);
  for (double& v : noisy.values()) v += nd(replay);
  Tensor mask(x.shape());
  std::uniform_real_distribution<double> ud(1.0 - rho, 1.0 + rho);
  for (double& m : mask.values()) m = ud(replay);
  Tensor spec = dct2(noisy);
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= mask[i];
  const Tensor expected = idct2(spec);

  CHECK(max_abs_diff(d.output, expected) < 1e-12);
  CHECK(max_abs_diff(d.mask, mask) == 0.0);
  for (double m : d.mask.values()) CHECK((m >= 1.0 - rho && m <= 1.0 + rho));
}

TEST_CASE("spectrum transform with rho only rescales coefficients") {
  const Tensor x = random_batch(1, 1, 8, 8, 3);
  Rng rng = make_rng(3);
  const auto d = spectrum_transform_draw(x, 0.3, 0.0, rng);
  const Tensor sx = dct2(x), sy = dct2(d.output);
  for (std::size_t i = 0; i < sx.size(); ++i) CHECK(sy[i] == doctest::Approx(sx[i] * d.mask[i]).epsilon(1e-9));
}

TEST_CASE("spectrum transform backward is the adjoint of the linear part") {
  const Tensor v = random_batch(2, 3, 8, 6, 4, -1.0, 1.0);
  const Tensor g = random_batch(2, 3, 8, 6, 5, -1.0, 1.0);
  Rng rng = make_rng(6);
  const auto d = spectrum_transform_draw(v, 0.5, 0.0, rng);
  // With sigma 0 the transform is linear: J v = d.output.
  CHECK(dot(g, d.output) == doctest::Approx(dot(spectrum_transform_backward(g, d.mask), v)).epsilon(1e-12));
  CHECK(spectrum_transform_backward(g, Tensor()).storage() == g.storage());
}

TEST_CASE("spectrum transform validates parameters") {
  CHECK_THROWS_AS(spectrum_transform(random_batch(1, 1, 4, 4, 0), SpectrumTransformParams{1.5, 0.0, 0}),
                  InvalidParameter);
  CHECK_THROWS_AS(spectrum_transform(random_batch(1, 1, 4, 4, 0), SpectrumTransformParams{0.1, -1.0, 0}),
                  InvalidParameter);
  const Tensor x = random_batch(1, 3, 8, 8, 0);
  SpectrumTransformParams p{0.4, 0.05, 11};
  CHECK(spectrum_transform(x, p).storage() == spectrum_transform(x, p).storage());
}

TEST_CASE("spectrum gradient matches finite differences in the DCT domain") {
  const Detector det = fpba::testing::small_detector(Arch::SpatialCnn, 8, 3);
  const Tensor x = random_batch(1, 3, 8, 8, 8);
  const Labels y = {1};
  const Tensor g = spectrum_gradient(det, x, y);
  const Tensor s = dct2(x);
  const double h = 1e-6;
  for (std::size_t k : {0u, 5u, 63u, 64u, 100u, 191u}) {
    Tensor sp = s, sm = s;
    sp[k] += h;
    sm[k] -= h;
    const double lp = bce_loss(det.logits(idct2(sp))[0], 1);
    const double lm = bce_loss(det.logits(idct2(sm))[0], 1);
    CHECK(g[k] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("saliency is normalised per channel") {
  const Detector det = fpba::testing::small_detector(Arch::FrequencyMlp, 8, 2);
  const Tensor x = random_batch(4, 3, 8, 8, 9);
  const auto y = fpba::testing::alternating_labels(4);
  const auto map = spectrum_saliency(det, x, y);
  REQUIRE(map.values.size() == 3 * 64);
  for (std::size_t c = 0; c < 3; ++c) {
    double lo = 1.0, hi = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        lo = std::min(lo, map.at(c, i, j));
        hi = std::max(hi, map.at(c, i, j));
      }
    }
    CHECK(lo == 0.0);
    CHECK(hi == doctest::Approx(1.0));
  }
  CHECK(map.channel_mean().size() == 64);

  Tensor flat(Shape{1, 2, 3, 3}, 0.7);
  for (double v : normalize_saliency(flat).values) CHECK(v == 0.0);
}
