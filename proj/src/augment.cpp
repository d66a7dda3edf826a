#include "fpba/augment.hpp"

#include <algorithm>
#include <cmath>

#include "fpba/error.hpp"
#include "fpba/image_io.hpp"

namespace fpba {

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_blur) || !prob(p_jpeg)) throw InvalidParameter("augment: probabilities must lie in [0, 1]");
  if (!(blur_sigma_min >= 0.0 && blur_sigma_min <= blur_sigma_max)) {
    throw InvalidParameter("augment: blur sigma range must satisfy 0 <= min <= max");
  }
  if (jpeg_quality_min < 1 || jpeg_quality_max > 100 || jpeg_quality_min > jpeg_quality_max) {
    throw InvalidParameter("augment: JPEG quality range must lie within [1, 100]");
  }
}

void to_json(nlohmann::json& j, const AugmentConfig& a) {
  j = {{"p_blur", a.p_blur},
       {"blur_sigma_range", {a.blur_sigma_min, a.blur_sigma_max}},
       {"p_jpeg", a.p_jpeg},
       {"jpeg_quality_range", {a.jpeg_quality_min, a.jpeg_quality_max}}};
}

void from_json(const nlohmann::json& j, AugmentConfig& a) {
  a.p_blur = j.value("p_blur", a.p_blur);
  a.p_jpeg = j.value("p_jpeg", a.p_jpeg);
  if (j.contains("blur_sigma_range")) {
    a.blur_sigma_min = j["blur_sigma_range"].at(0);
    a.blur_sigma_max = j["blur_sigma_range"].at(1);
  }
  if (j.contains("jpeg_quality_range")) {
    a.jpeg_quality_min = j["jpeg_quality_range"].at(0);
    a.jpeg_quality_max = j["jpeg_quality_range"].at(1);
  }
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (!(sigma > 0.0)) return x;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const auto& s = x.shape();
  const auto h = static_cast<std::ptrdiff_t>(s.h), w = static_cast<std::ptrdiff_t>(s.w);
  Tensor tmp(s), out(s);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const double* src = x.values().data() + p * s.plane();
    double* mid = tmp.values().data() + p * s.plane();
    double* dst = out.values().data() + p * s.plane();
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * src[i * w + std::clamp<std::ptrdiff_t>(j + k, 0, w - 1)];
        }
        mid[i * w + j] = acc;
      }
    }
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * mid[std::clamp<std::ptrdiff_t>(i + k, 0, h - 1) * w + j];
        }
        dst[i * w + j] = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

Tensor jpeg_roundtrip(const Tensor& x, int quality) {
  Tensor out(x.shape());
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    const Image8 decoded = decode_jpeg(encode_jpeg(to_image8(x, n), quality));
    const Tensor img = from_image8(decoded);
    std::copy(img.values().begin(), img.values().end(), out.image(n).begin());
  }
  return out;
}

Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor out = x;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    const std::size_t idx[1] = {n};
    Tensor img = x.gather(idx);
    if (coin(rng) < cfg.p_blur) {
      img = gaussian_blur(img, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
    }
    if (coin(rng) < cfg.p_jpeg) {
      const int q = std::uniform_int_distribution<int>(cfg.jpeg_quality_min, cfg.jpeg_quality_max)(rng);
      img = jpeg_roundtrip(img, q);
    }
    std::copy(img.values().begin(), img.values().end(), out.image(n).begin());
  }
  return out;
}

}  // namespace fpba
