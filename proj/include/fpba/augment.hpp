#pragma once

#include "fpba/rng.hpp"
#include "fpba/tensor.hpp"
#include "json.hpp"

namespace fpba {

/// Blur + JPEG training augmentation. Quality defaults follow the common
/// CNN-detector convention of uniform integer quality in [30, 100].
struct AugmentConfig {
  double p_blur = 0.1;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 3.0;
  double p_jpeg = 0.1;
  int jpeg_quality_min = 30;
  int jpeg_quality_max = 100;

  static AugmentConfig none() { return {0.0, 0.0, 3.0, 0.0, 30, 100}; }
  static AugmentConfig baseline() { return {}; }
  static AugmentConfig defense() { return {0.5, 0.0, 3.0, 0.5, 30, 100}; }

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& a);
void from_json(const nlohmann::json& j, AugmentConfig& a);

/// Separable Gaussian blur with clamp-to-edge borders, radius ceil(3 sigma).
/// sigma <= 0 is the identity.
Tensor gaussian_blur(const Tensor& x, double sigma);

/// 8-bit JPEG encode/decode round trip of every image in the batch.
Tensor jpeg_roundtrip(const Tensor& x, int quality);

/// Applies the random augmentation independently to each image. Per image the
/// draws are: blur coin, blur sigma (if taken), JPEG coin, quality (if taken).
Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng);

}  // namespace fpba
