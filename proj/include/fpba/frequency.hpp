#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fpba/classifier.hpp"
#include "fpba/rng.hpp"
#include "fpba/tensor.hpp"

namespace fpba {

/// Orthonormal type-II DCT over the two spatial axes of every channel plane.
/// DC sits at (0,0). Throws InvalidInput on non-finite input.
Tensor dct2(const Tensor& x);
Tensor idct2(const Tensor& spectrum);

/// Single-plane transforms, row-major `h`x`w`. Instantiated for float and double.
template <typename Scalar>
void dct2_plane(std::span<const Scalar> in, std::span<Scalar> out, std::size_t h, std::size_t w);
template <typename Scalar>
void idct2_plane(std::span<const Scalar> in, std::span<Scalar> out, std::size_t h, std::size_t w);

struct SpectrumTransformParams {
  double rho = 0.5;                 // mask entries ~ U(1 - rho, 1 + rho)
  double sigma_noise = 8.0 / 255.0;  // pixel-domain Gaussian noise
  std::uint64_t rng_seed = 0;

  void validate() const;
  bool is_identity() const { return rho == 0.0 && sigma_noise == 0.0; }
};

/// One realisation of the random spectrum transform together with its mask,
/// which is all the backward pass needs.
struct SpectrumDraw {
  Tensor output;
  Tensor mask;  // empty when the transform is the identity
};

/// idct2(dct2(x + noise) * mask). Draw order from `rng`: all noise values in
/// NCHW order (skipped when sigma_noise is 0), then all mask values in NCHW
/// order (skipped when rho is 0). Identity parameters return `x` unchanged.
/// The output is not clamped.
SpectrumDraw spectrum_transform_draw(const Tensor& x, double rho, double sigma_noise, Rng& rng);

/// Seeded convenience wrapper around spectrum_transform_draw.
Tensor spectrum_transform(const Tensor& x, const SpectrumTransformParams& params);

/// Vector-Jacobian product of the transform: idct2(mask * dct2(grad)).
Tensor spectrum_transform_backward(const Tensor& grad_output, const Tensor& mask);

/// Per-channel map over the frequency plane, values in [0,1].
struct SaliencyMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t i, std::size_t j) const { return values[(c * height + i) * width + j]; }
  // Channel-averaged plane for visualisation.
  std::vector<double> channel_mean() const;
};

/// d loss / d dct2(x), signed, one entry per coefficient and image.
Tensor spectrum_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels);

/// |spectrum_gradient| averaged over the batch, then max-min normalised per
/// channel. A constant channel normalises to all zeros.
SaliencyMap spectrum_saliency(const Classifier& model, const Tensor& x, std::span<const int> labels);

SaliencyMap normalize_saliency(const Tensor& mean_abs_gradient);

}  // namespace fpba
