#include "fpba/frequency.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "fpba/error.hpp"

namespace fpba {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Orthonormal DCT-II basis, rows indexed by frequency.
template <typename Scalar>
std::shared_ptr<const RowMatrix<Scalar>> dct_basis(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const RowMatrix<Scalar>>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  RowMatrix<double> basis(n, n);
  const double nd = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / nd) : std::sqrt(2.0 / nd);
    for (std::size_t i = 0; i < n; ++i) {
      basis(k, i) = scale * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * nd));
    }
  }
  auto ptr = std::make_shared<const RowMatrix<Scalar>>(basis.template cast<Scalar>());
  cache.emplace(n, ptr);
  return ptr;
}

template <typename Scalar>
void check_plane(std::span<const Scalar> in, std::span<Scalar> out, std::size_t h, std::size_t w) {
  if (in.size() != h * w || out.size() != h * w) throw InvalidInput("dct plane size mismatch");
}

Tensor transform(const Tensor& x, bool inverse) {
  check_batch(x, inverse ? "idct2" : "dct2");
  Tensor out(x.shape());
  const auto& s = x.shape();
  const std::size_t planes = s.n * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    auto in = x.values().subspan(p * s.plane(), s.plane());
    auto dst = out.values().subspan(p * s.plane(), s.plane());
    if (inverse) {
      idct2_plane<double>(in, dst, s.h, s.w);
    } else {
      dct2_plane<double>(in, dst, s.h, s.w);
    }
  }
  return out;
}

}  // namespace

template <typename Scalar>
void dct2_plane(std::span<const Scalar> in, std::span<Scalar> out, std::size_t h, std::size_t w) {
  check_plane(in, out, h, w);
  auto ch = dct_basis<Scalar>(h);
  auto cw = dct_basis<Scalar>(w);
  Eigen::Map<const RowMatrix<Scalar>> src(in.data(), h, w);
  Eigen::Map<RowMatrix<Scalar>> dst(out.data(), h, w);
  dst.noalias() = (*ch) * src * cw->transpose();
}

template <typename Scalar>
void idct2_plane(std::span<const Scalar> in, std::span<Scalar> out, std::size_t h, std::size_t w) {
  check_plane(in, out, h, w);
  auto ch = dct_basis<Scalar>(h);
  auto cw = dct_basis<Scalar>(w);
  Eigen::Map<const RowMatrix<Scalar>> src(in.data(), h, w);
  Eigen::Map<RowMatrix<Scalar>> dst(out.data(), h, w);
  dst.noalias() = ch->transpose() * src * (*cw);
}

template void dct2_plane<float>(std::span<const float>, std::span<float>, std::size_t, std::size_t);
template void dct2_plane<double>(std::span<const double>, std::span<double>, std::size_t, std::size_t);
template void idct2_plane<float>(std::span<const float>, std::span<float>, std::size_t, std::size_t);
template void idct2_plane<double>(std::span<const double>, std::span<double>, std::size_t, std::size_t);

Tensor dct2(const Tensor& x) { return transform(x, false); }

Tensor idct2(const Tensor& spectrum) { return transform(spectrum, true); }

void SpectrumTransformParams::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw InvalidParameter("spectrum transform: rho must lie in [0, 1)");
  if (!(sigma_noise >= 0.0) || !std::isfinite(sigma_noise)) {
    throw InvalidParameter("spectrum transform: sigma_noise must be finite and >= 0");
  }
}

SpectrumDraw spectrum_transform_draw(const Tensor& x, double rho, double sigma_noise, Rng& rng) {
  SpectrumTransformParams{rho, sigma_noise, 0}.validate();
  check_batch(x, "spectrum_transform");
  if (rho == 0.0 && sigma_noise == 0.0) return {x, Tensor()};

  Tensor noisy = x;
  if (sigma_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma_noise);
    for (double& v : noisy.values()) v += noise(rng);
  }
  Tensor mask(x.shape(), 1.0);
  if (rho > 0.0) {
    std::uniform_real_distribution<double> unif(1.0 - rho, 1.0 + rho);
    for (double& m : mask.values()) m = unif(rng);
  }
  Tensor spectrum = dct2(noisy);
  for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= mask[i];
  return {idct2(spectrum), std::move(mask)};
}

Tensor spectrum_transform(const Tensor& x, const SpectrumTransformParams& params) {
  params.validate();
  Rng rng = make_rng(params.rng_seed);
  return spectrum_transform_draw(x, params.rho, params.sigma_noise, rng).output;
}

Tensor spectrum_transform_backward(const Tensor& grad_output, const Tensor& mask) {
  if (mask.empty()) return grad_output;
  if (mask.shape() != grad_output.shape()) throw InvalidInput("spectrum_transform_backward: shape mismatch");
  Tensor spectrum = dct2(grad_output);
  for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= mask[i];
  return idct2(spectrum);
}

std::vector<double> SaliencyMap::channel_mean() const {
  std::vector<double> plane(height * width, 0.0);
  if (channels == 0) return plane;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < height * width; ++i) plane[i] += values[c * height * width + i];
  }
  for (double& v : plane) v /= static_cast<double>(channels);
  return plane;
}

Tensor spectrum_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  if (!model.has_gradient()) throw CapabilityError("spectrum_saliency: model '" + model.name() + "' has no gradients");
  check_batch(x, "spectrum_saliency");
  check_labels(x, labels, "spectrum_saliency");
  // x = idct2(s), so dJ/ds = idct2^T (dJ/dx) = dct2(dJ/dx) for the orthonormal pair.
  return dct2(model.loss_gradient(x, labels));
}

SaliencyMap normalize_saliency(const Tensor& mean_abs_gradient) {
  const auto& s = mean_abs_gradient.shape();
  if (s.n != 1) throw InvalidInput("normalize_saliency: expects a single aggregated map");
  SaliencyMap map{s.c, s.h, s.w, std::vector<double>(s.per_image(), 0.0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    auto plane = mean_abs_gradient.values().subspan(c * s.plane(), s.plane());
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) continue;
    for (std::size_t i = 0; i < s.plane(); ++i) map.values[c * s.plane() + i] = (plane[i] - *lo) / range;
  }
  return map;
}

SaliencyMap spectrum_saliency(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  const Tensor grad = spectrum_gradient(model, x, labels);
  const auto& s = grad.shape();
  Tensor mean(Shape{1, s.c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto img = grad.image(n);
    for (std::size_t i = 0; i < img.size(); ++i) mean[i] += std::abs(img[i]);
  }
  for (double& v : mean.values()) v /= static_cast<double>(s.n);
  return normalize_saliency(mean);
}

}  // namespace fpba
