#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fpba {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t per_image() const { return c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 tensor in NCHW order. Images live in [0,1]; spectra and
/// gradients share the same container.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  std::span<double> image(std::size_t n);
  std::span<const double> image(std::size_t n) const;

  bool all_finite() const;
  bool in_unit_range() const;

  // Copies of a subset of images, in the given order.
  Tensor gather(std::span<const std::size_t> indices) const;
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

 private:
  Shape shape_;
  std::vector<double> values_;
};

using Labels = std::vector<int>;

/// Throws InvalidInput unless `t` is finite, non-empty and `labels` (when
/// given) has one entry per image with values in {0, 1}.
void check_batch(const Tensor& t, const char* what);
void check_labels(const Tensor& t, std::span<const int> labels, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

// 64-bit FNV-1a over raw bytes; used for checksums and content hashes.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace fpba
