#include "fpba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fpba/error.hpp"

namespace fpba {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), values_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.numel()) {
    throw InvalidInput("tensor of shape " + shape_.str() + " given " + std::to_string(values_.size()) +
                       " values");
  }
}

std::span<double> Tensor::image(std::size_t n) {
  return std::span<double>(values_).subspan(n * shape_.per_image(), shape_.per_image());
}

std::span<const double> Tensor::image(std::size_t n) const {
  return std::span<const double>(values_).subspan(n * shape_.per_image(), shape_.per_image());
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::in_unit_range() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

Tensor Tensor::gather(std::span<const std::size_t> indices) const {
  Shape s = shape_;
  s.n = indices.size();
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= shape_.n) throw InvalidInput("gather index out of range");
    auto src = image(indices[i]);
    std::copy(src.begin(), src.end(), out.image(i).begin());
  }
  return out;
}

void check_batch(const Tensor& t, const char* what) {
  if (t.shape().numel() == 0) throw InvalidInput(std::string(what) + ": empty batch");
  if (!t.all_finite()) throw InvalidInput(std::string(what) + ": non-finite input");
}

void check_labels(const Tensor& t, std::span<const int> labels, const char* what) {
  if (labels.size() != t.shape().n) {
    throw InvalidInput(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(t.shape().n) + " images");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidInput(std::string(what) + ": labels must be 0 (real) or 1 (fake)");
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw InvalidInput("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace fpba
