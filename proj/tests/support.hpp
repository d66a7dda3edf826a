#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fpba/classifier.hpp"
#include "fpba/detector.hpp"
#include "fpba/rng.hpp"
#include "fpba/tensor.hpp"

namespace fpba::testing {

inline Tensor random_batch(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed,
                           double lo = 0.0, double hi = 1.0) {
  Tensor t(Shape{n, c, h, w});
  Rng rng = make_rng(seed, 77);
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

inline Labels alternating_labels(std::size_t n) {
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
  return y;
}

inline Detector small_detector(Arch arch, std::size_t size, std::uint64_t seed, std::size_t channels = 3) {
  PreprocessSpec pre;
  pre.input_size = size;
  pre.channels = channels;
  if (channels != 3) {
    pre.mean.assign(channels, 0.5);
    pre.stddev.assign(channels, 0.25);
  }
  return Detector::make(arch, pre, seed);
}

/// logit = w . x + b, identical for every image.
class LinearModel : public Classifier {
 public:
  LinearModel(std::vector<double> w, double b) : w_(std::move(w)), b_(b) {}

  std::vector<double> logits(const Tensor& x) const override {
    std::vector<double> out(x.shape().n, b_);
    for (std::size_t n = 0; n < x.shape().n; ++n) {
      const auto img = x.image(n);
      for (std::size_t i = 0; i < img.size(); ++i) out[n] += w_[i] * img[i];
    }
    return out;
  }

  Tensor loss_gradient(const Tensor& x, std::span<const int> labels) const override {
    Tensor g(x.shape());
    const auto z = logits(x);
    for (std::size_t n = 0; n < x.shape().n; ++n) {
      const double s = bce_grad(z[n], labels[n]);
      auto row = g.image(n);
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = s * w_[i];
    }
    return g;
  }

  const std::vector<double>& weights() const { return w_; }

 private:
  std::vector<double> w_;
  double b_;
};

/// Fixed predictions by image index, read from the first pixel; gradients are zero.
class LookupModel : public Classifier {
 public:
  explicit LookupModel(std::vector<double> logits_by_id) : table_(std::move(logits_by_id)) {}
  std::vector<double> logits(const Tensor& x) const override {
    std::vector<double> out(x.shape().n);
    for (std::size_t n = 0; n < out.size(); ++n) {
      const auto id = static_cast<std::size_t>(std::lround(x.image(n)[0] * 1000.0));
      out[n] = table_.at(id);
    }
    return out;
  }
  Tensor loss_gradient(const Tensor& x, std::span<const int>) const override { return Tensor(x.shape()); }

 private:
  std::vector<double> table_;
};

/// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fpba-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.storage() == b.storage();
}

}  // namespace fpba::testing
