#include "fpba/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "fpba/error.hpp"
#include "fpba/frequency.hpp"

namespace fpba::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMatrix>;
using ConstMapMat = Eigen::Map<const RowMatrix>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

std::size_t ParamInfo::count() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t Layer::param_count() const {
  std::size_t total = 0;
  for (const auto& p : params()) total += p.count();
  return total;
}

namespace {

void init_uniform(std::span<double> w, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w) v = dist(rng);
}

// Linear interpolation taps for one axis, half-pixel centres.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::max(src, 0.0);
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    t.lo.push_back(lo);
    t.hi.push_back(std::min(lo + 1, in - 1));
    t.frac.push_back(src - static_cast<double>(lo));
  }
  return t;
}

class ResizeBilinear final : public Layer {
 public:
  ResizeBilinear(std::size_t h, std::size_t w) : h_(h), w_(w) {}
  std::string kind() const override { return "resize_bilinear"; }
  nlohmann::json config() const override { return {{"kind", kind()}, {"height", h_}, {"width", w_}}; }
  Dims output_dims(Dims in) const override { return {in.c, h_, w_}; }

  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    if (in.h == h_ && in.w == w_) {
      std::copy(x.begin(), x.end(), y.begin());
      return;
    }
    const Taps ty = bilinear_taps(in.h, h_), tx = bilinear_taps(in.w, w_);
    for (std::size_t c = 0; c < in.c; ++c) {
      const double* src = x.data() + c * in.h * in.w;
      double* dst = y.data() + c * h_ * w_;
      for (std::size_t i = 0; i < h_; ++i) {
        for (std::size_t j = 0; j < w_; ++j) {
          const double a = src[ty.lo[i] * in.w + tx.lo[j]], b = src[ty.lo[i] * in.w + tx.hi[j]];
          const double d = src[ty.hi[i] * in.w + tx.lo[j]], e = src[ty.hi[i] * in.w + tx.hi[j]];
          const double top = a + (b - a) * tx.frac[j], bottom = d + (e - d) * tx.frac[j];
          dst[i * w_ + j] = top + (bottom - top) * ty.frac[i];
        }
      }
    }
  }

  void backward(std::span<const double>, Dims in, std::span<const double>, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    if (in.h == h_ && in.w == w_) {
      std::copy(gy.begin(), gy.end(), gx.begin());
      return;
    }
    std::fill(gx.begin(), gx.end(), 0.0);
    const Taps ty = bilinear_taps(in.h, h_), tx = bilinear_taps(in.w, w_);
    for (std::size_t c = 0; c < in.c; ++c) {
      double* dst = gx.data() + c * in.h * in.w;
      const double* g = gy.data() + c * h_ * w_;
      for (std::size_t i = 0; i < h_; ++i) {
        for (std::size_t j = 0; j < w_; ++j) {
          const double v = g[i * w_ + j], fy = ty.frac[i], fx = tx.frac[j];
          dst[ty.lo[i] * in.w + tx.lo[j]] += v * (1 - fy) * (1 - fx);
          dst[ty.lo[i] * in.w + tx.hi[j]] += v * (1 - fy) * fx;
          dst[ty.hi[i] * in.w + tx.lo[j]] += v * fy * (1 - fx);
          dst[ty.hi[i] * in.w + tx.hi[j]] += v * fy * fx;
        }
      }
    }
  }

 private:
  std::size_t h_, w_;
};

// Piecewise constant, so it has no useful gradient.
class ResizeNearest final : public Layer {
 public:
  ResizeNearest(std::size_t h, std::size_t w) : h_(h), w_(w) {}
  std::string kind() const override { return "resize_nearest"; }
  nlohmann::json config() const override { return {{"kind", kind()}, {"height", h_}, {"width", w_}}; }
  Dims output_dims(Dims in) const override { return {in.c, h_, w_}; }
  bool differentiable() const override { return false; }

  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < h_; ++i) {
        const std::size_t si = std::min(in.h - 1, i * in.h / h_);
        for (std::size_t j = 0; j < w_; ++j) {
          const std::size_t sj = std::min(in.w - 1, j * in.w / w_);
          y[(c * h_ + i) * w_ + j] = x[(c * in.h + si) * in.w + sj];
        }
      }
    }
  }

  void backward(std::span<const double>, Dims, std::span<const double>, std::span<const double>,
                std::span<const double>, std::span<double>, std::span<double>) const override {
    throw CapabilityError("resize_nearest is not differentiable");
  }

 private:
  std::size_t h_, w_;
};

class Normalize final : public Layer {
 public:
  Normalize(std::vector<double> mean, std::vector<double> stddev) : mean_(std::move(mean)), std_(std::move(stddev)) {
    if (mean_.size() != std_.size()) throw InvalidParameter("normalize: mean/std size mismatch");
    for (double s : std_) {
      if (!(s > 0.0)) throw InvalidParameter("normalize: std must be positive");
    }
  }
  std::string kind() const override { return "normalize"; }
  nlohmann::json config() const override { return {{"kind", kind()}, {"mean", mean_}, {"std", std_}}; }
  Dims output_dims(Dims in) const override {
    if (in.c != mean_.size()) throw InvalidInput("normalize: expected " + std::to_string(mean_.size()) + " channels");
    return in;
  }

  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    const std::size_t plane = in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] = (x[c * plane + i] - mean_[c]) / std_[c];
    }
  }

  void backward(std::span<const double>, Dims in, std::span<const double>, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    const std::size_t plane = in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] = gy[c * plane + i] / std_[c];
    }
  }

 private:
  std::vector<double> mean_, std_;
};

class Grayscale final : public Layer {
 public:
  std::string kind() const override { return "grayscale"; }
  Dims output_dims(Dims in) const override { return {1, in.h, in.w}; }

  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    const std::size_t plane = in.h * in.w;
    const double inv = 1.0 / static_cast<double>(in.c);
    for (std::size_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < in.c; ++c) s += x[c * plane + i];
      y[i] = s * inv;
    }
  }

  void backward(std::span<const double>, Dims in, std::span<const double>, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    const std::size_t plane = in.h * in.w;
    const double inv = 1.0 / static_cast<double>(in.c);
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] = gy[i] * inv;
    }
  }
};

class Dct final : public Layer {
 public:
  std::string kind() const override { return "dct2"; }
  Dims output_dims(Dims in) const override { return in; }

  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    const std::size_t plane = in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c) {
      dct2_plane<double>(x.subspan(c * plane, plane), y.subspan(c * plane, plane), in.h, in.w);
    }
  }

  // The orthonormal DCT's transpose is its inverse.
  void backward(std::span<const double>, Dims in, std::span<const double>, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    const std::size_t plane = in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c) {
      idct2_plane<double>(gy.subspan(c * plane, plane), gx.subspan(c * plane, plane), in.h, in.w);
    }
  }
};

// 0.5 * log(v^2 + delta): a smooth log-amplitude.
class LogMagnitude final : public Layer {
 public:
  explicit LogMagnitude(double delta) : delta_(delta) {
    if (!(delta > 0.0)) throw InvalidParameter("log_magnitude: delta must be positive");
  }
  std::string kind() const override { return "log_magnitude"; }
  nlohmann::json config() const override { return {{"kind", kind()}, {"delta", delta_}}; }
  Dims output_dims(Dims in) const override { return in; }

  void forward(std::span<const double>, Dims, std::span<const double> x, std::span<double> y) const override {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.5 * std::log(x[i] * x[i] + delta_);
  }

  void backward(std::span<const double>, Dims, std::span<const double> x, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = gy[i] * x[i] / (x[i] * x[i] + delta_);
  }

 private:
  double delta_;
};

// 3x3 convolution, stride 1, zero padding 1, via im2col.
class Conv3x3 final : public Layer {
 public:
  Conv3x3(std::size_t cin, std::size_t cout) : cin_(cin), cout_(cout) {}
  std::string kind() const override { return "conv3x3"; }
  nlohmann::json config() const override { return {{"kind", kind()}, {"in", cin_}, {"out", cout_}}; }
  std::vector<ParamInfo> params() const override {
    return {{"weight", {cout_, cin_, 3, 3}}, {"bias", {cout_}}};
  }
  Dims output_dims(Dims in) const override {
    if (in.c != cin_) throw InvalidInput("conv3x3: expected " + std::to_string(cin_) + " input channels");
    return {cout_, in.h, in.w};
  }
  void init_params(std::span<double> p, Rng& rng) const override {
    const double fan_in = static_cast<double>(cin_ * 9);
    init_uniform(p.first(cout_ * cin_ * 9), std::sqrt(6.0 / fan_in), rng);
    std::fill(p.begin() + cout_ * cin_ * 9, p.end(), 0.0);
  }

  void forward(std::span<const double> p, Dims in, std::span<const double> x, std::span<double> y) const override {
    const std::size_t hw = in.h * in.w;
    RowMatrix cols = im2col(in, x);
    ConstMapMat weight(p.data(), cout_, cin_ * 9);
    ConstMapVec bias(p.data() + cout_ * cin_ * 9, cout_);
    MapMat out(y.data(), cout_, hw);
    out.noalias() = weight * cols;
    out.colwise() += bias;
  }

  void backward(std::span<const double> p, Dims in, std::span<const double> x, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double> gp) const override {
    const std::size_t hw = in.h * in.w;
    ConstMapMat weight(p.data(), cout_, cin_ * 9);
    ConstMapMat grad_out(gy.data(), cout_, hw);
    if (!gp.empty()) {
      RowMatrix cols = im2col(in, x);
      MapMat gw(gp.data(), cout_, cin_ * 9);
      gw.noalias() += grad_out * cols.transpose();
      MapVec gb(gp.data() + cout_ * cin_ * 9, cout_);
      gb += grad_out.rowwise().sum();
    }
    RowMatrix gcols = weight.transpose() * grad_out;
    col2im(in, gcols, gx);
  }

 private:
  RowMatrix im2col(Dims in, std::span<const double> x) const {
    const std::size_t hw = in.h * in.w;
    RowMatrix cols = RowMatrix::Zero(cin_ * 9, hw);
    for (std::size_t c = 0; c < cin_; ++c) {
      const double* src = x.data() + c * hw;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          double* row = cols.data() + ((c * 9) + ky * 3 + kx) * hw;
          for (std::size_t i = 0; i < in.h; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + ky) - 1;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t j = 0; j < in.w; ++j) {
              const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + kx) - 1;
              if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(in.w)) continue;
              row[i * in.w + j] = src[si * static_cast<std::ptrdiff_t>(in.w) + sj];
            }
          }
        }
      }
    }
    return cols;
  }

  void col2im(Dims in, const RowMatrix& gcols, std::span<double> gx) const {
    const std::size_t hw = in.h * in.w;
    std::fill(gx.begin(), gx.end(), 0.0);
    for (std::size_t c = 0; c < cin_; ++c) {
      double* dst = gx.data() + c * hw;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double* row = gcols.data() + ((c * 9) + ky * 3 + kx) * hw;
          for (std::size_t i = 0; i < in.h; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + ky) - 1;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t j = 0; j < in.w; ++j) {
              const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + kx) - 1;
              if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(in.w)) continue;
              dst[si * static_cast<std::ptrdiff_t>(in.w) + sj] += row[i * in.w + j];
            }
          }
        }
      }
    }
  }

  std::size_t cin_, cout_;
};

class Relu final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Dims output_dims(Dims in) const override { return in; }
  void forward(std::span<const double>, Dims, std::span<const double> x, std::span<double> y) const override {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  void backward(std::span<const double>, Dims, std::span<const double> x, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
  }
};

// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
class MaxPool2 final : public Layer {
 public:
  std::string kind() const override { return "max_pool2"; }
  Dims output_dims(Dims in) const override {
    if (in.h < 2 || in.w < 2) throw InvalidInput("max_pool2: input smaller than 2x2");
    return {in.c, in.h / 2, in.w / 2};
  }

  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    const Dims out = output_dims(in);
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < out.h; ++i) {
        for (std::size_t j = 0; j < out.w; ++j) y[(c * out.h + i) * out.w + j] = x[argmax(in, x, c, i, j)];
      }
    }
  }

  void backward(std::span<const double>, Dims in, std::span<const double> x, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    const Dims out = output_dims(in);
    std::fill(gx.begin(), gx.end(), 0.0);
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < out.h; ++i) {
        for (std::size_t j = 0; j < out.w; ++j) gx[argmax(in, x, c, i, j)] += gy[(c * out.h + i) * out.w + j];
      }
    }
  }

 private:
  static std::size_t argmax(Dims in, std::span<const double> x, std::size_t c, std::size_t i, std::size_t j) {
    std::size_t best = (c * in.h + 2 * i) * in.w + 2 * j;
    for (std::size_t di = 0; di < 2; ++di) {
      for (std::size_t dj = 0; dj < 2; ++dj) {
        const std::size_t idx = (c * in.h + 2 * i + di) * in.w + 2 * j + dj;
        if (x[idx] > x[best]) best = idx;
      }
    }
    return best;
  }
};

class GlobalAvgPool final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Dims output_dims(Dims in) const override { return {in.c, 1, 1}; }
  void forward(std::span<const double>, Dims in, std::span<const double> x, std::span<double> y) const override {
    const std::size_t plane = in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
      y[c] = s / static_cast<double>(plane);
    }
  }
  void backward(std::span<const double>, Dims in, std::span<const double>, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    const std::size_t plane = in.h * in.w;
    for (std::size_t c = 0; c < in.c; ++c) {
      const double g = gy[c] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] = g;
    }
  }
};

// Fully connected over the flattened input.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out, bool zero_init) : in_(in), out_(out), zero_init_(zero_init) {}
  std::string kind() const override { return "linear"; }
  nlohmann::json config() const override {
    return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"zero_init", zero_init_}};
  }
  std::vector<ParamInfo> params() const override { return {{"weight", {out_, in_}}, {"bias", {out_}}}; }
  Dims output_dims(Dims in) const override {
    if (in.size() != in_) {
      throw InvalidInput("linear: expected " + std::to_string(in_) + " inputs, got " + std::to_string(in.size()));
    }
    return {out_, 1, 1};
  }
  void init_params(std::span<double> p, Rng& rng) const override {
    if (zero_init_) {
      std::fill(p.begin(), p.end(), 0.0);
      return;
    }
    init_uniform(p.first(in_ * out_), std::sqrt(6.0 / static_cast<double>(in_)), rng);
    std::fill(p.begin() + in_ * out_, p.end(), 0.0);
  }

  void forward(std::span<const double> p, Dims, std::span<const double> x, std::span<double> y) const override {
    ConstMapMat weight(p.data(), out_, in_);
    ConstMapVec bias(p.data() + in_ * out_, out_);
    MapVec out(y.data(), out_);
    out.noalias() = weight * ConstMapVec(x.data(), in_);
    out += bias;
  }

  void backward(std::span<const double> p, Dims, std::span<const double> x, std::span<const double>,
                std::span<const double> gy, std::span<double> gx, std::span<double> gp) const override {
    ConstMapMat weight(p.data(), out_, in_);
    ConstMapVec grad_out(gy.data(), out_);
    if (!gp.empty()) {
      MapMat gw(gp.data(), out_, in_);
      gw.noalias() += grad_out * ConstMapVec(x.data(), in_).transpose();
      MapVec(gp.data() + in_ * out_, out_) += grad_out;
    }
    MapVec(gx.data(), in_).noalias() = weight.transpose() * grad_out;
  }

 private:
  std::size_t in_, out_;
  bool zero_init_;
};

class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Dims output_dims(Dims in) const override { return in; }
  void forward(std::span<const double>, Dims, std::span<const double> x, std::span<double> y) const override {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fpba::sigmoid(x[i]);
  }
  void backward(std::span<const double>, Dims, std::span<const double>, std::span<const double> y,
                std::span<const double> gy, std::span<double> gx, std::span<double>) const override {
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (1.0 - y[i]);
  }
};

}  // namespace

LayerPtr resize_bilinear(std::size_t h, std::size_t w) { return std::make_shared<ResizeBilinear>(h, w); }
LayerPtr resize_nearest(std::size_t h, std::size_t w) { return std::make_shared<ResizeNearest>(h, w); }
LayerPtr normalize(std::vector<double> mean, std::vector<double> stddev) {
  return std::make_shared<Normalize>(std::move(mean), std::move(stddev));
}
LayerPtr grayscale() { return std::make_shared<Grayscale>(); }
LayerPtr dct() { return std::make_shared<Dct>(); }
LayerPtr log_magnitude(double delta) { return std::make_shared<LogMagnitude>(delta); }
LayerPtr conv3x3(std::size_t in, std::size_t out) { return std::make_shared<Conv3x3>(in, out); }
LayerPtr relu() { return std::make_shared<Relu>(); }
LayerPtr max_pool2() { return std::make_shared<MaxPool2>(); }
LayerPtr global_avg_pool() { return std::make_shared<GlobalAvgPool>(); }
LayerPtr linear(std::size_t in, std::size_t out, bool zero_init) {
  return std::make_shared<Linear>(in, out, zero_init);
}
LayerPtr sigmoid() { return std::make_shared<Sigmoid>(); }

LayerPtr layer_from_config(const nlohmann::json& cfg) {
  const std::string kind = cfg.at("kind").get<std::string>();
  if (kind == "resize_bilinear") return resize_bilinear(cfg.at("height"), cfg.at("width"));
  if (kind == "resize_nearest") return resize_nearest(cfg.at("height"), cfg.at("width"));
  if (kind == "normalize") return normalize(cfg.at("mean"), cfg.at("std"));
  if (kind == "grayscale") return grayscale();
  if (kind == "dct2") return dct();
  if (kind == "log_magnitude") return log_magnitude(cfg.at("delta"));
  if (kind == "conv3x3") return conv3x3(cfg.at("in"), cfg.at("out"));
  if (kind == "relu") return relu();
  if (kind == "max_pool2") return max_pool2();
  if (kind == "global_avg_pool") return global_avg_pool();
  if (kind == "linear") return linear(cfg.at("in"), cfg.at("out"), cfg.value("zero_init", false));
  if (kind == "sigmoid") return sigmoid();
  throw FormatError("unknown layer kind '" + kind + "'");
}

Sequential::Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {
  std::size_t offset = 0;
  for (const auto& layer : layers_) {
    offsets_.push_back(offset);
    offset += layer->param_count();
  }
  offsets_.push_back(offset);
  params_.assign(offset, 0.0);
}

bool Sequential::differentiable() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const LayerPtr& l) { return l->differentiable(); });
}

void Sequential::init(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->init_params(std::span<double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]), rng);
  }
}

Dims Sequential::output_dims(Dims in) const {
  for (const auto& layer : layers_) in = layer->output_dims(in);
  return in;
}

void Sequential::forward(std::span<const double> x, Dims in, Trace& trace) const {
  if (x.size() != in.size()) throw InvalidInput("sequential: input size does not match dims");
  trace.dims.resize(layers_.size() + 1);
  trace.acts.resize(layers_.size() + 1);
  trace.dims[0] = in;
  trace.acts[0].assign(x.begin(), x.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Dims out = layers_[i]->output_dims(trace.dims[i]);
    trace.dims[i + 1] = out;
    trace.acts[i + 1].resize(out.size());
    const auto p = std::span<const double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
    layers_[i]->forward(p, trace.dims[i], trace.acts[i], trace.acts[i + 1]);
  }
}

std::vector<double> Sequential::forward(std::span<const double> x, Dims in) const {
  Trace trace;
  forward(x, in, trace);
  return std::move(trace.acts.back());
}

void Sequential::backward(const Trace& trace, std::span<const double> grad_out, std::span<double> grad_in,
                          std::span<double> grad_params) const {
  if (trace.acts.size() != layers_.size() + 1) throw InvalidInput("sequential: trace does not match network");
  if (!grad_params.empty() && grad_params.size() != params_.size()) {
    throw InvalidInput("sequential: parameter gradient buffer has wrong size");
  }
  std::vector<double> upstream(grad_out.begin(), grad_out.end());
  std::vector<double> downstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    downstream.assign(trace.dims[i].size(), 0.0);
    const auto p = std::span<const double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
    auto gp = grad_params.empty() ? std::span<double>()
                                  : grad_params.subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
    layers_[i]->backward(p, trace.dims[i], trace.acts[i], trace.acts[i + 1], upstream, downstream, gp);
    upstream.swap(downstream);
  }
  if (grad_in.size() != upstream.size()) throw InvalidInput("sequential: input gradient buffer has wrong size");
  std::copy(upstream.begin(), upstream.end(), grad_in.begin());
}

std::vector<std::pair<ParamInfo, std::size_t>> Sequential::named_params() const {
  std::vector<std::pair<ParamInfo, std::size_t>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::size_t offset = offsets_[i];
    for (auto info : layers_[i]->params()) {
      const std::size_t count = info.count();
      info.name = std::to_string(i) + "." + info.name;
      out.emplace_back(std::move(info), offset);
      offset += count;
    }
  }
  return out;
}

nlohmann::json Sequential::architecture() const {
  nlohmann::json arch = nlohmann::json::array();
  for (const auto& layer : layers_) arch.push_back(layer->config());
  return arch;
}

Sequential Sequential::from_architecture(const nlohmann::json& arch) {
  std::vector<LayerPtr> layers;
  for (const auto& cfg : arch) layers.push_back(layer_from_config(cfg));
  return Sequential(std::move(layers));
}

}  // namespace fpba::nn
