#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpba/rng.hpp"
#include "json.hpp"

namespace fpba::nn {

struct Dims {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t size() const { return c * h * w; }
  bool operator==(const Dims&) const = default;
};

struct ParamInfo {
  std::string name;
  std::vector<std::size_t> dims;
  std::size_t count() const;
};

/// A stateless per-sample operator. Parameters live in the owning
/// Sequential's flat buffer and are handed in as spans.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Dims output_dims(Dims in) const = 0;
  virtual std::vector<ParamInfo> params() const { return {}; }
  virtual void init_params(std::span<double> /*params*/, Rng& /*rng*/) const {}
  virtual bool differentiable() const { return true; }
  virtual nlohmann::json config() const { return {{"kind", kind()}}; }

  virtual void forward(std::span<const double> params, Dims in, std::span<const double> x,
                       std::span<double> y) const = 0;

  /// Writes dL/dx into grad_x (overwrite) and accumulates dL/dparams into
  /// grad_params when it is non-empty.
  virtual void backward(std::span<const double> params, Dims in, std::span<const double> x,
                        std::span<const double> y, std::span<const double> grad_y, std::span<double> grad_x,
                        std::span<double> grad_params) const = 0;

  std::size_t param_count() const;
};

using LayerPtr = std::shared_ptr<const Layer>;

LayerPtr resize_bilinear(std::size_t out_h, std::size_t out_w);
LayerPtr resize_nearest(std::size_t out_h, std::size_t out_w);
LayerPtr normalize(std::vector<double> mean, std::vector<double> stddev);
LayerPtr grayscale();
LayerPtr dct();
LayerPtr log_magnitude(double delta);
LayerPtr conv3x3(std::size_t in_channels, std::size_t out_channels);
LayerPtr relu();
LayerPtr max_pool2();
LayerPtr global_avg_pool();
LayerPtr linear(std::size_t in, std::size_t out, bool zero_init = false);
LayerPtr sigmoid();

LayerPtr layer_from_config(const nlohmann::json& cfg);

/// Activations recorded during a forward pass; acts[0] is the input.
struct Trace {
  std::vector<Dims> dims;
  std::vector<std::vector<double>> acts;
  std::span<const double> output() const { return acts.back(); }
};

/// Chain of layers with one contiguous parameter buffer. Copies are deep for
/// parameters and share the immutable layer descriptors.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers);

  const std::vector<LayerPtr>& layers() const { return layers_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_offset(std::size_t layer) const { return offsets_[layer]; }
  bool differentiable() const;

  void init(Rng& rng);
  Dims output_dims(Dims in) const;

  void forward(std::span<const double> x, Dims in, Trace& trace) const;
  std::vector<double> forward(std::span<const double> x, Dims in) const;

  /// grad_params, when non-empty, must have param_count() entries and is
  /// accumulated into.
  void backward(const Trace& trace, std::span<const double> grad_out, std::span<double> grad_in,
                std::span<double> grad_params) const;

  // Named parameter tensors ("<layer index>.<name>") in buffer order.
  std::vector<std::pair<ParamInfo, std::size_t>> named_params() const;

  nlohmann::json architecture() const;
  static Sequential from_architecture(const nlohmann::json& arch);

 private:
  std::vector<LayerPtr> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace fpba::nn
