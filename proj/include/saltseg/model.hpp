#pragma once

// Declarative description of the convolutional auto-encoder and its
// forward/backward execution over the kernels in kernels.hpp.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "saltseg/kernels.hpp"
#include "saltseg/tensor.hpp"

namespace saltseg {

enum class LayerKind { conv, maxpool, upsample, downsample, output };
enum class Activation { relu, sigmoid, linear };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::upsample: return "upsample";
    case LayerKind::downsample: return "downsample";
    case LayerKind::output: return "output";
  }
  return "?";
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::size_t filters = 0;  // conv only
  std::size_t kernel = 0;   // conv only, square
  std::size_t target_h = 0;  // resize only
  std::size_t target_w = 0;
  Activation activation = Activation::linear;

  static LayerSpec conv(std::size_t filters, Activation act = Activation::relu) {
    return {LayerKind::conv, filters, 3, 0, 0, act};
  }
  static LayerSpec pool() { return {LayerKind::maxpool}; }
  static LayerSpec up(std::size_t hw) { return {LayerKind::upsample, 0, 0, hw, hw}; }
  static LayerSpec down(std::size_t hw) { return {LayerKind::downsample, 0, 0, hw, hw}; }
  static LayerSpec output() { return {LayerKind::output, 0, 0, 0, 0, Activation::sigmoid}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::size_t in_channels = 1;
  std::size_t in_h = 128;
  std::size_t in_w = 128;
  std::vector<LayerSpec> layers;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// The 23-row encoder/decoder table. By default the last convolution is
/// linear so that it emits logits; `faithful_final_relu` restores the ReLU
/// in front of the sigmoid, which pins every probability to [0.5, 1).
inline ModelSpec canonical_spec(bool faithful_final_relu = false) {
  using L = LayerSpec;
  ModelSpec spec;
  spec.layers = {
      L::conv(8),  L::pool(),  // 1-2
      L::conv(8),  L::pool(),  // 3-4
      L::conv(16), L::pool(),  // 5-6
      L::conv(16), L::pool(),  // 7-8
      L::conv(8),  L::pool(),  // 9-10
      L::up(8),    L::conv(8),   // 11-12
      L::up(16),   L::conv(16),  // 13-14
      L::up(32),   L::conv(16),  // 15-16
      L::up(64),   L::conv(8),   // 17-18
      L::up(128),  L::conv(8),   // 19-20
      L::down(101),                                                        // 21
      L::conv(1, faithful_final_relu ? Activation::relu : Activation::linear),  // 22
      L::output(),                                                         // 23
  };
  return spec;
}

/// Canonical text form; its FNV-1a hash identifies compatible checkpoints.
inline std::string describe(const ModelSpec& spec) {
  std::ostringstream os;
  os << "in=" << spec.in_channels << 'x' << spec.in_h << 'x' << spec.in_w;
  for (const auto& l : spec.layers) {
    os << ';' << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::conv:
        os << ':' << l.filters << ':' << l.kernel << 'x' << l.kernel << ':' << to_string(l.activation);
        break;
      case LayerKind::upsample:
      case LayerKind::downsample:
        os << ':' << l.target_h << 'x' << l.target_w;
        break;
      case LayerKind::output:
        os << ':' << to_string(l.activation);
        break;
      case LayerKind::maxpool:
        break;
    }
  }
  return os.str();
}

inline std::uint64_t spec_hash(const ModelSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : describe(spec)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class Mode { train, infer };

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double glorot_limit(std::size_t in_channels, std::size_t out_channels, std::size_t k) {
  const double fan_in = static_cast<double>(in_channels * k * k);
  const double fan_out = static_cast<double>(out_channels * k * k);
  return std::sqrt(6.0 / (fan_in + fan_out));
}

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    std::mt19937_64 rng(seed);
    std::size_t channels = spec_.in_channels;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      if (l.kind != LayerKind::conv) continue;
      const double limit = glorot_limit(channels, l.filters, l.kernel);
      ConvKernel k{Tensor({l.filters, channels, l.kernel, l.kernel}), Tensor({l.filters})};
      for (auto& w : k.weights.values()) w = (2.0 * uniform01(rng) - 1.0) * limit;
      params_.push_back(std::move(k));
      conv_layers_.push_back(i);
      channels = l.filters;
    }
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::uint64_t hash() const { return spec_hash(spec_); }

  std::vector<ConvKernel>& params() noexcept { return params_; }
  const std::vector<ConvKernel>& params() const noexcept { return params_; }

  /// Zero-based index into spec().layers of each conv kernel.
  const std::vector<std::size_t>& conv_layers() const noexcept { return conv_layers_; }

  /// Weights and biases in the order [w0, b0, w1, b1, ...].
  std::vector<Tensor*> param_tensors() {
    std::vector<Tensor*> out;
    for (auto& k : params_) {
      out.push_back(&k.weights);
      out.push_back(&k.bias);
    }
    return out;
  }
  std::vector<const Tensor*> param_tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& k : params_) {
      out.push_back(&k.weights);
      out.push_back(&k.bias);
    }
    return out;
  }

  /// Names matching param_tensors(), keyed by 1-based layer number.
  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (std::size_t layer : conv_layers_) {
      const std::string base = "conv" + std::to_string(layer + 1);
      out.push_back(base + ".weight");
      out.push_back(base + ".bias");
    }
    return out;
  }

  Dims input_dims(std::size_t batch) const { return {batch, spec_.in_channels, spec_.in_h, spec_.in_w}; }

  /// Runs every layer except the trailing sigmoid and returns logits. Train
  /// mode keeps what backward() needs; `trace`, when given, receives the
  /// output dims of each layer in order.
  Tensor forward(const Tensor& batch, Mode mode, std::vector<Dims>* trace = nullptr) {
    if (mode == Mode::infer) {
      cache_.reset();
      return run(batch, nullptr, trace);
    }
    Cache cache;
    Tensor out = run(batch, &cache, trace);
    cache_ = std::move(cache);
    return out;
  }

  /// Inference-only forward; safe to call concurrently on a shared model.
  Tensor infer(const Tensor& batch) const { return run(batch, nullptr, nullptr); }

  /// Gradients for every kernel, aligned with params(). Consumes the cache
  /// of the preceding train-mode forward.
  std::vector<ConvKernel> backward(const Tensor& grad_logits) {
    if (!cache_) throw StateError("Model::backward called without a train-mode forward");
    Cache cache = std::move(*cache_);
    cache_.reset();
    require_same_dims(grad_logits.dims(), cache.output_dims, "Model::backward grad_logits");

    std::vector<ConvKernel> grads(params_.size());
    Tensor grad = grad_logits;
    std::size_t conv = params_.size();
    for (std::size_t i = spec_.layers.size(); i-- > 0;) {
      const auto& l = spec_.layers[i];
      const auto& rec = cache.layers[i];
      switch (l.kind) {
        case LayerKind::conv: {
          --conv;
          if (l.activation == Activation::relu) grad = relu_backward(rec.pre_activation, grad);
          else if (l.activation == Activation::sigmoid) grad = sigmoid_backward(rec.pre_activation, grad);
          auto g = conv2d_backward(rec.input, params_[conv], grad);
          grads[conv] = ConvKernel{std::move(g.weights), std::move(g.bias)};
          grad = std::move(g.input);
          break;
        }
        case LayerKind::maxpool:
          grad = maxpool2x2_backward(rec.pool, grad);
          break;
        case LayerKind::upsample:
        case LayerKind::downsample:
          grad = resize_nearest_backward(rec.input_dims, grad.dims(), grad);
          break;
        case LayerKind::output:
          break;
      }
    }
    return grads;
  }

  bool has_cache() const noexcept { return cache_.has_value(); }

 private:
  struct LayerRecord {
    Tensor input;           // conv input
    Tensor pre_activation;  // conv output before activation
    PoolIndices pool;
    Dims input_dims;
  };
  struct Cache {
    std::vector<LayerRecord> layers;
    Dims output_dims;
  };

  static Tensor sigmoid_backward(const Tensor& pre, const Tensor& grad_output) {
    Tensor grad = grad_output;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double s = sigmoid(pre[i]);
      grad[i] *= s * (1.0 - s);
    }
    return grad;
  }

  Tensor run(const Tensor& batch, Cache* cache, std::vector<Dims>* trace) const {
    require_rank(batch.dims(), 4, "Model::forward input");
    require_same_dims(batch.dims(), input_dims(batch.dim(0)), "Model::forward input");
    if (cache) cache->layers.resize(spec_.layers.size());
    if (trace) trace->clear();

    Tensor x = batch;
    std::size_t conv = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      switch (l.kind) {
        case LayerKind::conv: {
          Tensor z = conv2d_forward(x, params_[conv++]);
          Tensor y = l.activation == Activation::relu      ? relu(z)
                     : l.activation == Activation::sigmoid ? sigmoid(z)
                                                           : z;
          if (cache) {
            cache->layers[i].input = std::move(x);
            cache->layers[i].pre_activation = std::move(z);
          }
          x = std::move(y);
          break;
        }
        case LayerKind::maxpool: {
          auto [y, idx] = maxpool2x2_forward(x);
          if (cache) cache->layers[i].pool = std::move(idx);
          x = std::move(y);
          break;
        }
        case LayerKind::upsample:
        case LayerKind::downsample: {
          if (cache) cache->layers[i].input_dims = x.dims();
          x = resize_nearest_forward(x, l.target_h, l.target_w);
          break;
        }
        case LayerKind::output:
          // Sigmoid is folded into the loss; predict() applies it explicitly.
          break;
      }
      if (trace) trace->push_back(x.dims());
    }
    if (cache) cache->output_dims = x.dims();
    return x;
  }

  ModelSpec spec_;
  std::vector<ConvKernel> params_;
  std::vector<std::size_t> conv_layers_;
  std::optional<Cache> cache_;
};

inline Model build_model(std::uint64_t seed, bool faithful_final_relu = false) {
  return Model(canonical_spec(faithful_final_relu), seed);
}

}  // namespace saltseg
