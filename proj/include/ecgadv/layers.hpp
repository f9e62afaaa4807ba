#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ecgadv/ops.hpp"
#include "ecgadv/rng.hpp"
#include "ecgadv/tensor.hpp"

namespace ecgadv {

enum class LayerKind {
  kConv1d,
  kConv1dTranspose,
  kBatchNorm,
  kDense,
  kLeakyRelu,
  kSigmoid,
  kSoftmax,
  kFlatten,
};

const char* to_string(LayerKind kind);

/// Stateful wrapper around one primitive: caches what backward needs and
/// accumulates parameter gradients into each parameter tensor's grad buffer.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Tensor forward(const Tensor& input, Mode mode) = 0;
  /// Returns the input gradient. With `param_grads` false only the input
  /// gradient is computed (frozen layers).
  virtual Tensor backward(const Tensor& grad_out, bool param_grads = true) = 0;

  virtual std::vector<ParamRef> parameters() { return {}; }
  /// Non-learned state that still belongs in a checkpoint.
  virtual std::vector<ParamRef> buffers() { return {}; }
  /// Conventional GAN initialization: N(0, 0.02) weights, zero biases.
  virtual void initialize(Rng&) {}

  virtual std::string describe() const { return to_string(kind()); }
};

inline constexpr double kInitStddev = 0.02;

class Conv1dLayer final : public Layer {
 public:
  Conv1dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
              std::size_t stride, std::size_t padding);

  LayerKind kind() const override { return LayerKind::kConv1d; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;
  std::vector<ParamRef> parameters() override;
  void initialize(Rng& rng) override;
  std::string describe() const override;

  ConvParams& params() { return params_; }
  const ConvParams& params() const { return params_; }

 private:
  ConvParams params_;
  std::optional<Tensor> cached_input_;
};

class Conv1dTransposeLayer final : public Layer {
 public:
  Conv1dTransposeLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                       std::size_t stride, std::size_t padding, std::size_t output_padding);

  LayerKind kind() const override { return LayerKind::kConv1dTranspose; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;
  std::vector<ParamRef> parameters() override;
  void initialize(Rng& rng) override;
  std::string describe() const override;

  ConvParams& params() { return params_; }

 private:
  ConvParams params_;
  std::optional<Tensor> cached_input_;
};

class BatchNormLayer final : public Layer {
 public:
  explicit BatchNormLayer(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5);

  LayerKind kind() const override { return LayerKind::kBatchNorm; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;
  std::vector<ParamRef> parameters() override;
  std::vector<ParamRef> buffers() override;
  void initialize(Rng& rng) override;

  BatchNormParams& params() { return params_; }

 private:
  BatchNormParams params_;
  BatchNormCache cache_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in_features, std::size_t out_features);

  LayerKind kind() const override { return LayerKind::kDense; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;
  std::vector<ParamRef> parameters() override;
  void initialize(Rng& rng) override;
  std::string describe() const override;

  DenseParams& params() { return params_; }

 private:
  DenseParams params_;
  std::optional<Tensor> cached_input_;
};

class LeakyReluLayer final : public Layer {
 public:
  explicit LeakyReluLayer(double slope = kDefaultLeakySlope);
  LayerKind kind() const override { return LayerKind::kLeakyRelu; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;
  /// While frozen, forward and backward keep using the negative/positive
  /// pattern of the input seen by the last unfrozen forward, so the layer
  /// acts as a fixed linear map. Used by finite-difference checks to step
  /// over the kink at zero.
  void freeze_pattern(bool frozen);

 private:
  double slope_;
  std::optional<Tensor> cached_input_;
  std::optional<Tensor> frozen_input_;
};

class SigmoidLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kSigmoid; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;

 private:
  std::optional<Tensor> cached_output_;
};

class SoftmaxLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kSoftmax; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;

 private:
  std::optional<Tensor> cached_output_;
};

/// [batch, length, channels] -> [batch, length * channels].
class FlattenLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kFlatten; }
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_out, bool param_grads) override;

 private:
  std::optional<Shape> input_shape_;
};

/// Ordered layer stack; parameter names are "<index>.<field>".
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& input, Mode mode);
  Tensor backward(const Tensor& grad_out, bool param_grads = true);

  std::vector<ParamRef> parameters(const std::string& prefix = "");
  std::vector<ParamRef> buffers(const std::string& prefix = "");
  void initialize(Rng& rng);
  /// Applies LeakyReluLayer::freeze_pattern to every leaky-ReLU layer.
  void freeze_patterns(bool frozen);

  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }
  const Layer& operator[](std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Thrown when backward runs without a matching forward.
class MissingCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ecgadv
