#pragma once

// Forward and backward kernels for every primitive the two networks use.
// All kernels are pure: they read their arguments and return fresh tensors.
// The one documented mutation is batchnorm_forward updating running
// statistics in training mode.

#include <cstddef>

#include "ecgadv/tensor.hpp"

namespace ecgadv {

enum class Mode { kTrain, kInference };

/// Convolution / transposed convolution parameters.
/// weight is [kernel, in_channels, out_channels], bias is [out_channels].
struct ConvParams {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // transposed convolution only

  std::size_t kernel() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(2); }
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  std::size_t channels() const { return gamma.size(); }
};

/// weight is [in_features, out_features], bias is [out_features].
struct DenseParams {
  Tensor weight;
  Tensor bias;
};

struct ParamGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// ---- convolution ---------------------------------------------------------

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding);
std::size_t conv1d_transpose_output_length(std::size_t length, std::size_t kernel,
                                           std::size_t stride, std::size_t padding,
                                           std::size_t output_padding);

/// Cross-correlation (no kernel flip) plus bias. input is [batch, length, in_ch].
Tensor conv1d_forward(const Tensor& input, const ConvParams& params);
ParamGrads conv1d_backward(const Tensor& grad_out, const Tensor& cached_input,
                           const ConvParams& params);

/// Adjoint of conv1d_forward with respect to its input, plus bias.
Tensor conv1d_transpose_forward(const Tensor& input, const ConvParams& params);
ParamGrads conv1d_transpose_backward(const Tensor& grad_out, const Tensor& cached_input,
                                     const ConvParams& params);

// ---- batch normalization -------------------------------------------------

/// Values the backward pass needs from the forward pass.
struct BatchNormCache {
  Tensor normalized;              // x_hat, same shape as the input
  std::vector<double> inv_std;    // per channel
  Mode mode = Mode::kInference;
};

/// Normalizes per channel over every (batch, length) position.
/// Training mode uses batch statistics and folds them into the running
/// statistics: running = momentum * running + (1 - momentum) * batch.
Tensor batchnorm_forward(const Tensor& input, BatchNormParams& params, Mode mode,
                         BatchNormCache* cache = nullptr, bool update_running = true);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  const BatchNormParams& params);

// ---- pointwise -----------------------------------------------------------

inline constexpr double kDefaultLeakySlope = 0.2;

Tensor leaky_relu(const Tensor& input, double slope = kDefaultLeakySlope);
Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& cached_input,
                           double slope = kDefaultLeakySlope);

Tensor sigmoid(const Tensor& input);
/// Uses the forward output rather than the input.
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& output);

/// Softmax along the last axis, max-subtracted.
Tensor softmax(const Tensor& input);
Tensor softmax_backward(const Tensor& grad_out, const Tensor& output);

// ---- dense ---------------------------------------------------------------

/// input is [batch, in_features].
Tensor dense_forward(const Tensor& input, const DenseParams& params);
ParamGrads dense_backward(const Tensor& grad_out, const Tensor& cached_input,
                          const DenseParams& params);

}  // namespace ecgadv
