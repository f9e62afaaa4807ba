#include "ecgadv/layers.hpp"

namespace ecgadv {
namespace {

void accumulate(Tensor& param, const Tensor& grad) {
  if (!param.has_grad()) param.zero_grad();
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

void init_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& v : t.values()) v = stddev * rng.normal();
}

const Tensor& require_cache(const std::optional<Tensor>& cache, const char* layer) {
  if (!cache) throw MissingCacheError(std::string(layer) + ": backward called before forward");
  return *cache;
}

std::string conv_desc(const char* name, const ConvParams& p) {
  return std::string(name) + "(" + std::to_string(p.in_channels()) + "->" +
         std::to_string(p.out_channels()) + ", k=" + std::to_string(p.kernel()) +
         ", s=" + std::to_string(p.stride) + ", p=" + std::to_string(p.padding) + ")";
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kConv1dTranspose: return "conv1d_transpose";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kDense: return "dense";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kSoftmax: return "softmax";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

// ---- Conv1dLayer ---------------------------------------------------------

Conv1dLayer::Conv1dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                         std::size_t stride, std::size_t padding) {
  params_.weight = Tensor({kernel, in_channels, out_channels});
  params_.bias = Tensor({out_channels});
  params_.stride = stride;
  params_.padding = padding;
}

Tensor Conv1dLayer::forward(const Tensor& input, Mode) {
  cached_input_ = input;
  return conv1d_forward(input, params_);
}

Tensor Conv1dLayer::backward(const Tensor& grad_out, bool param_grads) {
  ParamGrads g = conv1d_backward(grad_out, require_cache(cached_input_, "conv1d"), params_);
  if (param_grads) {
    accumulate(params_.weight, g.weight);
    accumulate(params_.bias, g.bias);
  }
  return std::move(g.input);
}

std::vector<ParamRef> Conv1dLayer::parameters() {
  return {{"weight", &params_.weight}, {"bias", &params_.bias}};
}

void Conv1dLayer::initialize(Rng& rng) {
  init_normal(params_.weight, rng, kInitStddev);
  params_.bias.fill(0.0);
}

std::string Conv1dLayer::describe() const { return conv_desc("conv1d", params_); }

// ---- Conv1dTransposeLayer ------------------------------------------------

Conv1dTransposeLayer::Conv1dTransposeLayer(std::size_t in_channels, std::size_t out_channels,
                                           std::size_t kernel, std::size_t stride,
                                           std::size_t padding, std::size_t output_padding) {
  params_.weight = Tensor({kernel, in_channels, out_channels});
  params_.bias = Tensor({out_channels});
  params_.stride = stride;
  params_.padding = padding;
  params_.output_padding = output_padding;
}

Tensor Conv1dTransposeLayer::forward(const Tensor& input, Mode) {
  cached_input_ = input;
  return conv1d_transpose_forward(input, params_);
}

Tensor Conv1dTransposeLayer::backward(const Tensor& grad_out, bool param_grads) {
  ParamGrads g =
      conv1d_transpose_backward(grad_out, require_cache(cached_input_, "conv1d_transpose"), params_);
  if (param_grads) {
    accumulate(params_.weight, g.weight);
    accumulate(params_.bias, g.bias);
  }
  return std::move(g.input);
}

std::vector<ParamRef> Conv1dTransposeLayer::parameters() {
  return {{"weight", &params_.weight}, {"bias", &params_.bias}};
}

void Conv1dTransposeLayer::initialize(Rng& rng) {
  init_normal(params_.weight, rng, kInitStddev);
  params_.bias.fill(0.0);
}

std::string Conv1dTransposeLayer::describe() const {
  return conv_desc("conv1d_transpose", params_);
}

// ---- BatchNormLayer ------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::size_t channels, double momentum, double epsilon) {
  params_.gamma = Tensor({channels}, 1.0);
  params_.beta = Tensor({channels}, 0.0);
  params_.running_mean = Tensor({channels}, 0.0);
  params_.running_var = Tensor({channels}, 1.0);
  params_.momentum = momentum;
  params_.epsilon = epsilon;
}

Tensor BatchNormLayer::forward(const Tensor& input, Mode mode) {
  return batchnorm_forward(input, params_, mode, &cache_);
}

Tensor BatchNormLayer::backward(const Tensor& grad_out, bool param_grads) {
  if (cache_.normalized.empty()) throw MissingCacheError("batchnorm: backward called before forward");
  BatchNormGrads g = batchnorm_backward(grad_out, cache_, params_);
  if (param_grads) {
    accumulate(params_.gamma, g.gamma);
    accumulate(params_.beta, g.beta);
  }
  return std::move(g.input);
}

std::vector<ParamRef> BatchNormLayer::parameters() {
  return {{"gamma", &params_.gamma}, {"beta", &params_.beta}};
}

std::vector<ParamRef> BatchNormLayer::buffers() {
  return {{"running_mean", &params_.running_mean}, {"running_var", &params_.running_var}};
}

void BatchNormLayer::initialize(Rng&) {
  params_.gamma.fill(1.0);
  params_.beta.fill(0.0);
  params_.running_mean.fill(0.0);
  params_.running_var.fill(1.0);
}

// ---- DenseLayer ----------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_features, std::size_t out_features) {
  params_.weight = Tensor({in_features, out_features});
  params_.bias = Tensor({out_features});
}

Tensor DenseLayer::forward(const Tensor& input, Mode) {
  cached_input_ = input;
  return dense_forward(input, params_);
}

Tensor DenseLayer::backward(const Tensor& grad_out, bool param_grads) {
  ParamGrads g = dense_backward(grad_out, require_cache(cached_input_, "dense"), params_);
  if (param_grads) {
    accumulate(params_.weight, g.weight);
    accumulate(params_.bias, g.bias);
  }
  return std::move(g.input);
}

std::vector<ParamRef> DenseLayer::parameters() {
  return {{"weight", &params_.weight}, {"bias", &params_.bias}};
}

void DenseLayer::initialize(Rng& rng) {
  init_normal(params_.weight, rng, kInitStddev);
  params_.bias.fill(0.0);
}

std::string DenseLayer::describe() const {
  return "dense(" + std::to_string(params_.weight.dim(0)) + "->" +
         std::to_string(params_.weight.dim(1)) + ")";
}

// ---- activations ---------------------------------------------------------

LeakyReluLayer::LeakyReluLayer(double slope) : slope_(slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu slope must be in (0,1)");
}

Tensor LeakyReluLayer::forward(const Tensor& input, Mode) {
  cached_input_ = input;
  if (!frozen_input_) return leaky_relu(input, slope_);
  if (frozen_input_->shape() != input.shape()) {
    throw ShapeError("leaky_relu: frozen pattern has shape " + to_string(frozen_input_->shape()) +
                     ", input " + to_string(input.shape()));
  }
  Tensor out = input;
  out.drop_grad();
  for (std::size_t i = 0; i < out.size(); ++i)
    if ((*frozen_input_)[i] < 0.0) out[i] *= slope_;
  return out;
}

Tensor LeakyReluLayer::backward(const Tensor& grad_out, bool) {
  const Tensor& pattern = frozen_input_ ? *frozen_input_ : require_cache(cached_input_, "leaky_relu");
  return leaky_relu_backward(grad_out, pattern, slope_);
}

void LeakyReluLayer::freeze_pattern(bool frozen) {
  if (!frozen) {
    frozen_input_.reset();
    return;
  }
  frozen_input_ = require_cache(cached_input_, "leaky_relu");
}

Tensor SigmoidLayer::forward(const Tensor& input, Mode) {
  Tensor out = sigmoid(input);
  cached_output_ = out;
  return out;
}

Tensor SigmoidLayer::backward(const Tensor& grad_out, bool) {
  return sigmoid_backward(grad_out, require_cache(cached_output_, "sigmoid"));
}

Tensor SoftmaxLayer::forward(const Tensor& input, Mode) {
  Tensor out = softmax(input);
  cached_output_ = out;
  return out;
}

Tensor SoftmaxLayer::backward(const Tensor& grad_out, bool) {
  return softmax_backward(grad_out, require_cache(cached_output_, "softmax"));
}

Tensor FlattenLayer::forward(const Tensor& input, Mode) {
  require_rank(input, 3, "flatten");
  input_shape_ = input.shape();
  return input.reshaped({input.dim(0), input.dim(1) * input.dim(2)});
}

Tensor FlattenLayer::backward(const Tensor& grad_out, bool) {
  if (!input_shape_) throw MissingCacheError("flatten: backward called before forward");
  return grad_out.reshaped(*input_shape_);
}

// ---- Sequential ----------------------------------------------------------

Tensor Sequential::forward(const Tensor& input, Mode mode) {
  Tensor x = input;
  for (auto& layer : layers_) x = layer->forward(x, mode);
  return x;
}

Tensor Sequential::backward(const Tensor& grad_out, bool param_grads) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, param_grads);
  return g;
}

void Sequential::freeze_patterns(bool frozen) {
  for (auto& layer : layers_)
    if (auto* relu = dynamic_cast<LeakyReluLayer*>(layer.get())) relu->freeze_pattern(frozen);
}

std::vector<ParamRef> Sequential::parameters(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->parameters())
      out.push_back({prefix + std::to_string(i) + "." + p.name, p.tensor});
  return out;
}

std::vector<ParamRef> Sequential::buffers(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->buffers())
      out.push_back({prefix + std::to_string(i) + "." + p.name, p.tensor});
  return out;
}

void Sequential::initialize(Rng& rng) {
  for (auto& layer : layers_) layer->initialize(rng);
}

}  // namespace ecgadv
