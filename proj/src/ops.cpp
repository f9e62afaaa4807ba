#include "ecgadv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ecgadv {
namespace {

void require_conv_input(const Tensor& input, const ConvParams& p, const char* op) {
  require_rank(input, 3, op);
  require_rank(p.weight, 3, op);
  if (input.dim(2) != p.in_channels()) {
    throw ShapeError(std::string(op) + ": input channels " + std::to_string(input.dim(2)) +
                     " do not match weight in_channels " + std::to_string(p.in_channels()));
  }
  if (p.bias.size() != p.out_channels()) {
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(p.bias.size()) +
                     " does not match out_channels " + std::to_string(p.out_channels()));
  }
  if (p.stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
}

// Weight [K, Cin, Cout] -> [K, Cout, Cin], so input-gradient loops run
// contiguously over the input channels.
std::vector<double> transpose_channels(const Tensor& w) {
  const std::size_t K = w.dim(0), Ci = w.dim(1), Co = w.dim(2);
  std::vector<double> t(w.size());
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t co = 0; co < Co; ++co)
        t[(k * Co + co) * Ci + ci] = w[(k * Ci + ci) * Co + co];
  return t;
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void fill_bias(Tensor& out, const Tensor& bias) {
  const std::size_t C = bias.size();
  double* o = out.data().data();
  for (std::size_t r = 0; r < out.size() / C; ++r)
    std::copy(bias.values().begin(), bias.values().end(), o + r * C);
}

Tensor bias_grad(const Tensor& grad_out, std::size_t channels) {
  Tensor gb({channels});
  const double* g = grad_out.data().data();
  for (std::size_t r = 0; r < grad_out.size() / channels; ++r)
    axpy(1.0, g + r * channels, gb.data().data(), channels);
  return gb;
}

}  // namespace

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding) {
  const long span = static_cast<long>(length + 2 * padding) - static_cast<long>(kernel);
  if (span < 0 || stride == 0) {
    throw ShapeError("conv1d: length " + std::to_string(length) + " with padding " +
                     std::to_string(padding) + " is shorter than kernel " +
                     std::to_string(kernel));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t conv1d_transpose_output_length(std::size_t length, std::size_t kernel,
                                           std::size_t stride, std::size_t padding,
                                           std::size_t output_padding) {
  const long out = static_cast<long>(stride * (length - 1) + kernel + output_padding) -
                   static_cast<long>(2 * padding);
  if (length == 0 || out <= 0) {
    throw ShapeError("conv1d_transpose: resulting length " + std::to_string(out) +
                     " is not positive");
  }
  return static_cast<std::size_t>(out);
}

Tensor conv1d_forward(const Tensor& input, const ConvParams& p) {
  require_conv_input(input, p, "conv1d_forward");
  const std::size_t B = input.dim(0), L = input.dim(1), Ci = input.dim(2);
  const std::size_t K = p.kernel(), Co = p.out_channels();
  const std::size_t Lo = conv1d_output_length(L, K, p.stride, p.padding);

  Tensor out({B, Lo, Co});
  fill_bias(out, p.bias);
  const double* x = input.data().data();
  const double* w = p.weight.data().data();
  double* y = out.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Lo; ++o) {
      double* yrow = y + (b * Lo + o) * Co;
      for (std::size_t k = 0; k < K; ++k) {
        const long i = static_cast<long>(o * p.stride + k) - static_cast<long>(p.padding);
        if (i < 0 || i >= static_cast<long>(L)) continue;
        const double* xrow = x + (b * L + static_cast<std::size_t>(i)) * Ci;
        for (std::size_t ci = 0; ci < Ci; ++ci) axpy(xrow[ci], w + (k * Ci + ci) * Co, yrow, Co);
      }
    }
  }
  return out;
}

ParamGrads conv1d_backward(const Tensor& grad_out, const Tensor& cached_input,
                           const ConvParams& p) {
  require_conv_input(cached_input, p, "conv1d_backward");
  const std::size_t B = cached_input.dim(0), L = cached_input.dim(1), Ci = cached_input.dim(2);
  const std::size_t K = p.kernel(), Co = p.out_channels();
  const std::size_t Lo = conv1d_output_length(L, K, p.stride, p.padding);
  if (grad_out.shape() != Shape{B, Lo, Co}) {
    throw ShapeError("conv1d_backward: grad_out shape " + to_string(grad_out.shape()) +
                     " does not match forward output " + to_string({B, Lo, Co}));
  }

  ParamGrads g{Tensor({B, L, Ci}), Tensor(p.weight.shape()), bias_grad(grad_out, Co)};
  const std::vector<double> wt = transpose_channels(p.weight);
  const double* x = cached_input.data().data();
  const double* go = grad_out.data().data();
  double* gi = g.input.data().data();
  double* gw = g.weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Lo; ++o) {
      const double* grow = go + (b * Lo + o) * Co;
      for (std::size_t k = 0; k < K; ++k) {
        const long i = static_cast<long>(o * p.stride + k) - static_cast<long>(p.padding);
        if (i < 0 || i >= static_cast<long>(L)) continue;
        const std::size_t row = (b * L + static_cast<std::size_t>(i)) * Ci;
        for (std::size_t ci = 0; ci < Ci; ++ci) axpy(x[row + ci], grow, gw + (k * Ci + ci) * Co, Co);
        for (std::size_t co = 0; co < Co; ++co) axpy(grow[co], wt.data() + (k * Co + co) * Ci, gi + row, Ci);
      }
    }
  }
  return g;
}

Tensor conv1d_transpose_forward(const Tensor& input, const ConvParams& p) {
  require_conv_input(input, p, "conv1d_transpose_forward");
  const std::size_t B = input.dim(0), L = input.dim(1), Ci = input.dim(2);
  const std::size_t K = p.kernel(), Co = p.out_channels();
  const std::size_t Lo =
      conv1d_transpose_output_length(L, K, p.stride, p.padding, p.output_padding);

  Tensor out({B, Lo, Co});
  fill_bias(out, p.bias);
  const double* x = input.data().data();
  const double* w = p.weight.data().data();
  double* y = out.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      const double* xrow = x + (b * L + i) * Ci;
      for (std::size_t k = 0; k < K; ++k) {
        const long j = static_cast<long>(i * p.stride + k) - static_cast<long>(p.padding);
        if (j < 0 || j >= static_cast<long>(Lo)) continue;
        double* yrow = y + (b * Lo + static_cast<std::size_t>(j)) * Co;
        for (std::size_t ci = 0; ci < Ci; ++ci) axpy(xrow[ci], w + (k * Ci + ci) * Co, yrow, Co);
      }
    }
  }
  return out;
}

ParamGrads conv1d_transpose_backward(const Tensor& grad_out, const Tensor& cached_input,
                                     const ConvParams& p) {
  require_conv_input(cached_input, p, "conv1d_transpose_backward");
  const std::size_t B = cached_input.dim(0), L = cached_input.dim(1), Ci = cached_input.dim(2);
  const std::size_t K = p.kernel(), Co = p.out_channels();
  const std::size_t Lo =
      conv1d_transpose_output_length(L, K, p.stride, p.padding, p.output_padding);
  if (grad_out.shape() != Shape{B, Lo, Co}) {
    throw ShapeError("conv1d_transpose_backward: grad_out shape " +
                     to_string(grad_out.shape()) + " does not match forward output " +
                     to_string({B, Lo, Co}));
  }

  ParamGrads g{Tensor({B, L, Ci}), Tensor(p.weight.shape()), bias_grad(grad_out, Co)};
  const std::vector<double> wt = transpose_channels(p.weight);
  const double* x = cached_input.data().data();
  const double* go = grad_out.data().data();
  double* gi = g.input.data().data();
  double* gw = g.weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t row = (b * L + i) * Ci;
      for (std::size_t k = 0; k < K; ++k) {
        const long j = static_cast<long>(i * p.stride + k) - static_cast<long>(p.padding);
        if (j < 0 || j >= static_cast<long>(Lo)) continue;
        const double* grow = go + (b * Lo + static_cast<std::size_t>(j)) * Co;
        for (std::size_t ci = 0; ci < Ci; ++ci) axpy(x[row + ci], grow, gw + (k * Ci + ci) * Co, Co);
        for (std::size_t co = 0; co < Co; ++co) axpy(grow[co], wt.data() + (k * Co + co) * Ci, gi + row, Ci);
      }
    }
  }
  return g;
}

Tensor batchnorm_forward(const Tensor& input, BatchNormParams& p, Mode mode,
                         BatchNormCache* cache, bool update_running) {
  if (input.rank() < 2) throw ShapeError("batchnorm_forward: input must have a batch axis");
  const std::size_t C = p.channels();
  if (input.shape().back() != C) {
    throw ShapeError("batchnorm_forward: input channels " + std::to_string(input.shape().back()) +
                     " do not match " + std::to_string(C));
  }
  if (mode == Mode::kTrain && input.dim(0) < 2) {
    throw ShapeError("batchnorm_forward: training mode needs a batch of at least 2");
  }
  const std::size_t rows = input.size() / C;
  const double* x = input.data().data();

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t r = 0; r < rows; ++r) axpy(1.0, x + r * C, mean.data(), C);
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[r * C + c] - mean[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(rows);
    if (update_running) {
      for (std::size_t c = 0; c < C; ++c) {
        p.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean[c];
        p.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * var[c];
      }
    }
  } else {
    std::copy(p.running_mean.values().begin(), p.running_mean.values().end(), mean.begin());
    std::copy(p.running_var.values().begin(), p.running_var.values().end(), var.begin());
  }

  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + p.epsilon);

  Tensor out(input.shape());
  Tensor xhat(input.shape());
  double* y = out.data().data();
  double* xh = xhat.data().data();
  const double* gamma = p.gamma.data().data();
  const double* beta = p.beta.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      xh[i] = (x[i] - mean[c]) * inv_std[c];
      y[i] = gamma[c] * xh[i] + beta[c];
    }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  const BatchNormParams& p) {
  if (cache.normalized.empty()) throw std::logic_error("batchnorm_backward: no forward cache");
  if (grad_out.shape() != cache.normalized.shape()) {
    throw ShapeError("batchnorm_backward: grad_out shape " + to_string(grad_out.shape()) +
                     " does not match cached input " + to_string(cache.normalized.shape()));
  }
  const std::size_t C = p.channels();
  const std::size_t rows = grad_out.size() / C;
  const double* g = grad_out.data().data();
  const double* xh = cache.normalized.data().data();

  BatchNormGrads out{Tensor(grad_out.shape()), Tensor({C}), Tensor({C})};
  double* dgamma = out.gamma.data().data();
  double* dbeta = out.beta.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      dgamma[c] += g[r * C + c] * xh[r * C + c];
      dbeta[c] += g[r * C + c];
    }

  double* dx = out.input.data().data();
  const double* gamma = p.gamma.data().data();
  if (cache.mode == Mode::kInference) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) dx[r * C + c] = g[r * C + c] * gamma[c] * cache.inv_std[c];
    return out;
  }
  // dx = gamma * inv_std / N * (N g - sum(g) - x_hat * sum(g x_hat))
  const double n = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      dx[i] = gamma[c] * cache.inv_std[c] / n * (n * g[i] - dbeta[c] - xh[i] * dgamma[c]);
    }
  return out;
}

Tensor leaky_relu(const Tensor& input, double slope) {
  Tensor out = input;
  out.drop_grad();
  for (double& v : out.values()) v = v >= 0.0 ? v : slope * v;
  return out;
}

Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& cached_input, double slope) {
  if (grad_out.shape() != cached_input.shape()) {
    throw ShapeError("leaky_relu_backward: shape mismatch " + to_string(grad_out.shape()) +
                     " vs " + to_string(cached_input.shape()));
  }
  Tensor out(grad_out.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = cached_input[i] >= 0.0 ? grad_out[i] : slope * grad_out[i];
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& output) {
  if (grad_out.shape() != output.shape()) throw ShapeError("sigmoid_backward: shape mismatch");
  Tensor out(grad_out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad_out[i] * output[i] * (1.0 - output[i]);
  return out;
}

Tensor softmax(const Tensor& input) {
  const std::size_t C = input.shape().back();
  const std::size_t rows = input.size() / C;
  Tensor out(input.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = input.data().data() + r * C;
    double* y = out.data().data() + r * C;
    const double mx = *std::max_element(x, x + C);
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < C; ++c) y[c] /= sum;
  }
  return out;
}

Tensor softmax_backward(const Tensor& grad_out, const Tensor& output) {
  if (grad_out.shape() != output.shape()) throw ShapeError("softmax_backward: shape mismatch");
  const std::size_t C = output.shape().back();
  const std::size_t rows = output.size() / C;
  Tensor out(output.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = grad_out.data().data() + r * C;
    const double* y = output.data().data() + r * C;
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += g[c] * y[c];
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = y[c] * (g[c] - dot);
  }
  return out;
}

Tensor dense_forward(const Tensor& input, const DenseParams& p) {
  require_rank(input, 2, "dense_forward");
  require_rank(p.weight, 2, "dense_forward weight");
  const std::size_t B = input.dim(0), F = input.dim(1), O = p.weight.dim(1);
  if (F != p.weight.dim(0)) {
    throw ShapeError("dense_forward: input features " + std::to_string(F) +
                     " do not match weight rows " + std::to_string(p.weight.dim(0)));
  }
  if (p.bias.size() != O) throw ShapeError("dense_forward: bias length does not match outputs");
  Tensor out({B, O});
  fill_bias(out, p.bias);
  const double* w = p.weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    double* y = out.data().data() + b * O;
    for (std::size_t f = 0; f < F; ++f) axpy(input.at(b, f), w + f * O, y, O);
  }
  return out;
}

ParamGrads dense_backward(const Tensor& grad_out, const Tensor& cached_input,
                          const DenseParams& p) {
  require_rank(cached_input, 2, "dense_backward");
  const std::size_t B = cached_input.dim(0), F = cached_input.dim(1), O = p.weight.dim(1);
  if (grad_out.shape() != Shape{B, O}) {
    throw ShapeError("dense_backward: grad_out shape " + to_string(grad_out.shape()) +
                     " does not match " + to_string({B, O}));
  }
  ParamGrads g{Tensor({B, F}), Tensor(p.weight.shape()), bias_grad(grad_out, O)};
  const double* w = p.weight.data().data();
  double* gw = g.weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    const double* go = grad_out.data().data() + b * O;
    for (std::size_t f = 0; f < F; ++f) {
      axpy(cached_input.at(b, f), go, gw + f * O, O);
      double acc = 0.0;
      const double* wrow = w + f * O;
      for (std::size_t o = 0; o < O; ++o) acc += go[o] * wrow[o];
      g.input.at(b, f) = acc;
    }
  }
  return g;
}

}  // namespace ecgadv
