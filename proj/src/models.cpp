#include "ecgadv/models.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "ecgadv/ops.hpp"

namespace ecgadv {
namespace {

std::vector<std::size_t> scale_widths(const std::vector<std::size_t>& widths, double factor) {
  std::vector<std::size_t> out;
  for (std::size_t w : widths)
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w * factor))));
  return out;
}

void require_batch_rows(const Tensor& t, std::size_t batch, std::size_t cols, const char* what) {
  if (t.rank() != 2 || t.dim(0) != batch || t.dim(1) != cols) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(batch) + ", " +
                     std::to_string(cols) + "], got " + to_string(t.shape()));
  }
}

std::size_t stride_of(const Layer& layer) {
  if (auto* c = dynamic_cast<const Conv1dLayer*>(&layer)) return c->params().stride;
  if (layer.kind() == LayerKind::kConv1dTranspose) return 2;
  return 0;
}

double project(const Tensor& y, const Tensor& r) {
  return std::inner_product(y.values().begin(), y.values().end(), r.values().begin(), 0.0);
}

Tensor random_like(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = 2.0 * rng.uniform() - 1.0;
  return t;
}

}  // namespace

// ---- architectures -----------------------------------------------------------

GeneratorArchitecture GeneratorArchitecture::scaled(double factor) const {
  GeneratorArchitecture a = *this;
  a.encoder_widths = scale_widths(encoder_widths, factor);
  a.decoder_widths = scale_widths(decoder_widths, factor);
  return a;
}

nlohmann::json GeneratorArchitecture::to_json() const {
  return {{"encoder_widths", encoder_widths},
          {"decoder_widths", decoder_widths},
          {"beat_length", beat_length},
          {"leaky_slope", leaky_slope}};
}

GeneratorArchitecture GeneratorArchitecture::from_json(const nlohmann::json& j) {
  GeneratorArchitecture a;
  a.encoder_widths = j.at("encoder_widths").get<std::vector<std::size_t>>();
  a.decoder_widths = j.at("decoder_widths").get<std::vector<std::size_t>>();
  a.beat_length = j.at("beat_length").get<std::size_t>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
  return a;
}

DiscriminatorArchitecture DiscriminatorArchitecture::scaled(double factor) const {
  DiscriminatorArchitecture a = *this;
  a.conv_widths = scale_widths(conv_widths, factor);
  a.dense_widths = scale_widths(dense_widths, factor);
  return a;
}

nlohmann::json DiscriminatorArchitecture::to_json() const {
  return {{"conv_widths", conv_widths},
          {"dense_widths", dense_widths},
          {"beat_length", beat_length},
          {"leaky_slope", leaky_slope},
          {"label_input", label_input}};
}

DiscriminatorArchitecture DiscriminatorArchitecture::from_json(const nlohmann::json& j) {
  DiscriminatorArchitecture a;
  a.conv_widths = j.at("conv_widths").get<std::vector<std::size_t>>();
  a.dense_widths = j.at("dense_widths").get<std::vector<std::size_t>>();
  a.beat_length = j.at("beat_length").get<std::size_t>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
  a.label_input = j.at("label_input").get<bool>();
  return a;
}

// ---- conditioning ----------------------------------------------------------------

void validate_one_hot(const Tensor& labels) {
  if (labels.rank() != 2 || labels.dim(1) != kNumClasses) {
    throw std::invalid_argument("label tensor must be [batch, 4], got " + to_string(labels.shape()));
  }
  for (std::size_t b = 0; b < labels.dim(0); ++b) {
    double sum = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double v = labels.at(b, c);
      if (v != 0.0 && v != 1.0) {
        throw std::invalid_argument("malformed one-hot label in row " + std::to_string(b) +
                                    ": non-binary entry");
      }
      sum += v;
    }
    if (sum != 1.0) {
      throw std::invalid_argument("malformed one-hot label in row " + std::to_string(b) +
                                  ": entries sum to " + std::to_string(sum));
    }
  }
}

Tensor one_hot(std::span<const Label> labels) {
  Tensor t({labels.size(), kNumClasses});
  for (std::size_t b = 0; b < labels.size(); ++b) t.at(b, index_of(labels[b])) = 1.0;
  return t;
}

Tensor signal_channel(const Tensor& input_grad) {
  require_rank(input_grad, 3, "signal_channel");
  const std::size_t B = input_grad.dim(0), L = input_grad.dim(1);
  Tensor out({B, L});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l) out.at(b, l) = input_grad.at(b, l, 0);
  return out;
}

// ---- generator -------------------------------------------------------------------

GeneratorModel::GeneratorModel(GeneratorArchitecture arch) : arch_(std::move(arch)) {
  std::size_t in = kGeneratorInputChannels;
  for (std::size_t i = 0; i < arch_.encoder_widths.size(); ++i) {
    const std::size_t out = arch_.encoder_widths[i];
    net_.add<Conv1dLayer>(in, out, kKernel, i % 2 == 1 ? 2 : 1, kPadding);
    net_.add<BatchNormLayer>(out);
    net_.add<LeakyReluLayer>(arch_.leaky_slope);
    in = out;
  }
  for (std::size_t w : arch_.decoder_widths) {
    net_.add<Conv1dTransposeLayer>(in, w, kKernel, 2, kPadding, 1);
    net_.add<BatchNormLayer>(w);
    net_.add<LeakyReluLayer>(arch_.leaky_slope);
    in = w;
  }
  net_.add<Conv1dLayer>(in, 1, kKernel, 1, kPadding);
  net_.add<SigmoidLayer>();
}

Tensor GeneratorModel::assemble_input(const Tensor& signal, const Tensor& labels, const Tensor& noise) {
  require_rank(signal, 2, "generator signal");
  const std::size_t B = signal.dim(0), L = signal.dim(1);
  require_batch_rows(noise, B, L, "generator noise");
  validate_one_hot(labels);
  if (labels.dim(0) != B) throw ShapeError("generator labels: batch size mismatch");
  Tensor input({B, L, kGeneratorInputChannels});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l) {
      input.at(b, l, 0) = signal.at(b, l);
      input.at(b, l, 1) = noise.at(b, l);
      for (std::size_t c = 0; c < kNumClasses; ++c) input.at(b, l, 2 + c) = labels.at(b, c);
    }
  return input;
}

Tensor GeneratorModel::forward(const Tensor& signal, const Tensor& labels, const Tensor& noise,
                               Mode mode) {
  return forward_input(assemble_input(signal, labels, noise), mode);
}

Tensor GeneratorModel::forward_input(const Tensor& input, Mode mode) {
  require_rank(input, 3, "generator input");
  if (input.dim(2) != kGeneratorInputChannels) {
    throw ShapeError("generator input: expected 6 channels, got " + std::to_string(input.dim(2)));
  }
  if (input.dim(1) != arch_.beat_length) {
    throw ShapeError("generator input: expected length " + std::to_string(arch_.beat_length) +
                     ", got " + std::to_string(input.dim(1)));
  }
  trace_.assign(1, input.dim(1));
  Tensor x = input;
  for (std::size_t i = 0; i < net_.size(); ++i) {
    x = net_[i].forward(x, mode);
    if (stride_of(net_[i]) == 2) trace_.push_back(x.dim(1));
  }
  return x.reshaped({x.dim(0), x.dim(1)});
}

Tensor GeneratorModel::backward(const Tensor& grad_out, bool param_grads) {
  require_rank(grad_out, 2, "generator grad_out");
  return net_.backward(grad_out.reshaped({grad_out.dim(0), grad_out.dim(1), 1}), param_grads);
}

std::size_t GeneratorModel::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

void GeneratorModel::freeze_patterns(bool frozen) { net_.freeze_patterns(frozen); }

// ---- discriminator -------------------------------------------------------------

DiscriminatorModel::DiscriminatorModel(DiscriminatorArchitecture arch) : arch_(std::move(arch)) {
  std::size_t in = arch_.input_channels();
  std::size_t length = arch_.beat_length;
  for (std::size_t i = 0; i < arch_.conv_widths.size(); ++i) {
    const std::size_t out = arch_.conv_widths[i];
    const std::size_t stride = i % 2 == 1 ? 2 : 1;
    trunk_.add<Conv1dLayer>(in, out, kKernel, stride, kPadding);
    trunk_.add<BatchNormLayer>(out);
    trunk_.add<LeakyReluLayer>(arch_.leaky_slope);
    length = conv1d_output_length(length, kKernel, stride, kPadding);
    in = out;
  }
  flat_length_ = length;
  trunk_.add<FlattenLayer>();
  std::size_t features = length * in;
  for (std::size_t w : arch_.dense_widths) {
    trunk_.add<DenseLayer>(features, w);
    trunk_.add<LeakyReluLayer>(arch_.leaky_slope);
    features = w;
  }
  class_head_.add<DenseLayer>(features, kNumClasses);
  class_head_.add<SoftmaxLayer>();
  real_head_.add<DenseLayer>(features, 1);
  real_head_.add<SigmoidLayer>();
}

void DiscriminatorModel::initialize(Rng& rng) {
  trunk_.initialize(rng);
  class_head_.initialize(rng);
  real_head_.initialize(rng);
}

Tensor DiscriminatorModel::assemble_input(const Tensor& signal, const Tensor& labels) const {
  require_rank(signal, 2, "discriminator signal");
  const std::size_t B = signal.dim(0), L = signal.dim(1);
  if (!arch_.label_input) return signal.reshaped({B, L, 1});
  validate_one_hot(labels);
  if (labels.dim(0) != B) throw ShapeError("discriminator labels: batch size mismatch");
  Tensor input({B, L, 1 + kNumClasses});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l) {
      input.at(b, l, 0) = signal.at(b, l);
      for (std::size_t c = 0; c < kNumClasses; ++c) input.at(b, l, 1 + c) = labels.at(b, c);
    }
  return input;
}

DiscriminatorOutput DiscriminatorModel::forward(const Tensor& signal, const Tensor& labels, Mode mode) {
  return forward_input(assemble_input(signal, labels), mode);
}

DiscriminatorOutput DiscriminatorModel::forward_input(const Tensor& input, Mode mode) {
  require_rank(input, 3, "discriminator input");
  if (input.dim(2) != arch_.input_channels()) {
    throw ShapeError("discriminator input: expected " + std::to_string(arch_.input_channels()) +
                     " channels, got " + std::to_string(input.dim(2)));
  }
  if (input.dim(1) != arch_.beat_length) {
    throw ShapeError("discriminator input: expected length " + std::to_string(arch_.beat_length) +
                     ", got " + std::to_string(input.dim(1)));
  }
  batch_ = input.dim(0);
  trace_.assign(1, input.dim(1));
  Tensor x = input;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    x = trunk_[i].forward(x, mode);
    if (stride_of(trunk_[i]) == 2) trace_.push_back(x.dim(1));
  }
  DiscriminatorOutput out;
  out.class_probs = class_head_.forward(x, mode);
  out.realness = real_head_.forward(x, mode).reshaped({batch_});
  return out;
}

Tensor DiscriminatorModel::backward(const Tensor& grad_probs, const Tensor& grad_realness,
                                    bool param_grads) {
  if (batch_ == 0) throw MissingCacheError("discriminator: backward called before forward");
  Tensor gp = grad_probs.empty() ? Tensor({batch_, kNumClasses}) : grad_probs;
  Tensor gr = grad_realness.empty() ? Tensor({batch_, 1}) : grad_realness.reshaped({batch_, 1});
  Tensor g = class_head_.backward(gp, param_grads);
  const Tensor g2 = real_head_.backward(gr, param_grads);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += g2[i];
  return trunk_.backward(g, param_grads);
}

std::vector<ParamRef> DiscriminatorModel::parameters() {
  auto out = trunk_.parameters("trunk.");
  for (auto& p : class_head_.parameters("class_head.")) out.push_back(p);
  for (auto& p : real_head_.parameters("real_head.")) out.push_back(p);
  return out;
}

std::vector<ParamRef> DiscriminatorModel::buffers() { return trunk_.buffers("trunk."); }

std::size_t DiscriminatorModel::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

void DiscriminatorModel::freeze_patterns(bool frozen) { trunk_.freeze_patterns(frozen); }

// ---- noise -------------------------------------------------------------------

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

std::vector<double> smooth_reflect(std::span<const double> signal, std::span<const double> kernel) {
  const long n = static_cast<long>(signal.size());
  const long radius = static_cast<long>(kernel.size() / 2);
  auto reflect = [n](long i) {
    // Half-sample symmetric, periodic with period 2n.
    const long period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
  };
  std::vector<double> out(signal.size());
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (long k = -radius; k <= radius; ++k)
      acc += kernel[static_cast<std::size_t>(k + radius)] * signal[static_cast<std::size_t>(reflect(i + k))];
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

std::vector<double> make_noise(Rng& rng, double sigma, std::size_t length) {
  std::vector<double> raw(length);
  for (double& v : raw) v = rng.uniform();
  std::vector<double> out = smooth_reflect(raw, gaussian_kernel(sigma));
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<double> make_noise(std::uint64_t seed, double sigma, std::size_t length) {
  Rng rng(seed);
  return make_noise(rng, sigma, length);
}

// ---- gradient-check problems ------------------------------------------------------

GradCheckProblem generator_gradcheck_problem(GeneratorModel& model, const Tensor& input, Mode mode,
                                             Rng& rng) {
  auto x = std::make_shared<Tensor>(input);
  auto r = std::make_shared<Tensor>(random_like({input.dim(0), input.dim(1)}, rng));
  GradCheckProblem p;
  p.blocks = model.parameters();
  p.blocks.push_back({"input", x.get()});
  p.evaluate = [&model, x, r, mode] { return project(model.forward_input(*x, mode), *r); };
  p.compute_gradients = [&model, x, r, mode] {
    model.forward_input(*x, mode);
    const Tensor gx = model.backward(*r);
    std::copy(gx.values().begin(), gx.values().end(), x->grad().begin());
  };
  p.freeze_patterns = [&model](bool frozen) { model.freeze_patterns(frozen); };
  return p;
}

GradCheckProblem discriminator_gradcheck_problem(DiscriminatorModel& model, const Tensor& input,
                                                 Mode mode, Rng& rng) {
  auto x = std::make_shared<Tensor>(input);
  auto r1 = std::make_shared<Tensor>(random_like({input.dim(0), kNumClasses}, rng));
  auto r2 = std::make_shared<Tensor>(random_like({input.dim(0)}, rng));
  GradCheckProblem p;
  p.blocks = model.parameters();
  p.blocks.push_back({"input", x.get()});
  p.evaluate = [&model, x, r1, r2, mode] {
    const DiscriminatorOutput out = model.forward_input(*x, mode);
    return project(out.class_probs, *r1) + project(out.realness, *r2);
  };
  p.compute_gradients = [&model, x, r1, r2, mode] {
    model.forward_input(*x, mode);
    const Tensor gx = model.backward(*r1, *r2);
    std::copy(gx.values().begin(), gx.values().end(), x->grad().begin());
  };
  p.freeze_patterns = [&model](bool frozen) { model.freeze_patterns(frozen); };
  return p;
}

}  // namespace ecgadv
