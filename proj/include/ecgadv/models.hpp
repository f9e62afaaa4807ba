#pragma once

// Conditional generator (conv encoder / transposed-conv decoder) and the
// dual-headed discriminator (4-way class head + real/adversarial head).
//
// Conditioning: the one-hot label is broadcast along the length axis as four
// constant channels. Generator input channels are [x, z, y0..y3]. The
// discriminator sees the signal alone, or [s, y0..y3] with label_input.

#include <cstddef>
#include <vector>

#include "ecgadv/beat.hpp"
#include "ecgadv/gradient_check.hpp"
#include "ecgadv/layers.hpp"
#include "ecgadv/rng.hpp"
#include "ecgadv/tensor.hpp"
#include "json.hpp"

namespace ecgadv {

inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kPadding = 1;
inline constexpr std::size_t kGeneratorInputChannels = 2 + kNumClasses;

struct GeneratorArchitecture {
  /// Stride 2 at every second layer (layers 2, 4, 6).
  std::vector<std::size_t> encoder_widths{32, 32, 64, 64, 128, 128};
  /// One stride-2 transposed convolution per entry.
  std::vector<std::size_t> decoder_widths{128, 64, 32};
  std::size_t beat_length = kBeatLength;
  double leaky_slope = kDefaultLeakySlope;

  GeneratorArchitecture scaled(double factor) const;
  nlohmann::json to_json() const;
  static GeneratorArchitecture from_json(const nlohmann::json& j);
  bool operator==(const GeneratorArchitecture&) const = default;
};

struct DiscriminatorArchitecture {
  /// Stride 2 at every second layer (layers 2, 4, 6, 8).
  std::vector<std::size_t> conv_widths{16, 16, 32, 32, 128, 128, 256, 256};
  std::vector<std::size_t> dense_widths{64, 32};
  std::size_t beat_length = kBeatLength;
  double leaky_slope = kDefaultLeakySlope;
  /// Append the one-hot label as four input channels. Off by default: with
  /// the label as input the class head can copy it.
  bool label_input = false;

  std::size_t input_channels() const { return label_input ? 1 + kNumClasses : 1; }
  DiscriminatorArchitecture scaled(double factor) const;
  nlohmann::json to_json() const;
  static DiscriminatorArchitecture from_json(const nlohmann::json& j);
  bool operator==(const DiscriminatorArchitecture&) const = default;
};

/// Throws std::invalid_argument unless every row is exactly one-hot.
void validate_one_hot(const Tensor& labels);
Tensor one_hot(std::span<const Label> labels);

class GeneratorModel {
 public:
  explicit GeneratorModel(GeneratorArchitecture arch = {});
  GeneratorModel(GeneratorModel&&) = default;
  GeneratorModel& operator=(GeneratorModel&&) = default;

  void initialize(Rng& rng) { net_.initialize(rng); }

  /// signal, noise: [batch, length]; labels: [batch, 4] one-hot.
  static Tensor assemble_input(const Tensor& signal, const Tensor& labels, const Tensor& noise);

  /// Returns synthesized beats [batch, length] in (0, 1).
  Tensor forward(const Tensor& signal, const Tensor& labels, const Tensor& noise, Mode mode);
  Tensor forward_input(const Tensor& input, Mode mode);
  /// grad_out: [batch, length]. Returns the gradient w.r.t. the assembled input.
  Tensor backward(const Tensor& grad_out, bool param_grads = true);

  std::vector<ParamRef> parameters() { return net_.parameters(); }
  std::vector<ParamRef> buffers() { return net_.buffers(); }
  std::size_t parameter_count();
  void freeze_patterns(bool frozen);

  /// Sequence lengths seen by the last forward: input, then after every
  /// stride-2 stage.
  const std::vector<std::size_t>& length_trace() const { return trace_; }
  const GeneratorArchitecture& architecture() const { return arch_; }

 private:
  GeneratorArchitecture arch_;
  Sequential net_;
  std::vector<std::size_t> trace_;
};

struct DiscriminatorOutput {
  Tensor class_probs;  // [batch, 4]
  Tensor realness;     // [batch]
};

class DiscriminatorModel {
 public:
  explicit DiscriminatorModel(DiscriminatorArchitecture arch = {});
  DiscriminatorModel(DiscriminatorModel&&) = default;
  DiscriminatorModel& operator=(DiscriminatorModel&&) = default;

  void initialize(Rng& rng);

  /// [batch, length, input_channels]; labels are ignored (and may be empty)
  /// without label_input.
  Tensor assemble_input(const Tensor& signal, const Tensor& labels) const;

  DiscriminatorOutput forward(const Tensor& signal, const Tensor& labels, Mode mode);
  DiscriminatorOutput forward_input(const Tensor& input, Mode mode);
  /// Either gradient may be empty (treated as zero). Returns the gradient
  /// w.r.t. the assembled input.
  Tensor backward(const Tensor& grad_probs, const Tensor& grad_realness, bool param_grads = true);

  std::vector<ParamRef> parameters();
  std::vector<ParamRef> buffers();
  std::size_t parameter_count();
  void freeze_patterns(bool frozen);

  /// Feature-map length entering the dense layers.
  std::size_t flattened_length() const { return flat_length_; }
  const std::vector<std::size_t>& length_trace() const { return trace_; }
  const DiscriminatorArchitecture& architecture() const { return arch_; }

 private:
  DiscriminatorArchitecture arch_;
  Sequential trunk_;
  Sequential class_head_;
  Sequential real_head_;
  std::size_t flat_length_ = 0;
  std::size_t batch_ = 0;
  std::vector<std::size_t> trace_;
};

/// Column 0 of an assembled-input gradient, i.e. the gradient w.r.t. the signal.
Tensor signal_channel(const Tensor& input_grad);

// ---- noise -------------------------------------------------------------------

/// Discrete Gaussian taps, radius ceil(3 sigma), normalized to sum 1.
std::vector<double> gaussian_kernel(double sigma);

/// Convolution with half-sample symmetric reflection at both ends
/// (..., x1, x0 | x0, x1, ...).
std::vector<double> smooth_reflect(std::span<const double> signal, std::span<const double> kernel);

inline constexpr double kNoiseSigma = 4.0;

/// U[0,1] draws smoothed with a Gaussian of the given sigma, clipped to [0,1].
std::vector<double> make_noise(Rng& rng, double sigma = kNoiseSigma, std::size_t length = kBeatLength);
std::vector<double> make_noise(std::uint64_t seed, double sigma = kNoiseSigma,
                               std::size_t length = kBeatLength);

// ---- gradient checks over whole models ---------------------------------------

/// Scalar <r, G(input)> with parameters and the assembled input as blocks.
/// Both problems freeze leaky-ReLU patterns while perturbing.
GradCheckProblem generator_gradcheck_problem(GeneratorModel& model, const Tensor& input, Mode mode,
                                             Rng& rng);
/// Scalar <r1, class_probs> + <r2, realness>.
GradCheckProblem discriminator_gradcheck_problem(DiscriminatorModel& model, const Tensor& input,
                                                 Mode mode, Rng& rng);

}  // namespace ecgadv
