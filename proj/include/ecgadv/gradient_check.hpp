#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecgadv/layers.hpp"
#include "ecgadv/tensor.hpp"

namespace ecgadv {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Lower bound on the relative-error denominator, so coordinates whose
  /// true gradient is zero (e.g. a conv bias feeding batchnorm) are judged
  /// on absolute error instead of amplified round-off.
  double denominator_floor = 1e-6;
  /// Coordinates sampled per block; 0 checks every coordinate.
  std::size_t coords_per_block = 0;
  std::uint64_t seed = 1;
};

struct BlockReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<BlockReport> blocks;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

/// A scalar function of some tensors together with its analytic gradient.
struct GradCheckProblem {
  std::vector<ParamRef> blocks;
  /// Forward pass only; returns the scalar.
  std::function<double()> evaluate;
  /// Forward + backward; must leave d(scalar)/d(block) in each block's grad.
  std::function<void()> compute_gradients;
  /// Optional: called with true after the analytic pass and with false at
  /// the end. Lets piecewise-linear activations hold their base-point
  /// pattern while coordinates are perturbed.
  std::function<void(bool)> freeze_patterns;
};

/// Central finite differences against the analytic gradient.
/// rel = |analytic - numeric| / max(|analytic|, |numeric|, denominator_floor).
GradCheckReport gradient_check(const GradCheckProblem& problem, const GradCheckOptions& options);

/// Checks one layer (parameters and input) under the scalar <r, layer(x)>
/// for a fixed random projection r.
GradCheckReport check_layer_gradients(Layer& layer, const Tensor& input, Mode mode,
                                      const GradCheckOptions& options);

}  // namespace ecgadv
