#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ecgadv/tensor.hpp"

namespace ecgadv {

struct AdamConfig {
  double alpha = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// First/second moments per parameter tensor plus the shared step counter.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  /// Sizes m and v for `params` (all zeros) and resets t.
  void reset(std::span<const ParamRef> params);
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bias-corrected Adam update applied in place to every parameter, reading
/// each tensor's grad buffer. If any gradient entry is non-finite nothing is
/// modified and NonFiniteGradient names the parameter. Parameters without a
/// grad buffer are treated as having zero gradient.
void adam_step(std::span<const ParamRef> params, AdamState& state);

}  // namespace ecgadv
