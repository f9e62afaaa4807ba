#include "ecgadv/adam.hpp"

#include <cmath>
#include <string>

namespace ecgadv {

void AdamState::reset(std::span<const ParamRef> params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.tensor->size(), 0.0);
    v.emplace_back(p.tensor->size(), 0.0);
  }
  t = 0;
}

void adam_step(std::span<const ParamRef> params, AdamState& state) {
  if (state.m.empty() && state.t == 0) state.reset(params);
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.m.size()) + " tensors, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i].tensor;
    if (state.m[i].size() != p.size()) {
      throw std::invalid_argument("adam_step: state size mismatch for " + params[i].name);
    }
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in " + params[i].name);
    }
  }

  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    if (!p.has_grad()) p.zero_grad();
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= c.alpha * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace ecgadv
