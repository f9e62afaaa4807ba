#include "ecgadv/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "ecgadv/rng.hpp"

namespace ecgadv {

GradCheckReport gradient_check(const GradCheckProblem& problem, const GradCheckOptions& options) {
  for (const auto& b : problem.blocks) b.tensor->zero_grad();
  problem.compute_gradients();

  // Snapshot analytic gradients before any re-evaluation touches the caches.
  std::vector<std::vector<double>> analytic;
  for (const auto& b : problem.blocks) {
    if (!b.tensor->has_grad()) {
      analytic.emplace_back(b.tensor->size(), 0.0);
    } else {
      analytic.emplace_back(b.tensor->grad().begin(), b.tensor->grad().end());
    }
  }

  if (problem.freeze_patterns) problem.freeze_patterns(true);

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t bi = 0; bi < problem.blocks.size(); ++bi) {
    Tensor& t = *problem.blocks[bi].tensor;
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_block && options.coords_per_block < coords.size()) {
      // Partial Fisher-Yates: the first n entries become a uniform sample.
      for (std::size_t i = 0; i < options.coords_per_block; ++i)
        std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      coords.resize(options.coords_per_block);
    }

    BlockReport block{problem.blocks[bi].name, coords.size(), 0.0, 0.0};
    for (std::size_t c : coords) {
      const double saved = t[c];
      t[c] = saved + options.step;
      const double plus = problem.evaluate();
      t[c] = saved - options.step;
      const double minus = problem.evaluate();
      t[c] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[bi][c];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      block.max_abs_error = std::max(block.max_abs_error, abs_err);
      block.max_rel_error = std::max(block.max_rel_error, abs_err / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
    report.checked += block.checked;
    report.blocks.push_back(std::move(block));
  }
  if (problem.freeze_patterns) problem.freeze_patterns(false);
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

GradCheckReport check_layer_gradients(Layer& layer, const Tensor& input, Mode mode,
                                      const GradCheckOptions& options) {
  auto x = std::make_shared<Tensor>(input);
  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  auto projection = std::make_shared<Tensor>(layer.forward(*x, mode).shape());
  for (double& v : projection->values()) v = rng.uniform() * 2.0 - 1.0;

  GradCheckProblem problem;
  problem.blocks = layer.parameters();
  problem.blocks.push_back({"input", x.get()});
  problem.evaluate = [&layer, x, projection, mode] {
    const Tensor y = layer.forward(*x, mode);
    return std::inner_product(y.values().begin(), y.values().end(),
                              projection->values().begin(), 0.0);
  };
  problem.compute_gradients = [&layer, x, projection, mode] {
    layer.forward(*x, mode);
    const Tensor gx = layer.backward(*projection, true);
    std::copy(gx.values().begin(), gx.values().end(), x->grad().begin());
  };
  return gradient_check(problem, options);
}

}  // namespace ecgadv
