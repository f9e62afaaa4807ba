#include <algorithm>
#include <cmath>

#include "ecgadv/training.hpp"

namespace ecgadv {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_vector(const Tensor& t, const char* what) {
  if (t.rank() != 1) throw ShapeError(std::string(what) + ": expected [batch], got " + to_string(t.shape()));
}

}  // namespace

double adversarial_loss_d(const Tensor& d_real, const Tensor& d_fake, Tensor* grad_real, Tensor* grad_fake) {
  require_vector(d_real, "adversarial_loss_d");
  require_same(d_real, d_fake, "adversarial_loss_d");
  const double n = static_cast<double>(d_real.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    const double r = d_real[i] - 1.0, f = d_fake[i];
    acc += r * r + f * f;
  }
  if (grad_real) {
    *grad_real = Tensor(d_real.shape());
    for (std::size_t i = 0; i < d_real.size(); ++i) (*grad_real)[i] = 2.0 * (d_real[i] - 1.0) / n;
  }
  if (grad_fake) {
    *grad_fake = Tensor(d_fake.shape());
    for (std::size_t i = 0; i < d_fake.size(); ++i) (*grad_fake)[i] = 2.0 * d_fake[i] / n;
  }
  return acc / n;
}

double adversarial_loss_g(const Tensor& d_fake, Tensor* grad) {
  require_vector(d_fake, "adversarial_loss_g");
  const double n = static_cast<double>(d_fake.size());
  double acc = 0.0;
  for (double v : d_fake.values()) acc += (v - 1.0) * (v - 1.0);
  if (grad) {
    *grad = Tensor(d_fake.shape());
    for (std::size_t i = 0; i < d_fake.size(); ++i) (*grad)[i] = 2.0 * (d_fake[i] - 1.0) / n;
  }
  return acc / n;
}

double class_loss(const Tensor& probs, const Tensor& one_hot, Tensor* grad) {
  require_rank(probs, 2, "class_loss");
  require_same(probs, one_hot, "class_loss");
  const double n = static_cast<double>(probs.dim(0));
  double acc = 0.0;
  if (grad) *grad = Tensor(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (one_hot[i] == 0.0) continue;
    const double p = probs[i];
    const double clamped = std::max(p, kProbabilityFloor);
    acc -= one_hot[i] * std::log(clamped);
    // The clamp is flat below the floor.
    if (grad && p >= kProbabilityFloor) (*grad)[i] = -one_hot[i] / (p * n);
  }
  return acc / n;
}

double reconstruction_loss(const Tensor& g_out, const Tensor& x, Tensor* grad) {
  require_rank(g_out, 2, "reconstruction_loss");
  require_same(g_out, x, "reconstruction_loss");
  const double n = static_cast<double>(g_out.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < g_out.size(); ++i) {
    const double d = g_out[i] - x[i];
    acc += d * d;
  }
  if (grad) {
    *grad = Tensor(g_out.shape());
    for (std::size_t i = 0; i < g_out.size(); ++i) (*grad)[i] = 2.0 * (g_out[i] - x[i]) / n;
  }
  // Equal row lengths make the mean of row means the flat mean.
  return acc / n;
}

}  // namespace ecgadv
