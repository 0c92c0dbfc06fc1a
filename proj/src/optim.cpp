#include "prdk/optim.hpp"

#include <cmath>

#include "prdk/error.hpp"

namespace prdk {

namespace {

void check_sizes(std::size_t n, std::size_t grads, std::size_t mask, double lr) {
  if (grads != n || mask != n) throw ShapeError("optimizer: values, gradients and mask differ in size");
  if (!(lr >= 0.0)) throw ConfigError("optimizer: learning rate must be non-negative");
}

}  // namespace

void MomentumSgd::step(std::span<double> values, std::span<const double> grads, std::span<const char> active,
                       double lr) {
  check_sizes(values.size(), grads.size(), active.size(), lr);
  if (velocity_.empty()) velocity_.assign(values.size(), 0.0);
  if (velocity_.size() != values.size()) throw ShapeError("optimizer: parameter count changed");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!active[i]) continue;
    const double g = grads[i] + opts_.weight_decay * values[i];
    velocity_[i] = opts_.momentum * velocity_[i] + g;
    values[i] -= lr * velocity_[i];
  }
}

void Adam::step(std::span<double> values, std::span<const double> grads, std::span<const char> active, double lr) {
  check_sizes(values.size(), grads.size(), active.size(), lr);
  if (m_.empty()) {
    m_.assign(values.size(), 0.0);
    v_.assign(values.size(), 0.0);
    t_.assign(values.size(), 0);
  }
  if (m_.size() != values.size()) throw ShapeError("optimizer: parameter count changed");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!active[i]) continue;
    const double g = grads[i] + opts_.weight_decay * values[i];
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g * g;
    const auto t = static_cast<double>(++t_[i]);
    const double mhat = m_[i] / (1.0 - std::pow(opts_.beta1, t));
    const double vhat = v_[i] / (1.0 - std::pow(opts_.beta2, t));
    values[i] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
  }
}

}  // namespace prdk
