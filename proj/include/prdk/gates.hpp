#pragma once

#include <cstddef>
#include <string_view>

#include "prdk/autodiff.hpp"
#include "prdk/random.hpp"

namespace prdk {

inline constexpr double kDefaultStretchLow = -0.1;
inline constexpr double kDefaultStretchHigh = 1.1;

/// Parameters of one hard-concrete gate: logit beta, temperature tau and the
/// stretch interval (a, b) with a < 0 < 1 < b.
struct GateState {
  double beta = 0.0;
  double tau = 1.0;
  double a = kDefaultStretchLow;
  double b = kDefaultStretchHigh;

  /// Throws ConfigError unless a < 0 < 1 < b and tau > 0.
  void validate() const;
};

struct GateSample {
  double uniform = 0.5;    // delta in (0, 1)
  double relaxed = 0.5;    // sigmoid((ln delta - ln(1 - delta) + beta) / tau)
  double stretched = 0.5;  // a + (b - a) * relaxed
  double gate = 0.5;       // clipped to [0, 1]
};

/// Values of the relaxed gate below/above which the clipped gate is exactly 0/1.
inline double zero_threshold(double a, double b) { return -a / (b - a); }
inline double one_threshold(double a, double b) { return (1.0 - a) / (b - a); }

double logistic(double x);

/// Deterministic part of sampling: the gate produced by a given uniform draw.
GateSample gate_from_uniform(const GateState& state, double delta);

/// Draws delta from the open interval (0, 1) and returns the full chain.
GateSample sample_gate(const GateState& state, Rng& rng);

/// P(gate != 0) = sigmoid(beta - tau * ln(-a / b)).
double activation_probability(const GateState& state);

/// d/d(beta) of activation_probability.
double activation_probability_slope(const GateState& state);

/// Gate value as a differentiable function of a scalar beta node, for a fixed
/// uniform draw. The gradient is zero wherever the stretched value is clipped.
Var gate_var(Var beta, double delta, double tau, double a, double b);

/// Activation probability as a differentiable function of a scalar beta node.
Var activation_probability_var(Var beta, double tau, double a, double b);

/// Temperature schedule; the default anneals linearly from 10 to 0.1.
struct TemperatureSchedule {
  enum class Kind { Linear, Exponential, Constant };
  Kind kind = Kind::Linear;
  double start = 10.0;
  double end = 0.1;
};

std::string_view schedule_kind_name(TemperatureSchedule::Kind kind);
TemperatureSchedule::Kind schedule_kind_from_name(std::string_view name);

/// Temperature at `step` of `total_steps`. Throws ConfigError when
/// total_steps == 0 or step > total_steps.
double anneal_temperature(const TemperatureSchedule& schedule, std::size_t step, std::size_t total_steps);

}  // namespace prdk
