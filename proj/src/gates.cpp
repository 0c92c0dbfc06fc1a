#include "prdk/gates.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prdk/error.hpp"

namespace prdk {

void GateState::validate() const {
  if (!(a < 0.0) || !(b > 1.0)) {
    throw ConfigError("gate stretch interval must satisfy a < 0 < 1 < b (got a=" + std::to_string(a) +
                      ", b=" + std::to_string(b) + ")");
  }
  if (!(tau > 0.0)) throw ConfigError("gate temperature must be positive");
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

GateSample gate_from_uniform(const GateState& state, double delta) {
  GateSample s;
  s.uniform = delta;
  s.relaxed = logistic((std::log(delta) - std::log1p(-delta) + state.beta) / state.tau);
  s.stretched = state.a + (state.b - state.a) * s.relaxed;
  s.gate = std::min(1.0, std::max(0.0, s.stretched));
  return s;
}

GateSample sample_gate(const GateState& state, Rng& rng) {
  state.validate();
  return gate_from_uniform(state, rng.uniform_open());
}

double activation_probability(const GateState& state) {
  return logistic(state.beta - state.tau * std::log(-state.a / state.b));
}

double activation_probability_slope(const GateState& state) {
  const double p = activation_probability(state);
  return p * (1.0 - p);
}

Var gate_var(Var beta, double delta, double tau, double a, double b) {
  const double noise = std::log(delta) - std::log1p(-delta);
  Var relaxed = ad::sigmoid(ad::scale(ad::add_scalar(beta, noise), 1.0 / tau));
  return ad::clamp01(ad::add_scalar(ad::scale(relaxed, b - a), a));
}

Var activation_probability_var(Var beta, double tau, double a, double b) {
  return ad::sigmoid(ad::add_scalar(beta, -tau * std::log(-a / b)));
}

std::string_view schedule_kind_name(TemperatureSchedule::Kind kind) {
  switch (kind) {
    case TemperatureSchedule::Kind::Linear: return "linear";
    case TemperatureSchedule::Kind::Exponential: return "exponential";
    case TemperatureSchedule::Kind::Constant: return "constant";
  }
  return "unknown";
}

TemperatureSchedule::Kind schedule_kind_from_name(std::string_view name) {
  if (name == "linear") return TemperatureSchedule::Kind::Linear;
  if (name == "exponential") return TemperatureSchedule::Kind::Exponential;
  if (name == "constant") return TemperatureSchedule::Kind::Constant;
  throw ConfigError("unknown temperature schedule '" + std::string(name) + "'");
}

double anneal_temperature(const TemperatureSchedule& schedule, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) throw ConfigError("anneal_temperature: total_steps must be positive");
  if (step > total_steps) throw ConfigError("anneal_temperature: step beyond total_steps");
  if (!(schedule.start > 0.0) || !(schedule.end > 0.0)) {
    throw ConfigError("anneal_temperature: temperatures must be positive");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  switch (schedule.kind) {
    case TemperatureSchedule::Kind::Linear:
      return schedule.start + (schedule.end - schedule.start) * frac;
    case TemperatureSchedule::Kind::Exponential:
      return schedule.start * std::pow(schedule.end / schedule.start, frac);
    case TemperatureSchedule::Kind::Constant:
      return schedule.start;
  }
  return schedule.start;
}

}  // namespace prdk
