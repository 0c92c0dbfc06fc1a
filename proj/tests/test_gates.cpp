#include <doctest.h>

#include <cmath>

#include "prdk/error.hpp"
#include "prdk/gates.hpp"

using namespace prdk;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Simpson's rule for E[relaxed] = integral over delta in (0,1).
double mean_relaxed_quadrature(double beta, double tau) {
  const int n = 200000;
  const double h = 1.0 / n;
  auto f = [&](double d) {
    if (d <= 0.0) return 0.0;
    if (d >= 1.0) return 1.0;
    return sigmoid((std::log(d) - std::log1p(-d) + beta) / tau);
  };
  double s = f(0.0) + f(1.0);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("gate from the uniform midpoint") {
  const GateSample s = gate_from_uniform({0.0, 1.0}, 0.5);
  CHECK(s.relaxed == 0.5);
  CHECK(s.stretched == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.gate == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("left saturation clips to zero") {
  const GateSample s = gate_from_uniform({-60.0, 1.0}, 0.5);
  CHECK(s.stretched == doctest::Approx(-0.1));
  CHECK(s.gate == 0.0);
}

TEST_CASE("relaxed value at the zero boundary gives a zero gate") {
  const double a = kDefaultStretchLow, b = kDefaultStretchHigh;
  CHECK(zero_threshold(a, b) == doctest::Approx(1.0 / 12.0));
  // relaxed = 1/12 when logit(delta) = logit(1/12) with beta = 0, tau = 1
  const GateSample s = gate_from_uniform({0.0, 1.0}, 1.0 / 12.0);
  CHECK(s.relaxed == doctest::Approx(1.0 / 12.0).epsilon(1e-14));
  CHECK(std::abs(s.stretched) < 1e-14);
  CHECK(s.gate < 1e-14);
}

TEST_CASE("gate state validation") {
  CHECK_THROWS_AS(GateState({0.0, 0.0}).validate(), ConfigError);
  CHECK_THROWS_AS(GateState({0.0, 1.0, 0.1, 1.1}).validate(), ConfigError);
  CHECK_THROWS_AS(GateState({0.0, 1.0, -0.1, 0.9}).validate(), ConfigError);
  CHECK_NOTHROW(GateState({0.0, 1.0}).validate());
}

TEST_CASE("activation probability") {
  const double a = kDefaultStretchLow, b = kDefaultStretchHigh;
  SUBCASE("midpoint") { CHECK(activation_probability({3.0 * std::log(-a / b), 3.0}) == doctest::Approx(0.5)); }
  SUBCASE("initialization saturates at one") {
    const double p = activation_probability({0.5, 10.0});
    CHECK(p == doctest::Approx(sigmoid(0.5 - 10.0 * std::log(1.0 / 11.0))));
    CHECK(p > 1.0 - 1e-10);
  }
  SUBCASE("monotone in beta") {
    double prev = 0.0;
    for (double beta = -20.0; beta <= 20.0; beta += 0.5) {
      const double p = activation_probability({beta, 2.0});
      CHECK(p > prev);
      CHECK(activation_probability_slope({beta, 2.0}) > 0.0);
      prev = p;
    }
  }
  SUBCASE("Monte-Carlo frequency of nonzero gates") {
    Rng rng(7);
    for (auto [beta, tau] : {std::pair{0.0, 1.0}, {-1.0, 0.5}, {1.5, 2.0}, {-3.0, 3.0}}) {
      const GateState st{beta, tau};
      const int n = 100000;
      int nonzero = 0;
      for (int i = 0; i < n; ++i) nonzero += sample_gate(st, rng).gate != 0.0;
      const double p = activation_probability(st);
      CHECK(std::abs(nonzero / double(n) - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
    }
  }
}

TEST_CASE("piecewise law holds per sample") {
  Rng rng(13);
  const double a = kDefaultStretchLow, b = kDefaultStretchHigh;
  for (int i = 0; i < 20000; ++i) {
    const GateState st{4.0 * rng.normal(), 0.05 + 3.0 * rng.uniform()};
    const GateSample s = sample_gate(st, rng);
    REQUIRE(s.uniform > 0.0);
    REQUIRE(s.uniform < 1.0);
    CHECK(s.relaxed == doctest::Approx(sigmoid((std::log(s.uniform) - std::log(1 - s.uniform) + st.beta) / st.tau)));
    if (s.relaxed <= zero_threshold(a, b)) {
      CHECK(s.gate == 0.0);
    } else if (s.relaxed >= one_threshold(a, b)) {
      CHECK(s.gate == 1.0);
    } else {
      CHECK(s.gate == a + (b - a) * s.relaxed);
    }
  }
}

TEST_CASE("low temperature makes gates binary") {
  Rng rng(21);
  const double a = kDefaultStretchLow, b = kDefaultStretchHigh;
  auto logit = [](double x) { return std::log(x) - std::log1p(-x); };
  for (double beta : {-3.0, -2.0, 2.5, 4.0, 0.0}) {
    const double tau = 0.01;
    int binary = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const double g = sample_gate({beta, tau}, rng).gate;
      binary += (g == 0.0 || g == 1.0);
    }
    // delta lands in the unclipped band with this probability
    const double lo = tau * logit(zero_threshold(a, b)) - beta;
    const double hi = tau * logit(one_threshold(a, b)) - beta;
    const double q = sigmoid(hi) - sigmoid(lo);
    CHECK(std::abs((n - binary) / double(n) - q) <= 3.0 * std::sqrt(q * (1 - q) / n) + 1.0 / n);
    if (std::abs(beta) >= 2.0) CHECK(binary / double(n) >= 0.99);
  }
}

TEST_CASE("empirical mean of the relaxed gate matches quadrature") {
  Rng rng(5);
  for (auto [beta, tau] : {std::pair{0.0, 1.0}, {1.0, 0.5}, {-2.0, 2.0}, {0.5, 10.0}}) {
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += sample_gate({beta, tau}, rng).relaxed;
    const double want = mean_relaxed_quadrature(beta, tau);
    CHECK(std::abs(sum / n - want) / want < 0.01);
  }
}

TEST_CASE("gate gradient flows only through the unclipped region") {
  for (double delta : {0.02, 0.3, 0.5, 0.8, 0.99}) {
    for (double beta : {-3.0, -0.2, 0.0, 0.4, 3.0}) {
      const double tau = 0.7;
      Tape tape;
      Var bv = tape.leaf(Tensor::scalar(beta));
      Var g = gate_var(bv, delta, tau, kDefaultStretchLow, kDefaultStretchHigh);
      const GateSample s = gate_from_uniform({beta, tau}, delta);
      CHECK(g.value().item() == doctest::Approx(s.gate).epsilon(1e-15));
      const double grad = tape.backward(g).at(bv.id()).item();
      if (s.stretched <= 0.0 || s.stretched >= 1.0) {
        CHECK(grad == 0.0);
      } else {
        const double want = (kDefaultStretchHigh - kDefaultStretchLow) * s.relaxed * (1 - s.relaxed) / tau;
        CHECK(grad == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("activation probability node matches the closed form and its slope") {
  for (double beta : {-2.0, 0.0, 1.3}) {
    Tape tape;
    Var bv = tape.leaf(Tensor::scalar(beta));
    Var p = activation_probability_var(bv, 1.5, kDefaultStretchLow, kDefaultStretchHigh);
    CHECK(p.value().item() == doctest::Approx(activation_probability({beta, 1.5})).epsilon(1e-15));
    CHECK(tape.backward(p).at(bv.id()).item() == doctest::Approx(activation_probability_slope({beta, 1.5})).epsilon(1e-12));
  }
}

TEST_CASE("temperature schedule") {
  const TemperatureSchedule lin;
  CHECK(anneal_temperature(lin, 0, 100) == 10.0);
  CHECK(anneal_temperature(lin, 100, 100) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(anneal_temperature(lin, 50, 100) == doctest::Approx(5.05));
  CHECK_THROWS_AS(anneal_temperature(lin, 0, 0), ConfigError);
  CHECK_THROWS_AS(anneal_temperature(lin, 101, 100), ConfigError);
  TemperatureSchedule ex{TemperatureSchedule::Kind::Exponential};
  CHECK(anneal_temperature(ex, 50, 100) == doctest::Approx(1.0));
  TemperatureSchedule c{TemperatureSchedule::Kind::Constant, 3.0, 3.0};
  CHECK(anneal_temperature(c, 7, 10) == 3.0);
  CHECK(schedule_kind_from_name(schedule_kind_name(TemperatureSchedule::Kind::Exponential)) ==
        TemperatureSchedule::Kind::Exponential);
  CHECK_THROWS_AS(schedule_kind_from_name("cubic"), ConfigError);
}
