#include <doctest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "prdk/autodiff.hpp"
#include "prdk/error.hpp"

using namespace prdk;

TEST_CASE("phi pads with zeros around each row") {
  const Tensor z = Tensor::from_rows({{1, 2, 3, 4}});
  CHECK(phi(z, 3) == Tensor::from_rows({{0, 1, 2, 3}, {1, 2, 3, 4}, {2, 3, 4, 0}}));
}

TEST_CASE("phi with kernel 1 is the identity") {
  Rng rng(3);
  const Tensor z = oracle::random_matrix(3, 7, rng);
  CHECK(phi(z, 1) == z);
}

TEST_CASE("phi of zeros") { CHECK(phi(Tensor::matrix(2, 5), 3) == Tensor::matrix(6, 5)); }

TEST_CASE("phi rejects even or zero kernels") {
  CHECK_THROWS_AS(phi(Tensor::matrix(2, 5), 2), ConfigError);
  CHECK_THROWS_AS(phi(Tensor::matrix(2, 5), 0), ConfigError);
}

TEST_CASE("phi_adjoint is the adjoint of phi") {
  Rng rng(5);
  for (std::size_t k : {1u, 3u, 5u}) {
    for (std::size_t stride : {1u, 2u}) {
      const Tensor z = oracle::random_matrix(3, 9, rng);
      const Tensor y = oracle::random_matrix(3 * k, strided_length(9, stride), rng);
      CHECK(dot(phi(z, k, stride), y) == doctest::Approx(dot(z, phi_adjoint(y, 3, 9, k, stride))).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv with zero weights is a constant") {
  Tape tape;
  Var w = tape.leaf(Tensor::matrix(2, 3 * 4));
  Var x = tape.constant(Tensor::matrix(4, 6, 0.3));
  const double scale = 0.5;
  Var y = ad::conv(w, x, 3, Activation::Softplus, scale);
  for (double v : y.value().data()) CHECK(v == doctest::Approx(scale * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("conv with an identity-like row copies the input row") {
  Tape tape;
  Tensor wt = Tensor::matrix(1, 3);
  wt(0, 1) = 1.0;
  const Tensor xv = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  Var y = ad::conv(tape.leaf(wt), tape.constant(xv), 1, Activation::Identity, 0.25);
  CHECK(y.value() == Tensor::from_rows({{1.0, 1.25, 1.5}}));
}

TEST_CASE("conv matches a nested-loop convolution") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t in = 1 + rng.below(4), out = 1 + rng.below(4), p = 2 + rng.below(8);
    const std::size_t k = 2 * rng.below(3) + 1;
    const Tensor w = oracle::random_matrix(out, k * in, rng);
    const Tensor x = oracle::random_matrix(in, p, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Activation a : {Activation::Softplus, Activation::Relu, Activation::Identity}) {
      Tape tape;
      const Tensor got = ad::conv(tape.leaf(w), tape.leaf(x), k, a, scale).value();
      const Tensor want = oracle::conv(w, x, k, a, scale);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
    }
  }
}

TEST_CASE("identity conv equals the scaled patch product exactly") {
  Rng rng(2);
  const Tensor w = oracle::random_matrix(3, 15, rng);
  const Tensor x = oracle::random_matrix(5, 6, rng);
  Tape tape;
  const Tensor got = ad::conv(tape.leaf(w), tape.leaf(x), 3, Activation::Identity, 0.125).value();
  Tensor want = matmul(w, phi(x, 3));
  want *= 0.125;
  CHECK(got == want);
}

TEST_CASE("conv rejects incompatible shapes") {
  Tape tape;
  Var w = tape.leaf(Tensor::matrix(2, 7));
  Var x = tape.constant(Tensor::matrix(3, 4));
  CHECK_THROWS_AS(ad::conv(w, x, 3, Activation::Softplus, 1.0), ShapeError);
}

TEST_CASE("backward of x^2 at 3") {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Var y = ad::square(x);
  auto grads = tape.backward(y);
  CHECK(grads.at(x.id()).item() == 6.0);
}

TEST_CASE("unused leaves receive zero gradient") {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Var unused = tape.leaf(Tensor::matrix(2, 2, 1.0));
  auto grads = tape.backward(ad::square(x));
  CHECK(grads.at(unused.id()) == Tensor::matrix(2, 2));
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(ad::scale(x, 2.0)), ShapeError);
}

TEST_CASE("non-finite values are rejected at op boundaries") {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(-1.0));
  CHECK_THROWS_AS(ad::log(x), NumericError);
  CHECK_THROWS_AS(tape.leaf(Tensor::scalar(std::nan(""))), NumericError);
}

namespace {

/// Scalarizes `op` with a fixed random cotangent and checks every input
/// coordinate sampled across 100 probes against central differences.
void check_op_gradient(const char* name, std::function<Var(Tape&, Var)> op, std::function<Tensor(Rng&)> make_input,
                       std::uint64_t seed) {
  Rng rng(seed);
  int probes = 0;
  while (probes < 100) {
    const Tensor x0 = make_input(rng);
    Tensor cot;
    {
      Tape t;
      cot = op(t, t.constant(x0)).value();
      for (double& v : cot.storage()) v = rng.normal();
    }
    auto f = [&](const Tensor& x) {
      Tape t;
      return dot(op(t, t.constant(x)).value(), cot);
    };
    Tape tape;
    Var x = tape.leaf(x0);
    Var out = ad::inner(op(tape, x), tape.constant(cot));
    const Tensor g = tape.backward(out).at(x.id());
    for (int k = 0; k < 5 && probes < 100; ++k, ++probes) {
      const std::size_t i = rng.below(x0.size());
      const double fd = oracle::central_difference(f, x0, i, 1e-5);
      INFO(name << " coordinate " << i);
      CHECK(oracle::rel_err(g[i], fd) < 1e-6);
    }
  }
}

Tensor away_from_kinks(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.storage()) {
    do {
      v = 1.5 * rng.normal();
    } while (std::abs(v) < 1e-3 || std::abs(v - 1.0) < 1e-3);
  }
  return t;
}

}  // namespace

TEST_CASE("every primitive matches central differences") {
  auto mat = [](std::size_t r, std::size_t c) { return [=](Rng& rng) { return oracle::random_matrix(r, c, rng); }; };
  auto kinkless = [](std::size_t r, std::size_t c) { return [=](Rng& rng) { return away_from_kinks(rng, r, c); }; };
  auto vec = [](std::size_t n) {
    return [=](Rng& rng) {
      Tensor t(Tensor::Shape{n});
      for (double& v : t.storage()) v = rng.normal();
      return t;
    };
  };
  Rng crng(99);
  const Tensor other = oracle::random_matrix(3, 5, crng);
  const Tensor wmat = oracle::random_matrix(4, 9, crng);

  check_op_gradient("add", [&](Tape& t, Var x) { return ad::add(x, t.constant(other)); }, mat(3, 5), 1);
  check_op_gradient("sub", [&](Tape& t, Var x) { return ad::sub(t.constant(other), x); }, mat(3, 5), 2);
  check_op_gradient("mul", [&](Tape& t, Var x) { return ad::mul(x, t.constant(other)); }, mat(3, 5), 3);
  check_op_gradient("scale", [](Tape&, Var x) { return ad::scale(x, -1.7); }, mat(3, 5), 4);
  check_op_gradient("scale_by (tensor)", [&](Tape& t, Var x) { return ad::scale_by(x, t.constant(Tensor::scalar(0.3))); }, mat(3, 5), 5);
  check_op_gradient("scale_by (factor)", [&](Tape& t, Var s) { return ad::scale_by(t.constant(other), s); },
                    [](Rng& rng) { return Tensor::scalar(rng.normal()); }, 6);
  check_op_gradient("add_scalar", [](Tape&, Var x) { return ad::add_scalar(x, 2.5); }, mat(3, 5), 7);
  check_op_gradient("matmul (left)", [&](Tape& t, Var x) { return ad::matmul(x, t.constant(transpose(other))); }, mat(4, 5), 8);
  check_op_gradient("matmul (right)", [&](Tape& t, Var x) { return ad::matmul(t.constant(other), x); }, mat(5, 2), 9);
  check_op_gradient("phi", [](Tape&, Var x) { return ad::phi(x, 3); }, mat(3, 5), 10);
  check_op_gradient("phi stride 2", [](Tape&, Var x) { return ad::phi(x, 5, 2); }, mat(3, 7), 11);
  check_op_gradient("softplus", [](Tape&, Var x) { return ad::activate(x, Activation::Softplus); }, mat(3, 5), 12);
  check_op_gradient("relu", [](Tape&, Var x) { return ad::activate(x, Activation::Relu); }, kinkless(3, 5), 13);
  check_op_gradient("identity", [](Tape&, Var x) { return ad::activate(x, Activation::Identity); }, mat(3, 5), 14);
  check_op_gradient("sigmoid", [](Tape&, Var x) { return ad::sigmoid(x); }, mat(3, 5), 15);
  check_op_gradient("exp", [](Tape&, Var x) { return ad::exp(x); }, mat(3, 5), 16);
  check_op_gradient("log", [](Tape&, Var x) { return ad::log(ad::add_scalar(ad::square(x), 0.5)); }, mat(3, 5), 17);
  check_op_gradient("square", [](Tape&, Var x) { return ad::square(x); }, mat(3, 5), 18);
  check_op_gradient("sum", [](Tape&, Var x) { return ad::sum(x); }, mat(3, 5), 19);
  check_op_gradient("inner", [&](Tape& t, Var x) { return ad::inner(x, t.constant(other)); }, mat(3, 5), 20);
  check_op_gradient("add_n", [&](Tape& t, Var x) {
    std::vector<Var> terms{x, t.constant(other), ad::square(x)};
    return ad::add_n(terms);
  }, mat(3, 5), 21);
  check_op_gradient("stack/index", [](Tape&, Var x) {
    std::vector<Var> parts{ad::index(x, 2), ad::index(x, 0), ad::index(x, 2)};
    return ad::stack(parts);
  }, vec(4), 22);
  check_op_gradient("softmax", [](Tape&, Var x) { return ad::softmax(x); }, vec(5), 23);
  check_op_gradient("clamp01", [](Tape&, Var x) { return ad::clamp01(x); }, kinkless(3, 5), 24);
  check_op_gradient("decimate", [](Tape&, Var x) { return ad::decimate(x, 2); }, mat(3, 7), 25);
  check_op_gradient("avg_pool", [](Tape&, Var x) { return ad::avg_pool(x, 3); }, mat(3, 6), 26);
  check_op_gradient("avg_pool stride 2", [](Tape&, Var x) { return ad::avg_pool(x, 3, 2); }, mat(3, 7), 27);
  check_op_gradient("max_pool", [](Tape&, Var x) { return ad::max_pool(x, 3); }, mat(3, 6), 28);
  check_op_gradient("concat_rows", [&](Tape& t, Var x) {
    std::vector<Var> parts{t.constant(other), x};
    return ad::concat_rows(parts);
  }, mat(2, 5), 29);
  check_op_gradient("conv (input)", [&](Tape& t, Var x) {
    return ad::conv(t.constant(wmat), x, 3, Activation::Softplus, 0.5);
  }, mat(3, 6), 30);
  check_op_gradient("conv (weight)", [&](Tape& t, Var w) {
    Rng r(1);
    static const Tensor xin = oracle::random_matrix(3, 6, r);
    return ad::conv(w, t.constant(xin), 3, Activation::Softplus, 0.5);
  }, mat(4, 9), 31);
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(17);
    Tape tape;
    Var w = tape.leaf(oracle::random_matrix(4, 12, rng));
    Var x = tape.constant(oracle::random_matrix(4, 6, rng));
    Var y = ad::conv(w, ad::conv(w, x, 3, Activation::Softplus, 0.5), 3, Activation::Softplus, 0.5);
    return tape.backward(ad::sum(ad::square(y))).at(w.id());
  };
  CHECK(run() == run());
}

namespace {

struct ToyProblem {
  std::vector<Tensor> params;
  std::vector<Tensor> inputs;
  std::vector<double> targets;

  explicit ToyProblem(std::size_t n) {
    Rng rng(31);
    params = {oracle::random_matrix(3, 6, rng), oracle::random_matrix(3, 4, rng)};
    for (std::size_t i = 0; i < n; ++i) {
      inputs.push_back(oracle::random_matrix(2, 4, rng));
      targets.push_back(rng.normal());
    }
  }

  Var sample_loss(Tape& tape, std::span<const Var> p, std::size_t i) const {
    Var h = ad::conv(p[0], tape.constant(inputs[i]), 3, Activation::Softplus, 1.0 / std::sqrt(2.0));
    Var u = ad::inner(p[1], h);
    return ad::scale(ad::square(ad::add_scalar(u, -targets[i])), 0.5);
  }
};

}  // namespace

TEST_CASE("per-sample gradients") {
  SUBCASE("single sample equals plain backward") {
    ToyProblem toy(1);
    auto grads = per_sample_gradients(toy.params, [&](Tape& t, std::span<const Var> p, std::size_t i) {
      return toy.sample_loss(t, p, i);
    }, 1);
    REQUIRE(grads.size() == 1);
    Tape tape;
    std::vector<Var> p{tape.leaf(toy.params[0]), tape.leaf(toy.params[1])};
    auto g = tape.backward(toy.sample_loss(tape, p, 0));
    std::vector<double> flat;
    for (Var v : p) flat.insert(flat.end(), g.at(v.id()).data().begin(), g.at(v.id()).data().end());
    CHECK(grads[0] == flat);
  }
  SUBCASE("mean of per-sample gradients is the gradient of the mean loss") {
    ToyProblem toy(5);
    auto builder = [&](Tape& t, std::span<const Var> p, std::size_t i) { return toy.sample_loss(t, p, i); };
    auto grads = per_sample_gradients(toy.params, builder, 5);
    Tape tape;
    std::vector<Var> p{tape.leaf(toy.params[0]), tape.leaf(toy.params[1])};
    std::vector<Var> losses;
    for (std::size_t i = 0; i < 5; ++i) losses.push_back(toy.sample_loss(tape, p, i));
    auto g = tape.backward(ad::scale(ad::add_n(losses), 1.0 / 5.0));
    std::vector<double> flat;
    for (Var v : p) flat.insert(flat.end(), g.at(v.id()).data().begin(), g.at(v.id()).data().end());
    for (std::size_t k = 0; k < flat.size(); ++k) {
      double mean = 0.0;
      for (const auto& v : grads) mean += v[k] / 5.0;
      CHECK(std::abs(mean - flat[k]) < 1e-10);
    }
  }
  SUBCASE("threaded extraction matches sequential") {
    ToyProblem toy(7);
    auto builder = [&](Tape& t, std::span<const Var> p, std::size_t i) { return toy.sample_loss(t, p, i); };
    CHECK(per_sample_gradients(toy.params, builder, 7, 3) == per_sample_gradients(toy.params, builder, 7, 1));
  }
}
