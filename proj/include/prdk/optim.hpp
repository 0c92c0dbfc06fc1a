#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace prdk {

/// First-order optimizer over a flat parameter vector. Slots whose mask entry
/// is false are left untouched, including their internal state.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<double> values, std::span<const double> grads, std::span<const char> active,
                    double lr) = 0;
  virtual std::string_view name() const = 0;
};

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// v <- momentum v + (g + wd theta); theta <- theta - lr v.
class MomentumSgd final : public Optimizer {
 public:
  explicit MomentumSgd(SgdOptions opts) : opts_(opts) {}
  void step(std::span<double> values, std::span<const double> grads, std::span<const char> active,
            double lr) override;
  std::string_view name() const override { return "sgd"; }

 private:
  SgdOptions opts_;
  std::vector<double> velocity_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Bias-corrected first/second moment steps. Every slot counts its own
/// updates so masked slots do not skew the correction.
class Adam final : public Optimizer {
 public:
  explicit Adam(AdamOptions opts) : opts_(opts) {}
  void step(std::span<double> values, std::span<const double> grads, std::span<const char> active,
            double lr) override;
  std::string_view name() const override { return "adam"; }

 private:
  AdamOptions opts_;
  std::vector<double> m_, v_;
  std::vector<std::size_t> t_;
};

}  // namespace prdk
