#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "prdk/tensor.hpp"

namespace prdk {

enum class Activation { Identity, Softplus, Relu };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

/// Patch matrix of a (m, p) signal for a 1-D kernel of odd width k_c with
/// "same" zero padding: row i*k_c + j, column t holds Z(i, t*stride + j - pad).
/// W * phi(Z) is then the 1-D cross-correlation of Z with the rows of W.
Tensor phi(const Tensor& z, std::size_t kernel, std::size_t stride = 1);

/// Adjoint of phi: scatters a (k_c*m, p_out) patch gradient back onto (m, p).
Tensor phi_adjoint(const Tensor& patches, std::size_t rows, std::size_t cols,
                   std::size_t kernel, std::size_t stride = 1);

/// Output length of a stride-s "same" operation on p positions.
inline std::size_t strided_length(std::size_t p, std::size_t stride) {
  return (p + stride - 1) / stride;
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Leaf id -> gradient. Contains every leaf on the tape; leaves the root does
/// not depend on map to zeros.
using Gradients = std::map<std::size_t, Tensor>;

/// Append-only computation graph. Nodes are created in topological order, so
/// the backward pass is a single reverse sweep over node indices.
class Tape {
 public:
  /// Propagates the node's output gradient into one parent's accumulator.
  using Pullback = std::function<void(const Tensor& out_grad, Tensor& parent_grad)>;

  struct Edge {
    std::size_t parent;
    Pullback pullback;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter).
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);

  /// Records an op result. Parents that do not require gradients are dropped.
  /// Throws NumericError if `value` has non-finite entries.
  Var record(std::string_view op, Tensor value, std::vector<Edge> edges);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar root. Resets gradients from any previous call.
  Gradients backward(Var root);

  /// Gradient accumulated at `v` by the last backward(); zeros if `v` was not
  /// reached.
  Tensor grad(Var v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<Edge> edges;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Multiplies a tensor by a differentiable scalar (single-element) node.
Var scale_by(Var a, Var s);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var phi(Var z, std::size_t kernel, std::size_t stride = 1);
Var activate(Var a, Activation act);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Sum of all entries, as a scalar.
Var sum(Var a);
/// Frobenius inner product, as a scalar.
Var inner(Var a, Var b);
/// Sum of several same-shape nodes. Requires at least one term.
Var add_n(std::span<const Var> terms);
/// Scalars -> rank-1 vector.
Var stack(std::span<const Var> scalars);
/// Entry i of a rank-1 vector as a scalar.
Var index(Var vec, std::size_t i);
/// Numerically stabilized softmax over a rank-1 vector.
Var softmax(Var vec);
/// min(1, max(0, x)); gradient is zero outside (0, 1).
Var clamp01(Var a);
/// Column decimation, keeps columns 0, stride, 2*stride, ...
Var decimate(Var a, std::size_t stride);
/// Average over each row's in-range patch entries (padding excluded).
Var avg_pool(Var a, std::size_t kernel, std::size_t stride = 1);
/// Maximum over each row's in-range patch entries (padding excluded).
Var max_pool(Var a, std::size_t kernel, std::size_t stride = 1);
/// Stacks same-width matrices along rows (channel concatenation).
Var concat_rows(std::span<const Var> parts);

/// scale * act(W * phi(X)): the convolution-plus-activation block.
Var conv(Var w, Var x, std::size_t kernel, Activation act, double tau_scale,
         std::size_t stride = 1);

}  // namespace ad

/// Runs `loss_builder` once per sample on a fresh tape whose first leaves are
/// `params` (in order) and returns each sample's gradient flattened in that
/// order. With threads > 1 samples fan out, results are stored by index.
using LossBuilder = std::function<Var(Tape&, std::span<const Var> params, std::size_t sample)>;

std::vector<std::vector<double>> per_sample_gradients(std::span<const Tensor> params,
                                                      const LossBuilder& loss_builder,
                                                      std::size_t samples,
                                                      std::size_t threads = 1);

}  // namespace prdk
