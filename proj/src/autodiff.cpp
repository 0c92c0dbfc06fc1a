#include "prdk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "prdk/error.hpp"
#include "prdk/parallel.hpp"

namespace prdk {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void check_kernel(std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || kernel % 2 == 0) {
    throw ConfigError("kernel size must be odd and positive, got " + std::to_string(kernel));
  }
  if (stride == 0) throw ConfigError("stride must be positive");
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error("operands live on different tapes");
  return tape_of(a);
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void add_matmul_bt(const Tensor& g, const Tensor& b, Tensor& acc) { matmul_accumulate(g, false, b, true, acc); }

void add_matmul_at(const Tensor& a, const Tensor& g, Tensor& acc) { matmul_accumulate(a, true, g, false, acc); }

template <typename Reduce>
Tensor pool_forward(const Tensor& z, std::size_t kernel, std::size_t stride, Reduce reduce) {
  const std::size_t m = z.rows(), p = z.cols(), pad = (kernel - 1) / 2;
  const std::size_t q = strided_length(p, stride);
  Tensor out = Tensor::matrix(m, q);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < q; ++t) {
      const std::ptrdiff_t centre = static_cast<std::ptrdiff_t>(t * stride);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, centre - static_cast<std::ptrdiff_t>(pad));
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(p) - 1, centre + static_cast<std::ptrdiff_t>(pad));
      out(i, t) = reduce(z, i, lo, hi);
    }
  return out;
}

}  // namespace

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
  }
  return "unknown";
}

Activation activation_from_name(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "softplus") return Activation::Softplus;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Tensor phi(const Tensor& z, std::size_t kernel, std::size_t stride) {
  check_kernel(kernel, stride);
  require_matrix(z, "phi");
  const std::size_t m = z.rows(), p = z.cols(), pad = (kernel - 1) / 2;
  const std::size_t q = strided_length(p, stride);
  Tensor out = Tensor::matrix(kernel * m, q);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < kernel; ++j)
      for (std::size_t t = 0; t < q; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(p)) out(i * kernel + j, t) = z(i, static_cast<std::size_t>(src));
      }
  return out;
}

Tensor phi_adjoint(const Tensor& patches, std::size_t rows, std::size_t cols, std::size_t kernel,
                   std::size_t stride) {
  check_kernel(kernel, stride);
  const std::size_t pad = (kernel - 1) / 2;
  const std::size_t q = strided_length(cols, stride);
  if (patches.rank() != 2 || patches.rows() != kernel * rows || patches.cols() != q) {
    throw ShapeError("phi_adjoint: patch shape " + shape_string(patches.shape()));
  }
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < kernel; ++j)
      for (std::size_t t = 0; t < q; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(cols))
          out(i, static_cast<std::size_t>(src)) += patches(i * kernel + j, t);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value");
  nodes_.push_back(Node{std::move(value), {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(Node{std::move(value), {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Edge> edges) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  std::erase_if(edges, [this](const Edge& e) { return !nodes_[e.parent].requires_grad; });
  const bool rg = !edges.empty();
  nodes_.push_back(Node{std::move(value), std::move(edges), rg, false});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var root) {
  if (root.tape() != this) throw Error("backward: root belongs to another tape");
  if (value(root).size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_string(value(root).shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), false);
  grads_[root.id()] = Tensor(value(root).shape(), 1.0);
  has_grad_[root.id()] = true;
  for (std::size_t idx = root.id() + 1; idx-- > 0;) {
    if (!has_grad_[idx]) continue;
    const Tensor& g = grads_[idx];
    for (const Edge& e : nodes_[idx].edges) {
      if (!has_grad_[e.parent]) {
        grads_[e.parent] = Tensor(nodes_[e.parent].value.shape(), 0.0);
        has_grad_[e.parent] = true;
      }
      e.pullback(g, grads_[e.parent]);
    }
  }
  Gradients out;
  for (std::size_t idx = 0; idx < nodes_.size(); ++idx) {
    if (nodes_[idx].is_leaf) out.emplace(idx, grad(Var(this, idx)));
  }
  return out;
}

Tensor Tape::grad(Var v) const {
  if (v.id() < has_grad_.size() && has_grad_[v.id()]) return grads_[v.id()];
  return Tensor(nodes_[v.id()].value.shape(), 0.0);
}

// ---------------------------------------------------------------------------
// Ops

namespace ad {

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  auto pass = [](const Tensor& g, Tensor& acc) { acc += g; };
  return t.record("add", std::move(out), {{a.id(), pass}, {b.id(), pass}});
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out -= b.value();
  return t.record("sub", std::move(out),
                  {{a.id(), [](const Tensor& g, Tensor& acc) { acc += g; }},
                   {b.id(), [](const Tensor& g, Tensor& acc) { acc -= g; }}});
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record("mul", std::move(out),
                  {{a.id(), [b](const Tensor& g, Tensor& acc) {
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * b.value()[i];
                    }},
                   {b.id(), [a](const Tensor& g, Tensor& acc) {
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * a.value()[i];
                    }}});
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  out *= s;
  return t.record("scale", std::move(out), {{a.id(), [s](const Tensor& g, Tensor& acc) { axpy(s, g, acc); }}});
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  if (s.value().size() != 1) throw ShapeError("scale_by: factor must be a single element");
  Tensor out = a.value();
  out *= s.value()[0];
  return t.record("scale_by", std::move(out),
                  {{a.id(), [s](const Tensor& g, Tensor& acc) { axpy(s.value()[0], g, acc); }},
                   {s.id(), [a](const Tensor& g, Tensor& acc) { acc[0] += dot(g, a.value()); }}});
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v += c;
  return t.record("add_scalar", std::move(out), {{a.id(), [](const Tensor& g, Tensor& acc) { acc += g; }}});
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = prdk::matmul(a.value(), b.value());
  return t.record("matmul", std::move(out),
                  {{a.id(), [b](const Tensor& g, Tensor& acc) { add_matmul_bt(g, b.value(), acc); }},
                   {b.id(), [a](const Tensor& g, Tensor& acc) { add_matmul_at(a.value(), g, acc); }}});
}

Var phi(Var z, std::size_t kernel, std::size_t stride) {
  Tape& t = tape_of(z);
  Tensor out = prdk::phi(z.value(), kernel, stride);
  const std::size_t rows = z.value().rows(), cols = z.value().cols();
  return t.record("phi", std::move(out),
                  {{z.id(), [=](const Tensor& g, Tensor& acc) {
                      acc += phi_adjoint(g, rows, cols, kernel, stride);
                    }}});
}

Var activate(Var a, Activation act) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  switch (act) {
    case Activation::Identity:
      return t.record("identity", std::move(out), {{a.id(), [](const Tensor& g, Tensor& acc) { acc += g; }}});
    case Activation::Softplus:
      for (double& v : out.storage()) v = softplus(v);
      return t.record("softplus", std::move(out), {{a.id(), [a](const Tensor& g, Tensor& acc) {
                                                      const Tensor& x = a.value();
                                                      for (std::size_t i = 0; i < g.size(); ++i)
                                                        acc[i] += g[i] * logistic(x[i]);
                                                    }}});
    case Activation::Relu:
      for (double& v : out.storage()) v = std::max(0.0, v);
      return t.record("relu", std::move(out), {{a.id(), [a](const Tensor& g, Tensor& acc) {
                                                  const Tensor& x = a.value();
                                                  for (std::size_t i = 0; i < g.size(); ++i)
                                                    if (x[i] > 0.0) acc[i] += g[i];
                                                }}});
  }
  throw ConfigError("activate: unknown activation");
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = logistic(v);
  Tensor y = out;
  return t.record("sigmoid", std::move(out), {{a.id(), [y = std::move(y)](const Tensor& g, Tensor& acc) {
                                                 for (std::size_t i = 0; i < g.size(); ++i)
                                                   acc[i] += g[i] * y[i] * (1.0 - y[i]);
                                               }}});
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = std::exp(v);
  Tensor y = out;
  return t.record("exp", std::move(out), {{a.id(), [y = std::move(y)](const Tensor& g, Tensor& acc) {
                                             for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * y[i];
                                           }}});
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = std::log(v);
  return t.record("log", std::move(out), {{a.id(), [a](const Tensor& g, Tensor& acc) {
                                             for (std::size_t i = 0; i < g.size(); ++i)
                                               acc[i] += g[i] / a.value()[i];
                                           }}});
}

Var square(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v *= v;
  return t.record("square", std::move(out), {{a.id(), [a](const Tensor& g, Tensor& acc) {
                                                for (std::size_t i = 0; i < g.size(); ++i)
                                                  acc[i] += 2.0 * g[i] * a.value()[i];
                                              }}});
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record("sum", Tensor::scalar(s), {{a.id(), [](const Tensor& g, Tensor& acc) {
                                                const double gv = g[0];
                                                for (double& v : acc.storage()) v += gv;
                                              }}});
}

Var inner(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record("inner", Tensor::scalar(dot(a.value(), b.value())),
                  {{a.id(), [b](const Tensor& g, Tensor& acc) { axpy(g[0], b.value(), acc); }},
                   {b.id(), [a](const Tensor& g, Tensor& acc) { axpy(g[0], a.value(), acc); }}});
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw Error("add_n: no terms");
  Tape& t = tape_of(terms[0]);
  Tensor out = terms[0].value();
  std::vector<Tape::Edge> edges;
  edges.reserve(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i > 0) {
      if (&tape_of(terms[i]) != &t) throw Error("add_n: operands live on different tapes");
      require_same(out, terms[i].value(), "add_n");
      out += terms[i].value();
    }
    edges.push_back({terms[i].id(), [](const Tensor& g, Tensor& acc) { acc += g; }});
  }
  return t.record("add_n", std::move(out), std::move(edges));
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw Error("stack: no scalars");
  Tape& t = tape_of(scalars[0]);
  Tensor out(Tensor::Shape{scalars.size()});
  std::vector<Tape::Edge> edges;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ShapeError("stack: expected scalars");
    out[i] = scalars[i].value()[0];
    edges.push_back({scalars[i].id(), [i](const Tensor& g, Tensor& acc) { acc[0] += g[i]; }});
  }
  return t.record("stack", std::move(out), std::move(edges));
}

Var index(Var vec, std::size_t i) {
  Tape& t = tape_of(vec);
  if (i >= vec.value().size()) throw ShapeError("index: out of range");
  return t.record("index", Tensor::scalar(vec.value()[i]),
                  {{vec.id(), [i](const Tensor& g, Tensor& acc) { acc[i] += g[0]; }}});
}

Var softmax(Var vec) {
  Tape& t = tape_of(vec);
  const Tensor& x = vec.value();
  if (x.rank() != 1 || x.size() == 0) throw ShapeError("softmax: expected a non-empty vector");
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  Tensor out = x;
  double z = 0.0;
  for (double& v : out.storage()) {
    v = std::exp(v - mx);
    z += v;
  }
  out *= 1.0 / z;
  Tensor y = out;
  return t.record("softmax", std::move(out), {{vec.id(), [y = std::move(y)](const Tensor& g, Tensor& acc) {
                                                 const double gy = dot(g, y);
                                                 for (std::size_t i = 0; i < g.size(); ++i)
                                                   acc[i] += y[i] * (g[i] - gy);
                                               }}});
}

Var clamp01(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = std::min(1.0, std::max(0.0, v));
  return t.record("clamp01", std::move(out), {{a.id(), [a](const Tensor& g, Tensor& acc) {
                                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                                   const double x = a.value()[i];
                                                   if (x > 0.0 && x < 1.0) acc[i] += g[i];
                                                 }
                                               }}});
}

Var decimate(Var a, std::size_t stride) {
  Tape& t = tape_of(a);
  if (stride == 0) throw ConfigError("decimate: stride must be positive");
  const Tensor& x = a.value();
  require_matrix(x, "decimate");
  const std::size_t m = x.rows(), q = strided_length(x.cols(), stride);
  Tensor out = Tensor::matrix(m, q);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < q; ++c) out(i, c) = x(i, c * stride);
  return t.record("decimate", std::move(out), {{a.id(), [stride](const Tensor& g, Tensor& acc) {
                                                  for (std::size_t i = 0; i < g.rows(); ++i)
                                                    for (std::size_t c = 0; c < g.cols(); ++c)
                                                      acc(i, c * stride) += g(i, c);
                                                }}});
}

Var avg_pool(Var a, std::size_t kernel, std::size_t stride) {
  Tape& t = tape_of(a);
  check_kernel(kernel, stride);
  require_matrix(a.value(), "avg_pool");
  Tensor out = pool_forward(a.value(), kernel, stride,
                            [](const Tensor& z, std::size_t i, std::ptrdiff_t lo, std::ptrdiff_t hi) {
                              double s = 0.0;
                              for (std::ptrdiff_t c = lo; c <= hi; ++c) s += z(i, static_cast<std::size_t>(c));
                              return s / static_cast<double>(hi - lo + 1);
                            });
  const std::size_t p = a.value().cols(), pad = (kernel - 1) / 2;
  return t.record("avg_pool", std::move(out), {{a.id(), [=](const Tensor& g, Tensor& acc) {
                                                  for (std::size_t i = 0; i < g.rows(); ++i)
                                                    for (std::size_t q = 0; q < g.cols(); ++q) {
                                                      const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(q * stride);
                                                      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, c0 - static_cast<std::ptrdiff_t>(pad));
                                                      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(p) - 1, c0 + static_cast<std::ptrdiff_t>(pad));
                                                      const double share = g(i, q) / static_cast<double>(hi - lo + 1);
                                                      for (std::ptrdiff_t c = lo; c <= hi; ++c) acc(i, static_cast<std::size_t>(c)) += share;
                                                    }
                                                }}});
}

Var max_pool(Var a, std::size_t kernel, std::size_t stride) {
  Tape& t = tape_of(a);
  check_kernel(kernel, stride);
  const Tensor& x = a.value();
  require_matrix(x, "max_pool");
  const std::size_t m = x.rows(), p = x.cols(), pad = (kernel - 1) / 2;
  const std::size_t q = strided_length(p, stride);
  Tensor out = Tensor::matrix(m, q);
  // First maximum wins ties.
  std::vector<std::size_t> arg(m * q);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < q; ++c) {
      const std::size_t centre = c * stride;
      const std::size_t lo = centre >= pad ? centre - pad : 0;
      const std::size_t hi = std::min(p - 1, centre + pad);
      std::size_t best = lo;
      for (std::size_t k = lo + 1; k <= hi; ++k)
        if (x(i, k) > x(i, best)) best = k;
      arg[i * q + c] = best;
      out(i, c) = x(i, best);
    }
  return t.record("max_pool", std::move(out), {{a.id(), [arg = std::move(arg), q](const Tensor& g, Tensor& acc) {
                                                  for (std::size_t i = 0; i < g.rows(); ++i)
                                                    for (std::size_t c = 0; c < q; ++c) acc(i, arg[i * q + c]) += g(i, c);
                                                }}});
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no parts");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& v : parts) {
    if (v.value().cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += v.value().rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<Tape::Edge> edges;
  std::size_t offset = 0;
  for (const Var& v : parts) {
    const std::size_t r = v.value().rows();
    std::copy(v.value().data().begin(), v.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * cols));
    edges.push_back({v.id(), [offset, r, cols](const Tensor& g, Tensor& acc) {
                       for (std::size_t i = 0; i < r * cols; ++i) acc[i] += g[offset * cols + i];
                     }});
    offset += r;
  }
  return t.record("concat_rows", std::move(out), std::move(edges));
}

Var conv(Var w, Var x, std::size_t kernel, Activation act, double tau_scale, std::size_t stride) {
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  require_matrix(wv, "conv");
  require_matrix(xv, "conv");
  if (wv.cols() != kernel * xv.rows()) {
    throw ShapeError("conv: weight " + shape_string(wv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()) + " at kernel " + std::to_string(kernel));
  }
  return scale(activate(matmul(w, phi(x, kernel, stride)), act), tau_scale);
}

}  // namespace ad

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> per_sample_gradients(std::span<const Tensor> params,
                                                      const LossBuilder& loss_builder,
                                                      std::size_t samples, std::size_t threads) {
  std::vector<std::vector<double>> out(samples);
  auto run_one = [&](std::size_t i) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Var loss = loss_builder(tape, leaves, i);
    tape.backward(loss);
    std::vector<double> flat;
    for (const Var& v : leaves) {
      const Tensor g = tape.grad(v);
      flat.insert(flat.end(), g.data().begin(), g.data().end());
    }
    out[i] = std::move(flat);
  };
  parallel_for(samples, threads, run_one);
  return out;
}

}  // namespace prdk
