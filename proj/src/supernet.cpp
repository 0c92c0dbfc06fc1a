#include "prdk/supernet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <tuple>

#include "prdk/error.hpp"

namespace prdk {

namespace {

std::size_t parse_kernel(std::string_view digits, std::string_view full) {
  std::size_t k = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || k == 0 || k % 2 == 0) {
    throw ConfigError("operation '" + std::string(full) + "' needs an odd positive kernel size");
  }
  return k;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

Operation operation_from_name(std::string_view name) {
  const std::string n(name);
  if (name == "zero") return {OpKind::Zero, 0, n};
  if (name == "skip") return {OpKind::Skip, 0, n};
  for (std::string_view prefix : {"sep_conv_", "dil_conv_"}) {
    if (starts_with(name, prefix)) return {OpKind::Conv, parse_kernel(name.substr(prefix.size()), name), n};
  }
  if (starts_with(name, "avg_pool_")) return {OpKind::AvgPool, parse_kernel(name.substr(9), name), n};
  if (starts_with(name, "max_pool_")) return {OpKind::MaxPool, parse_kernel(name.substr(9), name), n};
  if (starts_with(name, "avg_pool")) return {OpKind::AvgPool, parse_kernel(name.substr(8), name), n};
  if (starts_with(name, "max_pool")) return {OpKind::MaxPool, parse_kernel(name.substr(8), name), n};
  if (starts_with(name, "conv")) return {OpKind::Conv, parse_kernel(name.substr(4), name), n};
  throw ConfigError("unknown operation '" + n + "'");
}

std::vector<Operation> theoretical_ops() {
  return {operation_from_name("zero"), operation_from_name("skip"), operation_from_name("conv3")};
}

std::vector<Operation> practical_ops() {
  std::vector<Operation> ops;
  for (const char* n : {"zero", "skip", "sep_conv_3", "sep_conv_5", "dil_conv_3", "dil_conv_5", "avg_pool_3",
                        "max_pool_3"}) {
    ops.push_back(operation_from_name(n));
  }
  return ops;
}

std::vector<Operation> ops_from_names(std::span<const std::string> names) {
  std::vector<Operation> ops;
  for (const auto& n : names) ops.push_back(operation_from_name(n));
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = i + 1; j < ops.size(); ++j)
      if (ops[i].name == ops[j].name) throw ConfigError("duplicate operation '" + ops[i].name + "'");
  return ops;
}

// ---------------------------------------------------------------------------
// CellGraph

CellGraph::CellGraph(std::size_t nodes, std::vector<Operation> ops, std::size_t inputs)
    : nodes_(nodes), inputs_(inputs) {
  build_edges();
  if (ops.empty()) throw ConfigError("cell needs at least one operation per edge");
  edge_ops_.assign(edges_.size(), ops);
}

CellGraph::CellGraph(std::size_t nodes, std::vector<std::vector<Operation>> edge_ops, std::size_t inputs)
    : nodes_(nodes), inputs_(inputs), edge_ops_(std::move(edge_ops)) {
  build_edges();
  if (edge_ops_.size() != edges_.size()) {
    throw ConfigError("cell with " + std::to_string(edges_.size()) + " edges given " +
                      std::to_string(edge_ops_.size()) + " op lists");
  }
  for (const auto& ops : edge_ops_)
    if (ops.empty()) throw ConfigError("cell needs at least one operation per edge");
}

void CellGraph::build_edges() {
  if (inputs_ < 1 || inputs_ > 2) throw ConfigError("cells have one or two input nodes");
  if (nodes_ <= inputs_) throw ConfigError("cell needs at least one node after its input nodes");
  edges_.clear();
  for (std::size_t l = inputs_; l < nodes_; ++l)
    for (std::size_t s = 0; s < l; ++s) edges_.push_back({s, l});
}

std::size_t CellGraph::edge_index(std::size_t source, std::size_t target) const {
  if (target < inputs_ || target >= nodes_ || source >= target) {
    throw ConfigError("no edge " + std::to_string(source) + "->" + std::to_string(target));
  }
  // Targets inputs_.. contribute target edges each.
  std::size_t before = 0;
  for (std::size_t l = inputs_; l < target; ++l) before += l;
  return before + source;
}

std::optional<std::size_t> CellGraph::find_op(std::size_t e, OpKind kind) const {
  const auto& ops = edge_ops_.at(e);
  for (std::size_t t = 0; t < ops.size(); ++t)
    if (ops[t].kind == kind) return t;
  return std::nullopt;
}

std::size_t CellGraph::total_ops() const {
  std::size_t n = 0;
  for (const auto& ops : edge_ops_) n += ops.size();
  return n;
}

EdgeValues make_edge_values(const CellGraph& graph, double fill) {
  EdgeValues v(graph.num_edges());
  for (std::size_t e = 0; e < graph.num_edges(); ++e) v[e].assign(graph.ops(e).size(), fill);
  return v;
}

std::vector<double> softmax_weights(std::span<const double> betas) {
  if (betas.empty()) return {};
  const double mx = *std::max_element(betas.begin(), betas.end());
  std::vector<double> out(betas.size());
  double z = 0.0;
  for (std::size_t i = 0; i < betas.size(); ++i) z += (out[i] = std::exp(betas[i] - mx));
  for (double& v : out) v /= z;
  return out;
}

std::string_view cell_type_name(CellType t) { return t == CellType::Normal ? "normal" : "reduction"; }

std::vector<std::size_t> default_reduction_positions(std::size_t cells) {
  if (cells < 3) return {};
  std::vector<std::size_t> pos{cells / 3, 2 * cells / 3};
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
  return pos;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(NetworkConfig config)
    : Network(config, CellGraph(config.nodes, config.ops, config.two_input ? 2 : 1)) {}

Network::Network(NetworkConfig config, CellGraph graph) : config_(std::move(config)), graph_(std::move(graph)) {
  if (graph_.nodes() != config_.nodes) throw ConfigError("cell graph node count differs from config");
  if (graph_.inputs() != (config_.two_input ? 2u : 1u)) throw ConfigError("cell graph input count differs from config");
  build();
}

bool Network::has_reduction() const noexcept {
  return std::find(types_.begin(), types_.end(), CellType::Reduction) != types_.end();
}

void Network::build() {
  const auto& c = config_;
  if (c.cells == 0) throw ConfigError("network needs at least one cell");
  if (c.in_channels == 0 || c.length == 0 || c.width == 0) throw ConfigError("network dimensions must be positive");
  if (c.stem_kernel == 0 || c.stem_kernel % 2 == 0) throw ConfigError("stem kernel must be odd");

  types_.assign(c.cells, CellType::Normal);
  if (c.reduction) {
    const auto positions = c.reduction_positions.empty() ? default_reduction_positions(c.cells) : c.reduction_positions;
    for (std::size_t p : positions) {
      if (p >= c.cells) throw ConfigError("reduction position " + std::to_string(p) + " outside the network");
      types_[p] = CellType::Reduction;
    }
  } else if (!c.reduction_positions.empty()) {
    throw ConfigError("reduction positions given but reduction cells are disabled");
  }

  const std::size_t inputs = graph_.inputs();
  const std::size_t intermediates = graph_.nodes() - inputs;
  // Output shape of every cell, index -1 handled via raw input.
  std::vector<std::pair<std::size_t, std::size_t>> out_shape(c.cells);
  auto source_shape = [&](std::ptrdiff_t cell) -> std::pair<std::size_t, std::size_t> {
    if (cell < 0) return {c.in_channels, c.length};
    return out_shape[static_cast<std::size_t>(cell)];
  };

  layout_.clear();
  stem_index_.assign(c.cells, {});
  op_index_.assign(c.cells, {});
  shapes_.assign(c.cells, {});
  std::vector<ParamInfo> stems, weights;
  for (std::size_t cell = 0; cell < c.cells; ++cell) {
    const auto prev = source_shape(static_cast<std::ptrdiff_t>(cell) - 1);
    const std::size_t p_in = prev.second;
    const std::size_t p_mid = types_[cell] == CellType::Reduction ? strided_length(p_in, 2) : p_in;
    auto& shapes = shapes_[cell];
    for (std::size_t l = 0; l < graph_.nodes(); ++l) shapes.emplace_back(c.width, l < inputs ? p_in : p_mid);
    for (std::size_t slot = 0; slot < inputs; ++slot) {
      const std::ptrdiff_t src_cell = static_cast<std::ptrdiff_t>(cell) - static_cast<std::ptrdiff_t>(inputs - slot);
      const auto src = source_shape(src_cell);
      stems.push_back({ParamInfo::Kind::Stem, cell, slot, 0, 0,
                       "cell" + std::to_string(cell) + ".stem" + std::to_string(slot),
                       {c.width, c.stem_kernel * src.first}});
    }
    for (std::size_t e = 0; e < graph_.num_edges(); ++e) {
      const auto& ops = graph_.ops(e);
      for (std::size_t t = 0; t < ops.size(); ++t) {
        if (!ops[t].has_weight()) continue;
        const auto [s, l] = graph_.edge(e);
        weights.push_back({ParamInfo::Kind::OpWeight, cell, l, s, t,
                           "cell" + std::to_string(cell) + ".w[" + std::to_string(l) + "," + std::to_string(s) +
                               "," + ops[t].name + "]",
                           {c.width, ops[t].kernel * c.width}});
      }
    }
    out_shape[cell] = c.concat_output ? std::pair{c.width * intermediates, p_mid} : std::pair{c.width, p_mid};
  }
  std::sort(weights.begin(), weights.end(), [](const ParamInfo& x, const ParamInfo& y) {
    return std::tie(x.cell, x.node, x.source, x.op) < std::tie(y.cell, y.node, y.source, y.op);
  });
  layout_ = stems;
  layout_.insert(layout_.end(), weights.begin(), weights.end());
  const std::size_t last = c.cells - 1;
  for (std::size_t s = 0; s < graph_.nodes(); ++s) {
    layout_.push_back({ParamInfo::Kind::Head, last, s, 0, 0, "head" + std::to_string(s),
                       {shapes_[last][s].first, shapes_[last][s].second}});
  }

  for (std::size_t cell = 0; cell < c.cells; ++cell) {
    stem_index_[cell].assign(inputs, 0);
    op_index_[cell].assign(graph_.num_edges(), {});
    for (std::size_t e = 0; e < graph_.num_edges(); ++e) op_index_[cell][e].assign(graph_.ops(e).size(), std::nullopt);
  }
  head_index_.assign(graph_.nodes(), 0);
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const ParamInfo& p = layout_[i];
    switch (p.kind) {
      case ParamInfo::Kind::Stem: stem_index_[p.cell][p.node] = i; break;
      case ParamInfo::Kind::OpWeight: op_index_[p.cell][graph_.edge_index(p.source, p.node)][p.op] = i; break;
      case ParamInfo::Kind::Head: head_index_[p.node] = i; break;
    }
  }
}

std::size_t Network::stem_param(std::size_t cell, std::size_t slot) const { return stem_index_.at(cell).at(slot); }

std::optional<std::size_t> Network::op_param(std::size_t cell, std::size_t edge, std::size_t op) const {
  return op_index_.at(cell).at(edge).at(op);
}

std::size_t Network::head_param(std::size_t node) const { return head_index_.at(node); }

std::pair<std::size_t, std::size_t> Network::node_shape(std::size_t cell, std::size_t node) const {
  return shapes_.at(cell).at(node);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : layout_) n += p.shape.at(0) * p.shape.at(1);
  return n;
}

SuperNetParams Network::init_params(Rng& rng) const {
  SuperNetParams params;
  params.reserve(layout_.size());
  for (const auto& info : layout_) {
    Tensor t(info.shape);
    const double sd = info.kind == ParamInfo::Kind::Head ? config_.head_init_std : config_.init_std;
    for (double& v : t.storage()) v = sd * rng.normal();
    params.push_back(std::move(t));
  }
  return params;
}

void Network::check_params(const SuperNetParams& params) const {
  if (params.size() != layout_.size()) {
    throw ShapeError("expected " + std::to_string(layout_.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != layout_[i].shape) {
      throw ShapeError("parameter " + layout_[i].name + " has shape " + shape_string(params[i].shape()) +
                       ", expected " + shape_string(layout_[i].shape));
    }
  }
}

std::vector<Var> Network::bind(Tape& tape, const SuperNetParams& params, bool as_leaves) const {
  check_params(params);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& t : params) vars.push_back(as_leaves ? tape.leaf(t) : tape.constant(t));
  return vars;
}

ForwardResult Network::forward(std::span<const Var> params, const BoundWeights& weights, Var input) const {
  const auto& c = config_;
  if (params.size() != layout_.size()) throw ShapeError("forward: parameter count mismatch");
  const Tensor& x = input.value();
  if (x.rank() != 2 || x.rows() != c.in_channels || x.cols() != c.length) {
    throw ShapeError("forward: input shape " + shape_string(x.shape()) + ", expected (" +
                     std::to_string(c.in_channels) + "," + std::to_string(c.length) + ")");
  }
  Tape& tape = *input.tape();
  const std::size_t inputs = graph_.inputs();
  ForwardResult result;
  std::vector<Var> outputs;  // per cell
  auto source_var = [&](std::ptrdiff_t cell) { return cell < 0 ? input : outputs[static_cast<std::size_t>(cell)]; };

  for (std::size_t cell = 0; cell < c.cells; ++cell) {
    const bool reduce = types_[cell] == CellType::Reduction;
    const EdgeWeightVars& w = weights.of(types_[cell]);
    if (w.size() != graph_.num_edges()) throw ShapeError("forward: weights do not match the cell graph");
    std::vector<Var> nodes;
    const std::size_t p_in = shapes_[cell][0].second;
    for (std::size_t slot = 0; slot < inputs; ++slot) {
      Var src = source_var(static_cast<std::ptrdiff_t>(cell) - static_cast<std::ptrdiff_t>(inputs - slot));
      const std::size_t src_cols = src.value().cols();
      std::size_t stride = 1;
      if (src_cols != p_in) {
        if (strided_length(src_cols, 2) != p_in) throw ShapeError("forward: cannot align stem resolution");
        stride = 2;
      }
      const double scale = 1.0 / std::sqrt(static_cast<double>(src.value().rows()));
      nodes.push_back(ad::conv(params[stem_index_[cell][slot]], src, c.stem_kernel, c.activation, scale, stride));
    }
    for (std::size_t l = inputs; l < graph_.nodes(); ++l) {
      std::vector<Var> terms;
      for (std::size_t s = 0; s < l; ++s) {
        const std::size_t e = graph_.edge_index(s, l);
        const auto& ops = graph_.ops(e);
        if (w[e].size() != ops.size()) throw ShapeError("forward: edge weight count mismatch");
        const std::size_t stride = (reduce && s < inputs) ? 2 : 1;
        for (std::size_t t = 0; t < ops.size(); ++t) {
          if (!w[e][t].valid()) continue;
          const Operation& op = ops[t];
          Var out;
          switch (op.kind) {
            case OpKind::Zero: continue;
            case OpKind::Skip: out = stride == 1 ? nodes[s] : ad::decimate(nodes[s], stride); break;
            case OpKind::Conv: {
              const double scale = 1.0 / std::sqrt(static_cast<double>(nodes[s].value().rows()));
              out = ad::conv(params[*op_index_[cell][e][t]], nodes[s], op.kernel, c.activation, scale, stride);
              break;
            }
            case OpKind::AvgPool: out = ad::avg_pool(nodes[s], op.kernel, stride); break;
            case OpKind::MaxPool: out = ad::max_pool(nodes[s], op.kernel, stride); break;
          }
          terms.push_back(ad::scale_by(out, w[e][t]));
        }
      }
      if (terms.empty()) {
        const auto [r, cols] = shapes_[cell][l];
        nodes.push_back(tape.constant(Tensor::matrix(r, cols)));
      } else {
        nodes.push_back(ad::add_n(terms));
      }
    }
    std::span<const Var> mids(nodes.begin() + static_cast<std::ptrdiff_t>(inputs), nodes.end());
    outputs.push_back(c.concat_output ? ad::concat_rows(mids) : ad::add_n(mids));
    result.nodes.push_back(std::move(nodes));
  }

  std::vector<Var> head_terms;
  const auto& last = result.nodes.back();
  for (std::size_t s = 0; s < last.size(); ++s) head_terms.push_back(ad::inner(params[head_index_[s]], last[s]));
  result.prediction = ad::add_n(head_terms);
  return result;
}

Var Network::batch_loss(std::span<const Var> params, const BoundWeights& weights, std::span<const Sample> batch) const {
  if (batch.empty()) throw ConfigError("batch_loss: empty batch");
  Tape& tape = *params.front().tape();
  std::vector<Var> residuals;
  residuals.reserve(batch.size());
  for (const Sample& s : batch) {
    Var u = forward(params, weights, tape.constant(s.x)).prediction;
    residuals.push_back(ad::square(ad::add_scalar(u, -s.y)));
  }
  return ad::scale(ad::add_n(residuals), 0.5 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Mixing weights

EdgeWeightVars softmax_weight_vars(Tape& tape, const CellGraph& graph, const EdgeValues& beta,
                                   const std::vector<std::vector<bool>>* active, std::vector<Var>* beta_leaves) {
  if (beta.size() != graph.num_edges()) throw ShapeError("softmax weights: beta/edge count mismatch");
  EdgeWeightVars out(graph.num_edges());
  for (std::size_t e = 0; e < graph.num_edges(); ++e) {
    const std::size_t r = graph.ops(e).size();
    if (beta[e].size() != r) throw ShapeError("softmax weights: beta/op count mismatch");
    std::vector<Var> logits;
    std::vector<std::size_t> slots;
    for (std::size_t t = 0; t < r; ++t) {
      Var v = beta_leaves ? tape.leaf(Tensor::scalar(beta[e][t])) : tape.constant(Tensor::scalar(beta[e][t]));
      if (beta_leaves) beta_leaves->push_back(v);
      if (active && !(*active)[e][t]) continue;
      logits.push_back(v);
      slots.push_back(t);
    }
    out[e].assign(r, Var());
    if (logits.empty()) continue;
    Var alpha = ad::softmax(ad::stack(logits));
    for (std::size_t i = 0; i < slots.size(); ++i) out[e][slots[i]] = ad::index(alpha, i);
  }
  return out;
}

EdgeWeightVars fixed_weight_vars(Tape& tape, const CellGraph& graph, const EdgeValues& weights,
                                 std::vector<Var>* leaves) {
  if (weights.size() != graph.num_edges()) throw ShapeError("fixed weights: edge count mismatch");
  EdgeWeightVars out(graph.num_edges());
  for (std::size_t e = 0; e < graph.num_edges(); ++e) {
    if (weights[e].size() != graph.ops(e).size()) throw ShapeError("fixed weights: op count mismatch");
    for (double w : weights[e]) {
      Var v = leaves ? tape.leaf(Tensor::scalar(w)) : tape.constant(Tensor::scalar(w));
      if (leaves) leaves->push_back(v);
      out[e].push_back(v);
    }
  }
  return out;
}

EdgeWeightVars gate_weight_vars(Tape& tape, const CellGraph& graph, const EdgeValues& beta,
                                const GateSampling& sampling, Rng* rng, const std::vector<std::vector<bool>>* active,
                                std::vector<Var>* beta_leaves, EdgeValues* sampled) {
  GateState probe{0.0, sampling.tau, sampling.a, sampling.b};
  probe.validate();
  if (!sampling.deterministic && rng == nullptr) throw ConfigError("gate sampling needs an RNG");
  if (beta.size() != graph.num_edges()) throw ShapeError("gate weights: beta/edge count mismatch");
  EdgeWeightVars out(graph.num_edges());
  if (sampled) *sampled = make_edge_values(graph, 0.0);
  for (std::size_t e = 0; e < graph.num_edges(); ++e) {
    const std::size_t r = graph.ops(e).size();
    if (beta[e].size() != r) throw ShapeError("gate weights: beta/op count mismatch");
    out[e].assign(r, Var());
    for (std::size_t t = 0; t < r; ++t) {
      Var b = beta_leaves ? tape.leaf(Tensor::scalar(beta[e][t])) : tape.constant(Tensor::scalar(beta[e][t]));
      if (beta_leaves) beta_leaves->push_back(b);
      if (active && !(*active)[e][t]) continue;
      const double delta = sampling.deterministic ? 0.5 : rng->uniform_open();
      out[e][t] = gate_var(b, delta, sampling.tau, sampling.a, sampling.b);
      if (sampled) (*sampled)[e][t] = out[e][t].value()[0];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double train_loss(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.empty()) throw ConfigError("train_loss: empty batch");
  if (predictions.size() != targets.size()) throw ConfigError("train_loss: predictions/targets size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double r = predictions[i] - targets[i];
    s += r * r;
  }
  return s / (2.0 * static_cast<double>(predictions.size()));
}

void gd_step(SuperNetParams& params, std::span<const Tensor> grads, double eta) {
  if (eta < 0.0) throw ConfigError("gd_step: negative learning rate");
  if (grads.size() != params.size()) throw ShapeError("gd_step: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) throw ShapeError("gd_step: gradient shape mismatch for tensor " + std::to_string(i));
    for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= eta * grads[i][j];
  }
}

}  // namespace prdk
