#include "prdk/search.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "prdk/error.hpp"

namespace prdk {

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kOpStream = 2;
constexpr std::uint64_t kGateStream = 3;
constexpr std::uint64_t kSplitStream = 4;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

EdgeValues zeros_like(const EdgeValues& v) {
  EdgeValues z = v;
  for (auto& e : z) std::fill(e.begin(), e.end(), 0.0);
  return z;
}

Dataset take(const Dataset& data, std::span<const std::size_t> idx) {
  Dataset out;
  out.seed = data.seed;
  out.normalized = data.normalized;
  for (std::size_t i : idx) out.samples.push_back(data.samples[i]);
  return out;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::string_view search_mode_name(SearchMode m) { return m == SearchMode::Darts ? "darts" : "prdarts"; }

SearchMode search_mode_from_name(std::string_view name) {
  if (name == "darts") return SearchMode::Darts;
  if (name == "prdarts" || name == "pr-darts") return SearchMode::PrDarts;
  throw ConfigError("unknown search mode '" + std::string(name) + "'");
}

void SearchConfig::validate() const {
  require(batch_size >= 1, "batch_size must be at least 1");
  require(split_ratio > 0.0 && split_ratio < 1.0, "split_ratio must lie in (0, 1)");
  require(w_lr >= 0.0 && beta_lr >= 0.0, "learning rates must be non-negative");
  require(w_momentum >= 0.0 && w_momentum < 1.0, "w_momentum must lie in [0, 1)");
  require(w_weight_decay >= 0.0 && beta_weight_decay >= 0.0, "weight decay must be non-negative");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "adam betas must lie in [0, 1)");
  require(beta_init_std >= 0.0, "beta_init_std must be non-negative");
  require(temperature.start > 0.0 && temperature.end > 0.0, "temperatures must be positive");
  require(lambda.skip >= 0.0 && lambda.non_skip >= 0.0 && lambda.path >= 0.0, "lambda values must be non-negative");
  require(network.nodes >= 2, "a cell needs at least two nodes");
  require(network.cells >= 1, "at least one cell is required");
  require(!network.ops.empty(), "the operation set is empty");
  GateState{0.0, 1.0, stretch_low, stretch_high}.validate();
}

double SearchConfig::initial_beta() const {
  if (beta_init) return *beta_init;
  return mode == SearchMode::Darts ? 0.0 : 0.5;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  if (data.size() == 0) throw ConfigError("cannot split an empty dataset");
  const std::size_t n = data.size();
  auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (n >= 2) k = std::clamp<std::size_t>(k, 1, n - 1);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);
  std::vector<std::size_t> first(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> second(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {take(data, first), take(data, second)};
}

std::vector<bool> subsample_ops(std::size_t r, std::size_t count, Rng& rng) {
  if (count < 1) throw ConfigError("ops_per_edge must be at least 1");
  std::vector<bool> mask(r, false);
  if (count >= r) {
    mask.assign(r, true);
    return mask;
  }
  std::vector<std::size_t> idx(r);
  for (std::size_t i = 0; i < r; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.below(r - i)]);
    mask[idx[i]] = true;
  }
  return mask;
}

std::vector<std::vector<bool>> subsample_edge_ops(const CellGraph& graph, std::size_t count, Rng& rng) {
  std::vector<std::vector<bool>> out;
  for (std::size_t e = 0; e < graph.num_edges(); ++e) out.push_back(subsample_ops(graph.ops(e).size(), count, rng));
  return out;
}

void write_trace_csv(const SearchTrace& trace, std::ostream& out) {
  out << kTraceHeader << '\n';
  const auto old = out.precision(17);
  for (const auto& r : trace.rows) {
    out << r.step << ',' << r.f_train << ',' << r.f_val << ',' << r.l_skip << ',' << r.l_non_skip << ',' << r.l_path
        << ',' << r.mean_skip_prob << ',' << r.mean_non_skip_prob << ',' << r.temperature << '\n';
  }
  out.precision(old);
}

EdgeValues arch_scores(SearchMode mode, const CellGraph& graph, const EdgeValues& beta, const GateParams& gp) {
  if (beta.size() != graph.num_edges()) throw ShapeError("arch_scores: beta/edge count mismatch");
  EdgeValues out(beta.size());
  for (std::size_t e = 0; e < beta.size(); ++e) {
    if (mode == SearchMode::Darts) {
      out[e] = softmax_weights(beta[e]);
    } else {
      for (double b : beta[e]) out[e].push_back(activation_probability({b, gp.tau, gp.a, gp.b}));
    }
  }
  return out;
}

ArchSummary summarize_arch(SearchMode mode, const CellGraph& graph, const ArchState& arch, const GateParams& gp) {
  ArchSummary s;
  const auto part = GroupPartition::from_graph(graph);
  const auto spine = spine_edges(graph);
  std::size_t r = 0;
  for (std::size_t e = 0; e < graph.num_edges(); ++e) r = std::max(r, graph.ops(e).size());
  double skip_sum = 0.0, non_skip_sum = 0.0;
  std::size_t skip_n = 0, non_skip_n = 0;
  for (const EdgeValues* beta : {&arch.normal, &arch.reduction}) {
    if (beta->empty()) continue;
    const EdgeValues sc = arch_scores(mode, graph, *beta, gp);
    double sk = 0.0, ns = 0.0;
    for (const auto& g : part.skip_group) sk += sc[g.edge][g.op];
    for (const auto& g : part.non_skip_group) ns += sc[g.edge][g.op];
    double path = 1.0;
    for (std::size_t e : spine) {
      double sum = 0.0;
      for (std::size_t t = 0; t < graph.ops(e).size(); ++t)
        if (graph.ops(e)[t].parameterized()) sum += sc[e][t];
      path *= sum;
    }
    s.l_skip += part.zeta * sk;
    if (r >= 2) s.l_non_skip += part.zeta / static_cast<double>(r - 1) * ns;
    s.l_path += path;
    skip_sum += sk;
    non_skip_sum += ns;
    skip_n += part.skip_group.size();
    non_skip_n += part.non_skip_group.size();
  }
  s.mean_skip = skip_n ? skip_sum / static_cast<double>(skip_n) : 0.0;
  s.mean_non_skip = non_skip_n ? non_skip_sum / static_cast<double>(non_skip_n) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------

Searcher::Searcher(SearchConfig config, Dataset train, Dataset val)
    : config_(std::move(config)),
      train_(std::move(train)),
      val_(std::move(val)),
      net_(config_.network),
      data_rng_(derive_seed(config_.seed, kDataStream)),
      op_rng_(derive_seed(config_.seed, kOpStream)),
      gate_rng_(derive_seed(config_.seed, kGateStream)) {
  config_.validate();
  if (train_.size() == 0 || val_.size() == 0) throw ConfigError("search needs non-empty train and validation sets");
  Rng init(derive_seed(config_.seed, kInitStream));
  params_ = net_.init_params(init);
  auto init_beta = [&] {
    EdgeValues b = make_edge_values(net_.graph(), config_.initial_beta());
    if (config_.beta_init_std > 0.0)
      for (auto& e : b)
        for (double& v : e) v += config_.beta_init_std * init.normal();
    return b;
  };
  arch_.normal = init_beta();
  if (net_.has_reduction()) arch_.reduction = init_beta();
  w_opt_ = std::make_unique<MomentumSgd>(SgdOptions{config_.w_momentum, config_.w_weight_decay});
  beta_opt_ = std::make_unique<Adam>(
      AdamOptions{config_.adam_beta1, config_.adam_beta2, 1e-8, config_.beta_weight_decay});
  steps_per_epoch_ = (train_.size() + config_.batch_size - 1) / config_.batch_size;
  total_steps_ = config_.epochs * steps_per_epoch_;
}

double Searcher::temperature() const {
  if (total_steps_ == 0) return config_.temperature.start;
  return anneal_temperature(config_.temperature, std::min(step_, total_steps_), total_steps_);
}

GateParams Searcher::gate_params() const { return {temperature(), config_.stretch_low, config_.stretch_high}; }

BoundWeights Searcher::arch_weights(Tape& tape, const ActiveOps* active, Rng* gates, std::vector<Var>* leaves) const {
  BoundWeights bw;
  const auto& g = net_.graph();
  const GateSampling sampling{temperature(), config_.stretch_low, config_.stretch_high, config_.deterministic_gates};
  auto make = [&](const EdgeValues& beta, const std::vector<std::vector<bool>>* mask) {
    if (config_.mode == SearchMode::Darts) return softmax_weight_vars(tape, g, beta, mask, leaves);
    return gate_weight_vars(tape, g, beta, sampling, gates, mask, leaves);
  };
  bw.normal = make(arch_.normal, active ? &active->normal : nullptr);
  if (net_.has_reduction()) bw.reduction = make(arch_.reduction, active ? &active->reduction : nullptr);
  return bw;
}

ActiveOps Searcher::draw_active() {
  const std::size_t count = config_.ops_per_edge == 0 ? std::size_t(-1) : config_.ops_per_edge;
  ActiveOps a;
  a.normal = subsample_edge_ops(net_.graph(), count, op_rng_);
  if (net_.has_reduction()) a.reduction = subsample_edge_ops(net_.graph(), count, op_rng_);
  return a;
}

BetaStep Searcher::beta_gradient(std::span<const Sample> batch, const ActiveOps* active, Rng* gates) const {
  const auto& graph = net_.graph();
  Tape tape;
  auto p = net_.bind(tape, params_, false);
  std::vector<Var> leaves;
  BoundWeights bw = arch_weights(tape, active, gates, &leaves);
  Var f_val = net_.batch_loss(p, bw, batch);
  Var objective = f_val;
  const std::size_t per_type = graph.total_ops();
  if (config_.mode == SearchMode::PrDarts) {
    const auto part = GroupPartition::from_graph(graph);
    const GateParams gp = gate_params();
    std::size_t r = 0;
    for (std::size_t e = 0; e < graph.num_edges(); ++e) r = std::max(r, graph.ops(e).size());
    const std::size_t types = net_.has_reduction() ? 2 : 1;
    for (std::size_t c = 0; c < types; ++c) {
      std::span<const Var> b(leaves.data() + c * per_type, per_type);
      if (config_.lambda.skip > 0.0)
        objective = ad::add(objective, ad::scale(l_skip_var(part, b, graph, gp), config_.lambda.skip));
      if (config_.lambda.non_skip > 0.0 && r >= 2)
        objective = ad::add(objective, ad::scale(l_non_skip_var(part, b, graph, gp, r), config_.lambda.non_skip));
      if (config_.lambda.path > 0.0)
        objective = ad::sub(objective, ad::scale(l_path_var(graph, b, gp), config_.lambda.path));
    }
  }
  const auto grads = tape.backward(objective);
  BetaStep out;
  out.f_val = f_val.value().item();
  out.objective = objective.value().item();
  auto collect = [&](const EdgeValues& beta, std::size_t offset, const std::vector<std::vector<bool>>* mask) {
    EdgeValues g = zeros_like(beta);
    std::size_t k = offset;
    for (std::size_t e = 0; e < g.size(); ++e)
      for (std::size_t t = 0; t < g[e].size(); ++t, ++k)
        if (!mask || (*mask)[e][t]) g[e][t] = grads.at(leaves[k].id()).item();
    return g;
  };
  out.grad.normal = collect(arch_.normal, 0, active ? &active->normal : nullptr);
  if (net_.has_reduction()) out.grad.reduction = collect(arch_.reduction, per_type, active ? &active->reduction : nullptr);
  return out;
}

TraceRecord Searcher::step(std::span<const Sample> train_batch, std::span<const Sample> val_batch) {
  if (train_batch.empty() || val_batch.empty()) throw ConfigError("search step needs non-empty batches");
  TraceRecord rec;
  rec.step = step_;
  rec.temperature = temperature();
  const ActiveOps active = draw_active();
  const auto& layout = net_.layout();

  // W-step on the training batch with architecture weights held fixed.
  {
    Tape tape;
    auto p = net_.bind(tape, params_, true);
    BoundWeights bw = arch_weights(tape, &active, &gate_rng_, nullptr);
    Var loss = net_.batch_loss(p, bw, train_batch);
    rec.f_train = loss.value().item();
    const auto grads = tape.backward(loss);
    std::vector<double> values, flat;
    std::vector<char> mask;
    for (std::size_t i = 0; i < p.size(); ++i) {
      bool on = true;
      const ParamInfo& info = layout[i];
      if (info.kind == ParamInfo::Kind::OpWeight) {
        const auto& m = net_.cell_type(info.cell) == CellType::Normal ? active.normal : active.reduction;
        on = m[net_.graph().edge_index(info.source, info.node)][info.op];
      }
      const Tensor& g = grads.at(p[i].id());
      values.insert(values.end(), params_[i].data().begin(), params_[i].data().end());
      flat.insert(flat.end(), g.data().begin(), g.data().end());
      mask.insert(mask.end(), g.size(), on ? 1 : 0);
    }
    double lr = config_.w_lr;
    if (config_.w_cosine && total_steps_ > 0)
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(std::min(step_, total_steps_)) /
                                  static_cast<double>(total_steps_)));
    w_opt_->step(values, flat, mask, lr);
    std::size_t k = 0;
    for (auto& t : params_)
      for (double& v : t.storage()) v = values[k++];
  }

  // Beta-step on the validation batch with W held fixed (first order).
  {
    const ArchSummary before = summarize_arch(config_.mode, net_.graph(), arch_, gate_params());
    rec.l_skip = before.l_skip;
    rec.l_non_skip = before.l_non_skip;
    rec.l_path = before.l_path;
    const BetaStep bs = beta_gradient(val_batch, &active, &gate_rng_);
    rec.f_val = bs.f_val;
    std::vector<double> values, flat;
    std::vector<char> mask;
    auto append = [&](const EdgeValues& beta, const EdgeValues& grad, const std::vector<std::vector<bool>>& m) {
      for (std::size_t e = 0; e < beta.size(); ++e)
        for (std::size_t t = 0; t < beta[e].size(); ++t) {
          values.push_back(beta[e][t]);
          flat.push_back(grad[e][t]);
          mask.push_back(m[e][t] ? 1 : 0);
        }
    };
    append(arch_.normal, bs.grad.normal, active.normal);
    if (net_.has_reduction()) append(arch_.reduction, bs.grad.reduction, active.reduction);
    beta_opt_->step(values, flat, mask, config_.beta_lr);
    std::size_t k = 0;
    for (EdgeValues* beta : {&arch_.normal, &arch_.reduction})
      for (auto& e : *beta)
        for (double& v : e) v = values[k++];
  }

  ++step_;
  if (!std::isfinite(rec.f_train) || !std::isfinite(rec.f_val))
    throw NumericError("search diverged at step " + std::to_string(rec.step));
  const ArchSummary after = summarize_arch(config_.mode, net_.graph(), arch_, gate_params());
  rec.mean_skip_prob = after.mean_skip;
  rec.mean_non_skip_prob = after.mean_non_skip;
  return rec;
}

SearchTrace Searcher::run() {
  SearchTrace trace;
  std::vector<std::size_t> tr(train_.size()), va(val_.size());
  while (step_ < total_steps_) {
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
    for (std::size_t i = 0; i < va.size(); ++i) va[i] = i;
    shuffle(tr, data_rng_);
    shuffle(va, data_rng_);
    for (std::size_t b = 0; b < steps_per_epoch_ && step_ < total_steps_; ++b) {
      std::vector<Sample> tb, vb;
      const std::size_t lo = b * config_.batch_size;
      const std::size_t hi = std::min(lo + config_.batch_size, tr.size());
      for (std::size_t i = lo; i < hi; ++i) tb.push_back(train_.samples[tr[i]]);
      for (std::size_t i = lo; i < hi; ++i) vb.push_back(val_.samples[va[i % va.size()]]);
      trace.rows.push_back(step(tb, vb));
    }
  }
  return trace;
}

SearchResult run_search(const SearchConfig& config, const Dataset& data) {
  config.validate();
  auto [train, val] = split_dataset(data, config.split_ratio, derive_seed(config.seed, kSplitStream));
  Searcher s(config, std::move(train), std::move(val));
  SearchResult out;
  out.trace = s.run();
  out.config = config;
  out.params = s.params();
  out.arch = s.arch();
  out.final_gates = s.gate_params();
  return out;
}

}  // namespace prdk
