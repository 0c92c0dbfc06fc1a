#include "prdk/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "prdk/error.hpp"
#include "prdk/parallel.hpp"

namespace prdk {

namespace {

double op_weight(const CellGraph& graph, const EdgeValues& w, std::size_t source, std::size_t target, OpKind kind) {
  const std::size_t e = graph.edge_index(source, target);
  const auto t = graph.find_op(e, kind);
  return t ? w.at(e).at(*t) : 0.0;
}

void check_weights(const CellGraph& graph, const EdgeValues& w) {
  if (w.size() != graph.num_edges()) throw ShapeError("weights do not match the cell graph");
  for (std::size_t e = 0; e < w.size(); ++e)
    if (w[e].size() != graph.ops(e).size()) throw ShapeError("weights do not match the cell graph");
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double lambda_theorem1(const CellGraph& graph, const EdgeValues& weights, double kmin, double c_sigma,
                       std::optional<std::size_t> upper) {
  check_weights(graph, weights);
  const std::size_t h = graph.nodes();
  if (h < 2) return 0.0;
  const std::size_t last = upper.value_or(h - 2);
  if (last > h - 2) throw ConfigError("lambda upper index must be at most h - 2");
  double sum = 0.0;
  for (std::size_t s = 0; s <= last; ++s) {
    const double c = op_weight(graph, weights, s, h - 1, OpKind::Conv);
    double term = c * c;
    for (std::size_t t = 0; t < s; ++t) {
      const double k = op_weight(graph, weights, t, s, OpKind::Skip);
      term *= k * k;
    }
    sum += term;
  }
  return 0.75 * c_sigma * kmin * sum;
}

double min_eig_2x2(double p, double r, double q) {
  return 0.5 * (p + q - std::sqrt((p - q) * (p - q) + 4.0 * r * r));
}

KminReport lambda_min_K(std::span<const Sample> samples) {
  if (samples.size() < 2) throw ConfigError("lambda_min_K needs at least two samples");
  KminReport out{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (i == j) continue;
      const double ij = dot(samples[i].x, samples[j].x);
      const double ii = dot(samples[i].x, samples[i].x);
      const double jj = dot(samples[j].x, samples[j].x);
      out.printed = std::min(out.printed, min_eig_2x2(ij, ij, jj));
      out.symmetric = std::min(out.symmetric, min_eig_2x2(ii, ij, jj));
    }
  return out;
}

Var sample_loss(const Network& net, std::span<const Var> params, const BoundWeights& weights, const Sample& sample) {
  Tape& tape = *params.front().tape();
  Var u = net.forward(params, weights, tape.constant(sample.x)).prediction;
  return ad::scale(ad::square(ad::add_scalar(u, -sample.y)), 0.5);
}

std::vector<std::vector<double>> per_sample_loss_gradients(const Network& net, const SuperNetParams& params,
                                                           const EdgeValues& weights, std::span<const Sample> batch,
                                                           std::size_t threads) {
  net.check_params(params);
  return per_sample_gradients(
      params,
      [&](Tape& tape, std::span<const Var> p, std::size_t i) {
        BoundWeights bw{fixed_weight_vars(tape, net.graph(), weights), {}};
        if (net.has_reduction()) bw.reduction = bw.normal;
        return sample_loss(net, p, bw, batch[i]);
      },
      batch.size(), threads);
}

GramReport gram_from_gradients(const std::vector<std::vector<double>>& grads) {
  const std::size_t n = grads.size();
  GramReport r;
  r.g.assign(n, std::vector<double>(n, 0.0));
  if (n == 0) return r;
  const std::size_t d = grads.front().size();
  for (const auto& g : grads)
    if (g.size() != d) throw ShapeError("gram: gradient lengths differ");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += grads[i][k] * grads[j][k];
      r.g[i][j] = s;
    }
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    r.trace += r.g[i][i];
    for (std::size_t j = 0; j < n; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.g[i][j];
      r.max_asymmetry = std::max(r.max_asymmetry, std::abs(r.g[i][j] - r.g[j][i]));
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("gram: eigensolve failed");
  r.min_eig = es.eigenvalues()(0);
  return r;
}

GramReport gram_matrix(const Network& net, const SuperNetParams& params, const EdgeValues& weights,
                       std::span<const Sample> batch, std::size_t threads) {
  return gram_from_gradients(per_sample_loss_gradients(net, params, weights, batch, threads));
}

ContractionReport measure_contraction(const Network& net, SuperNetParams params, const EdgeValues& weights,
                                      std::span<const Sample> batch, double eta, std::size_t steps) {
  if (eta < 0.0) throw ConfigError("contraction: negative learning rate");
  ContractionReport r;
  for (std::size_t k = 0; k <= steps; ++k) {
    double loss = 0.0;
    std::vector<Tensor> grads;
    try {
      Tape tape;
      auto p = net.bind(tape, params, true);
      BoundWeights bw{fixed_weight_vars(tape, net.graph(), weights), {}};
      if (net.has_reduction()) bw.reduction = bw.normal;
      Var l = net.batch_loss(p, bw, batch);
      loss = l.value().item();
      if (k < steps) {
        auto g = tape.backward(l);
        for (Var v : p) grads.push_back(g.at(v.id()));
      }
    } catch (const NumericError&) {
      r.diverged = true;
      break;
    }
    if (!r.losses.empty()) r.ratios.push_back(loss / r.losses.back());
    r.losses.push_back(loss);
    if (k < steps) gd_step(params, grads, eta);
  }
  if (!r.ratios.empty()) r.max_ratio = *std::max_element(r.ratios.begin(), r.ratios.end());
  if (r.diverged || r.losses.size() < 2) {
    r.geometric_mean = std::numeric_limits<double>::infinity();
  } else {
    r.geometric_mean =
        std::pow(r.losses.back() / r.losses.front(), 1.0 / static_cast<double>(r.losses.size() - 1));
    // ratios above one in the second half mean the run is not contracting
    std::size_t rising = 0;
    for (std::size_t i = r.ratios.size() / 2; i < r.ratios.size(); ++i) rising += r.ratios[i] > 1.0;
    r.diverged = rising * 2 > r.ratios.size() - r.ratios.size() / 2;
  }
  return r;
}

ShallowDeep compare_shallow_deep(const CellGraph& graph, const EdgeValues& gates, double kmin, double c_sigma) {
  const std::size_t h = graph.nodes();
  if (h % 2 != 0) throw ConfigError("shallow/deep comparison needs an even node count");
  ShallowDeep r;
  r.lambda_a = lambda_theorem1(graph, gates, kmin, c_sigma);
  double extra = 0.0;
  // the s = h-1 term has no edge into node h-1 and contributes nothing
  for (std::size_t s = h / 2; s + 1 < h; ++s) {
    const double c = op_weight(graph, gates, s, h - 1, OpKind::Conv);
    double term = c * c;
    for (std::size_t t = h / 2; t < s; ++t) {
      const double k = op_weight(graph, gates, t, s, OpKind::Skip);
      term *= k * k;
    }
    extra += term;
  }
  r.lambda_b = r.lambda_a + 0.75 * c_sigma * kmin * extra;
  r.verdict = r.lambda_b >= r.lambda_a;
  return r;
}

std::vector<GateProbe> gate_sensitivity(const Network& net, const SuperNetParams& params, const EdgeValues& gates,
                                        std::span<const Sample> batch, double eps) {
  const auto& graph = net.graph();
  check_weights(graph, gates);
  auto loss_at = [&](const EdgeValues& w) {
    Tape tape;
    auto p = net.bind(tape, params, false);
    BoundWeights bw{fixed_weight_vars(tape, graph, w), {}};
    if (net.has_reduction()) bw.reduction = bw.normal;
    return net.batch_loss(p, bw, batch).value().item();
  };
  Tape tape;
  auto p = net.bind(tape, params, false);
  std::vector<Var> leaves;
  BoundWeights bw{fixed_weight_vars(tape, graph, gates, &leaves), {}};
  if (net.has_reduction()) bw.reduction = bw.normal;
  Var loss = net.batch_loss(p, bw, batch);
  const double base = loss.value().item();
  const auto grads = tape.backward(loss);
  std::vector<GateProbe> out;
  std::size_t k = 0;
  for (std::size_t e = 0; e < graph.num_edges(); ++e)
    for (std::size_t t = 0; t < graph.ops(e).size(); ++t, ++k) {
      GateProbe g{e, t, graph.ops(e)[t].kind, grads.at(leaves[k].id()).item(), 0.0};
      EdgeValues moved = gates;
      moved[e][t] += eps;
      g.forward = (loss_at(moved) - base) / eps;
      out.push_back(g);
    }
  return out;
}

CellGraph skip_conv_cell(std::size_t nodes, std::size_t skips, Rng& rng) {
  const std::size_t edges = nodes * (nodes - 1) / 2;
  if (skips > edges) throw ConfigError("more skip edges than edges");
  std::vector<std::size_t> idx(edges);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < skips; ++i) std::swap(idx[i], idx[i + rng.below(edges - i)]);
  std::vector<std::vector<Operation>> ops(edges, {operation_from_name("conv3")});
  for (std::size_t i = 0; i < skips; ++i) ops[idx[i]] = {operation_from_name("skip")};
  return CellGraph(nodes, std::move(ops));
}

std::vector<SkipFractionRow> skip_fraction_experiment(const SkipFractionConfig& c) {
  if (c.nodes < 2) throw ConfigError("skip fraction experiment needs at least two nodes");
  const std::size_t edges = c.nodes * (c.nodes - 1) / 2;
  std::vector<SkipFractionRow> rows;
  for (double f : c.fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("skip fractions must lie in [0, 1]");
    SkipFractionRow row;
    row.fraction = f;
    row.skips = static_cast<std::size_t>(std::llround(f * static_cast<double>(edges)));
    row.curves.resize(c.trials);
    rows.push_back(std::move(row));
  }
  // every (fraction, trial) run is independent; results land by index
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t t = 0; t < c.trials; ++t) jobs.emplace_back(r, t);
  auto run_job = [&](std::size_t j) {
    const auto [r, t] = jobs[j];
    const std::uint64_t trial_seed = derive_seed(c.seed, t);
    const Dataset data = generate_synthetic({.n = c.samples,
                                             .channels = c.in_channels,
                                             .length = c.length,
                                             .labels = LabelModel::NonlinearTeacher,
                                             .label_scale = c.label_scale,
                                             .seed = trial_seed});
    Rng arch_rng(derive_seed(trial_seed, 1000 + r));
    NetworkConfig nc;
    nc.in_channels = c.in_channels;
    nc.length = c.length;
    nc.width = c.width;
    nc.nodes = c.nodes;
    nc.activation = c.activation;
    Network net(nc, skip_conv_cell(c.nodes, rows[r].skips, arch_rng));
    Rng init(derive_seed(trial_seed, 1));
    const auto params = net.init_params(init);
    const auto rep = measure_contraction(net, params, make_edge_values(net.graph(), 1.0), data.samples, c.eta, c.steps);
    auto curve = rep.losses;
    curve.resize(c.steps + 1, std::numeric_limits<double>::quiet_NaN());
    rows[r].curves[t] = std::move(curve);
  };
  parallel_for(jobs.size(), c.threads, run_job);
  for (auto& row : rows) {
    row.mean_curve.assign(c.steps + 1, 0.0);
    for (const auto& curve : row.curves)
      for (std::size_t k = 0; k <= c.steps; ++k) row.mean_curve[k] += curve[k] / static_cast<double>(c.trials);
    row.final_mean = row.mean_curve.back();
  }
  return rows;
}

ContractionStudy contraction_study(const ContractionStudyConfig& c) {
  if (c.weightings < 2) throw ConfigError("contraction study needs at least two weightings");
  const Dataset data = generate_synthetic({.n = c.samples,
                                           .channels = c.in_channels,
                                           .length = c.length,
                                           .labels = LabelModel::NonlinearTeacher,
                                           .seed = c.seed});
  NetworkConfig nc;
  nc.in_channels = c.in_channels;
  nc.length = c.length;
  nc.width = c.width;
  nc.nodes = c.nodes;
  nc.activation = c.activation;
  const Network net(nc);
  Rng init(derive_seed(c.seed, 1));
  const auto params = net.init_params(init);

  ContractionStudy study;
  study.kmin = lambda_min_K(data.samples).symmetric;
  Rng draw(derive_seed(c.seed, 2));
  study.rows.resize(c.weightings);
  for (auto& row : study.rows) {
    row.weights = make_edge_values(net.graph(), 0.0);
    for (std::size_t e = 0; e < row.weights.size(); ++e)
      for (std::size_t t = 0; t < row.weights[e].size(); ++t)
        if (net.graph().ops(e)[t].kind != OpKind::Zero) row.weights[e][t] = draw.uniform();
    row.lambda = lambda_theorem1(net.graph(), row.weights, study.kmin);
  }
  parallel_for(study.rows.size(), c.threads, [&](std::size_t i) {
    study.rows[i].contraction = measure_contraction(net, params, study.rows[i].weights, data.samples, c.eta, c.steps);
  });
  std::vector<double> lambdas, strength;
  for (const auto& row : study.rows) {
    lambdas.push_back(row.lambda);
    strength.push_back(1.0 - row.contraction.geometric_mean);
  }
  study.spearman = spearman(lambdas, strength);
  return study;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("spearman needs two equal-length series");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace prdk
