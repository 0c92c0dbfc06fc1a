// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "prdk/gates.hpp"
#include "prdk/pruner.hpp"
#include "prdk/search.hpp"
#include "prdk/serialize.hpp"
#include "prdk/theory.hpp"

using namespace prdk;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor unit_input(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor x = oracle::random_matrix(rows, cols, rng);
  double n = 0.0;
  for (double v : x.storage()) n += v * v;
  for (double& v : x.storage()) v /= std::sqrt(n);
  return x;
}

EdgeValues unit_weights(const CellGraph& g, Rng& rng) {
  EdgeValues w = make_edge_values(g, 0.0);
  for (auto& e : w)
    for (double& v : e) v = rng.uniform();
  return w;
}

// ---------------------------------------------------------------- 1. gates
Outcome gate_law() {
  Rng rng(101);
  const double a = kDefaultStretchLow, b = kDefaultStretchHigh;
  std::size_t violations = 0, checked = 0;
  std::vector<GateState> states;
  for (int i = 0; i < 10000; ++i) {
    const GateState s{rng.uniform() * 12.0 - 6.0, std::exp(std::log(0.1) + rng.uniform() * std::log(100.0)), a, b};
    states.push_back(s);
    const GateSample g = sample_gate(s, rng);
    const double clipped = std::clamp(g.stretched, 0.0, 1.0);
    // g != 0 exactly when ln(d / (1 - d)) exceeds tau ln(-a / b) - beta
    const double margin = std::log(g.uniform / (1.0 - g.uniform)) + s.beta - s.tau * std::log(-a / b);
    bool ok = g.gate == clipped && (g.gate == 0.0) == (g.stretched <= 0.0) && (g.gate == 1.0) == (g.stretched >= 1.0);
    if (std::abs(margin) > 1e-9) {
      ok = ok && (g.gate != 0.0) == (margin > 0.0);
      ++checked;
    }
    violations += !ok;
  }
  // Monte-Carlo activation frequency on a subset of the draws
  const std::size_t draws = 100000;
  std::size_t mc_fail = 0;
  double worst_z = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const GateState& s = states[i * 997];
    const double p = activation_probability(s);
    std::size_t on = 0;
    for (std::size_t d = 0; d < draws; ++d) on += sample_gate(s, rng).gate != 0.0;
    const double se = std::sqrt(std::max(p * (1.0 - p), 1e-300) / static_cast<double>(draws));
    const double err = std::abs(static_cast<double>(on) / static_cast<double>(draws) - p);
    worst_z = std::max(worst_z, err / se);
    mc_fail += err > 3.0 * se;
  }
  const GateState init{0.5, 10.0, a, b};
  std::size_t on = 0;
  for (std::size_t d = 0; d < draws; ++d) on += sample_gate(init, rng).gate != 0.0;
  const double freq = static_cast<double>(on) / static_cast<double>(draws);
  char buf[256];
  std::snprintf(buf, sizeof buf, "violations %zu/10000 (threshold form on %zu), MC misses %zu/10 (worst z %.2f), init freq %.5f",
                violations, checked, mc_fail, worst_z, freq);
  return {violations == 0 && mc_fail == 0 && freq >= 0.999, buf};
}

// ------------------------------------------------------ 2. gradient fidelity
Outcome gradient_fidelity() {
  Rng rng(202);
  NetworkConfig cfg;
  cfg.in_channels = 3;
  cfg.length = 6;
  cfg.width = 4;
  cfg.nodes = 4;
  cfg.activation = Activation::Softplus;
  cfg.ops = theoretical_ops();
  const Network net(cfg);
  SuperNetParams params = net.init_params(rng);
  const EdgeValues w = unit_weights(net.graph(), rng);
  std::vector<Sample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({unit_input(3, 6, rng), rng.normal()});

  Tape tape;
  auto p = net.bind(tape, params, true);
  Var loss = net.batch_loss(p, {fixed_weight_vars(tape, net.graph(), w), {}}, batch);
  auto g = tape.backward(loss);

  // oracle: F = mean of per-sample losses
  std::vector<Tensor> oracle_grad;
  for (const auto& s : batch) {
    auto gi = oracle::chain_rule_gradients(net, params, w, s.x, s.y);
    if (oracle_grad.empty()) {
      oracle_grad = std::move(gi);
      continue;
    }
    for (std::size_t i = 0; i < gi.size(); ++i)
      for (std::size_t j = 0; j < gi[i].size(); ++j) oracle_grad[i][j] += gi[i][j];
  }
  const double n = static_cast<double>(batch.size());
  auto value = [&](const SuperNetParams& ps) {
    Tape t;
    auto q = net.bind(t, ps, false);
    return net.batch_loss(q, {fixed_weight_vars(t, net.graph(), w), {}}, batch).value().item();
  };
  // relative error with a floor so exactly-zero entries compare absolutely
  auto rel = [](double x, double y) { return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-6}); };
  double worst_fd = 0.0, worst_oracle = 0.0;
  std::size_t coords = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& got = g.at(p[i].id());
    for (std::size_t j = 0; j < got.size(); ++j) {
      const double h = 1e-5, x0 = params[i][j];
      params[i][j] = x0 + h;
      const double fp = value(params);
      params[i][j] = x0 - h;
      const double fm = value(params);
      params[i][j] = x0;
      worst_fd = std::max(worst_fd, rel(got[j], (fp - fm) / (2.0 * h)));
      worst_oracle = std::max(worst_oracle, rel(got[j], oracle_grad[i][j] / n));
      ++coords;
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu coordinates, worst rel err vs FD %.2e, vs chain rule %.2e", coords, worst_fd,
                worst_oracle);
  return {worst_fd < 1e-5 && worst_oracle < 1e-8, buf};
}

// ---------------------------------------------------- 3. shallow vs deep
Outcome shallow_deep() {
  Rng rng(303);
  const std::size_t h = 8;
  const CellGraph g(h, theoretical_ops());
  const std::size_t conv = *g.find_op(0, OpKind::Conv);
  std::size_t bad = 0, strict = 0, strict_needed = 0;
  for (int t = 0; t < 100; ++t) {
    EdgeValues w = unit_weights(g, rng);
    // switch the second-branch conv gates off in a quarter of the trials
    if (t % 4 == 0)
      for (std::size_t s = h / 2; s + 1 < h; ++s) w[g.edge_index(s, h - 1)][conv] = 0.0;
    bool any_on = false;
    for (std::size_t s = h / 2; s + 1 < h; ++s) any_on = any_on || w[g.edge_index(s, h - 1)][conv] > 0.0;
    const ShallowDeep r = compare_shallow_deep(g, w, 1.0);
    bad += !(r.lambda_b >= r.lambda_a);
    if (any_on) {
      ++strict_needed;
      strict += r.lambda_b > r.lambda_a;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "lambda_B >= lambda_A violations %zu/100, strict %zu/%zu", bad, strict, strict_needed);
  return {bad == 0 && strict == strict_needed, buf};
}

// -------------------------------------------- 4. lambda vs contraction rate
Outcome lambda_contraction() {
  ContractionStudyConfig c;
  c.weightings = 20;
  c.nodes = 3;
  c.width = 256;
  c.samples = 4;
  c.steps = 50;
  c.eta = 3e-4;
  c.seed = 0;
  const ContractionStudy s = contraction_study(c);
  std::size_t diverged = 0;
  for (const auto& r : s.rows) diverged += r.contraction.diverged;
  char buf[160];
  std::snprintf(buf, sizeof buf, "spearman %.3f over %zu weightings (eta %g, %zu steps, %zu diverged)", s.spearman,
                s.rows.size(), c.eta, c.steps, diverged);
  return {s.spearman >= 0.6, buf};
}

// ---------------------------------------------------- 5. skip fraction
Outcome skip_fraction_losses() {
  SkipFractionConfig c;
  c.fractions = {0.0, 0.375, 0.625};
  c.trials = 5;
  c.nodes = 5;
  c.width = 32;
  c.samples = 8;
  c.steps = 200;
  c.eta = 1e-3;
  c.seed = 0;
  const auto rows = skip_fraction_experiment(c);
  bool decreasing = true;
  std::string detail = "final mean loss";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " %.3f:%.5g", rows[i].fraction, rows[i].final_mean);
    detail += buf;
    if (i > 0) decreasing = decreasing && rows[i].final_mean < rows[i - 1].final_mean;
  }
  return {decreasing, detail};
}

// ------------------------------------------------------ 6. skip dominance
std::string read_text(const std::string& path) {
  std::ifstream f(path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// The shipped toy config; data and search seeds are both set per pair.
std::pair<SearchConfig, SyntheticSpec> toy_config() {
  const Json j = Json::parse(read_text(PRDK_SOURCE_DIR "/configs/toy_search.json"));
  return {search_config_from_json(j.at("search")), synthetic_spec_from_json(j.at("data"))};
}

double last_half_slope(const SearchTrace& trace) {
  const auto& rows = trace.rows;
  const std::size_t h = rows.size() / 2;
  const double k = static_cast<double>(rows.size() - h);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = h; i < rows.size(); ++i) {
    mx += static_cast<double>(i) / k;
    my += rows[i].mean_skip_prob / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = h; i < rows.size(); ++i) {
    sxy += (static_cast<double>(i) - mx) * (rows[i].mean_skip_prob - my);
    sxx += (static_cast<double>(i) - mx) * (static_cast<double>(i) - mx);
  }
  return sxy / sxx;
}

Outcome skip_dominance() {
  auto [base, spec] = toy_config();
  std::size_t a_ok = 0, b_ok = 0;
  double frac_darts = 0.0, frac_pr = 0.0;
  const int pairs = 10;
  for (int seed = 0; seed < pairs; ++seed) {
    spec.seed = static_cast<std::uint64_t>(seed);
    const Dataset data = generate_synthetic(spec);
    SearchConfig c = base;
    c.seed = static_cast<std::uint64_t>(seed);
    c.mode = SearchMode::Darts;
    const SearchResult d = run_search(c, data);
    c.mode = SearchMode::PrDarts;
    const SearchResult p = run_search(c, data);
    a_ok += last_half_slope(d.trace) >= 0.0;
    b_ok += p.trace.rows.back().mean_skip_prob < d.trace.rows.back().mean_skip_prob;
    const Network net(c.network);
    frac_darts += skip_fraction(prune_architecture(SearchMode::Darts, net.graph(), d.arch, d.final_gates).normal);
    frac_pr += skip_fraction(prune_architecture(SearchMode::PrDarts, net.graph(), p.arch, p.final_gates).normal);
  }
  frac_darts /= pairs;
  frac_pr /= pairs;
  char buf[200];
  std::snprintf(buf, sizeof buf, "(a) %zu/10 (b) %zu/10 (c) pruned skip fraction pr %.3f vs darts %.3f", a_ok, b_ok,
                frac_pr, frac_darts);
  return {a_ok >= 7 && b_ok >= 8 && frac_pr <= frac_darts, buf};
}

// ------------------------------------------------------------- 7. Gram
Outcome gram() {
  Rng rng(707);
  double worst_asym = 0.0, worst_dev = 0.0, worst_psd = std::numeric_limits<double>::infinity();
  bool psd = true;
  for (int inst = 0; inst < 5; ++inst) {
    NetworkConfig cfg;
    cfg.in_channels = 3;
    cfg.length = 6;
    cfg.width = 6;
    cfg.nodes = 4;
    const Network net(cfg);
    const auto params = net.init_params(rng);
    const EdgeValues w = unit_weights(net.graph(), rng);
    std::vector<Sample> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({unit_input(3, 6, rng), rng.normal()});
    const GramReport r = gram_matrix(net, params, w, batch);
    std::vector<std::vector<double>> flat;
    for (const auto& s : batch) {
      std::vector<double> v;
      for (const auto& t : oracle::chain_rule_gradients(net, params, w, s.x, s.y))
        v.insert(v.end(), t.storage().begin(), t.storage().end());
      flat.push_back(std::move(v));
    }
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < flat[i].size(); ++k) dot += flat[i][k] * flat[j][k];
        worst_dev = std::max(worst_dev, std::abs(dot - r.g[i][j]) / std::max(1.0, std::abs(dot)));
      }
    worst_asym = std::max(worst_asym, r.max_asymmetry);
    const double floor = -1e-8 * r.trace / 4.0;
    psd = psd && r.min_eig >= floor;
    worst_psd = std::min(worst_psd, r.min_eig);
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "max asymmetry %.1e, min eig %.3e, max oracle deviation %.1e", worst_asym, worst_psd,
                worst_dev);
  return {worst_asym < 1e-10 && psd && worst_dev < 1e-10, buf};
}

// --------------------------------------------- 8. determinism, round trips
Outcome determinism() {
  auto [base, spec] = toy_config();
  spec.seed = 3;
  const Dataset data = generate_synthetic(spec);
  bool ok = true;
  std::string detail;
  auto fail = [&](const std::string& what) {
    ok = false;
    detail += what + "; ";
  };
  for (SearchMode mode : {SearchMode::Darts, SearchMode::PrDarts}) {
    SearchConfig c = base;
    c.mode = mode;
    c.seed = 3;
    const SearchResult r1 = run_search(c, data), r2 = run_search(c, data);
    std::ostringstream t1, t2;
    write_trace_csv(r1.trace, t1);
    write_trace_csv(r2.trace, t2);
    if (t1.str() != t2.str()) fail(std::string(search_mode_name(mode)) + " trace differs");

    const std::string state = export_state_json(state_from_result(r1));
    if (export_state_json(import_state_json(state)) != state) fail("state JSON round trip");
    const CellDocument doc = cell_document(import_state_json(state));
    const std::string cell = export_cell_json(doc);
    if (export_cell_json(import_cell_json(cell)) != cell) fail("cell JSON round trip");
    if (!(import_cell_json(cell).arch.normal == doc.arch.normal)) fail("cell import differs");
    if (export_cell_json(cell_document(import_state_json(state))) != cell) fail("prune not idempotent");
  }
  const std::string dj = export_dataset_json(data);
  const Dataset back = import_dataset_json(dj);
  bool same = back.size() == data.size() && back.seed == data.seed;
  for (std::size_t i = 0; same && i < data.size(); ++i)
    same = back.samples[i].y == data.samples[i].y && back.samples[i].x.storage() == data.samples[i].x.storage();
  if (!same || export_dataset_json(back) != dj) fail("dataset JSON round trip");
  return {ok, ok ? "traces byte-identical, state/cell/dataset JSON lossless, prune idempotent" : detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"1 gate law", 10.0, gate_law},
      {"2 gradient fidelity", 30.0, gradient_fidelity},
      {"3 shallow/deep ordering", 1.0, shallow_deep},
      {"4 lambda/contraction ordering", 300.0, lambda_contraction},
      {"5 skip-fraction losses", 300.0, skip_fraction_losses},
      {"6 skip dominance", 900.0, skip_dominance},
      {"7 Gram matrix", 30.0, gram},
      {"8 determinism and round trips", 60.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s  criterion %s: %s [%.1fs, limit %.0fs%s]\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                c.limit_s, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
