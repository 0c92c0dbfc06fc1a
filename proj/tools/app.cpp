#include "app.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "prdk/dataio.hpp"
#include "prdk/error.hpp"
#include "prdk/parallel.hpp"
#include "prdk/pruner.hpp"
#include "prdk/search.hpp"
#include "prdk/serialize.hpp"
#include "prdk/theory.hpp"

namespace prdk::cli {

namespace fs = std::filesystem;

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, md.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

void atomic_write(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) {
      f.close();
      fs::remove(tmp);
      throw Error("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::size_t thread_cap() {
  const char* env = std::getenv("PRDK_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long long v = std::strtoll(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("PRDK_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(v);
}

namespace {

constexpr std::array kTheoryModes{"lambda", "gram", "contraction", "shallow-deep", "sensitivity", "skipfrac"};

std::string read_file(const fs::path& path, std::string_view what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(std::string(what) + " not found or unreadable: " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Top-level config document shared by every subcommand.
struct ConfigFile {
  Json root = Json::object();
  fs::path dir;

  const Json* section(const char* key) const {
    const auto it = root.find(key);
    return it == root.end() ? nullptr : &*it;
  }
};

ConfigFile load_config(const std::string& path) {
  ConfigFile c;
  if (path.empty()) return c;
  const std::string text = read_file(path, "config file");
  try {
    c.root = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  json_reject_unknown(c.root, {"search", "data", "dataset", "theory"}, "config");
  c.dir = fs::path(path).parent_path();
  return c;
}

std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

/// Collects output files of one run and writes them with the manifest last.
class RunWriter {
 public:
  RunWriter(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {}

  void add_input(const std::string& name, std::string_view content) {
    inputs_.push_back({{"name", name}, {"sha1", git_blob_sha1(content)}, {"bytes", content.size()}});
  }
  void write(const std::string& file, std::string_view content) {
    atomic_write(dir_ / file, content);
    outputs_.push_back({{"file", file}, {"sha1", git_blob_sha1(content)}, {"bytes", content.size()}});
  }
  /// The id depends only on the command, resolved config and input contents.
  std::string finish(const Json& config) {
    const Json hashed = {{"command", command_}, {"config", config}, {"inputs", inputs_}};
    const std::string hash = git_blob_sha1(hashed.dump());
    const Json manifest = {{"schema_version", kSchemaVersion},
                           {"kind", "manifest"},
                           {"command", command_},
                           {"run_id", hash.substr(0, 12)},
                           {"input_hash", hash},
                           {"config", config},
                           {"inputs", inputs_},
                           {"outputs", outputs_}};
    atomic_write(dir_ / "manifest.json", manifest.dump(2) + "\n");
    return hash;
  }

 private:
  fs::path dir_;
  std::string command_;
  Json inputs_ = Json::array();
  Json outputs_ = Json::array();
};

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const ConfigFile cf = load_config(a.config);
  SyntheticSpec spec;
  if (const Json* d = cf.section("data")) spec = synthetic_spec_from_json(*d);
  if (a.seed) spec.seed = *a.seed;
  const Dataset data = generate_synthetic(spec);
  std::string bin;
  {
    // save_binary writes a path; stage it next to the output and read it back
    fs::create_directories(a.out);
    const fs::path staged = fs::path(a.out) / "data.bin.tmp";
    save_binary(data, staged);
    bin = read_file(staged, "staged dataset");
    fs::remove(staged);
  }
  RunWriter w(a.out, "gen-data");
  w.write("data.bin", bin);
  w.write("data.json", export_dataset_json(data));
  const std::string id = w.finish({{"data", to_json(spec)}});
  out << "wrote " << data.size() << " samples to " << a.out << " (run " << id.substr(0, 12) << ")\n";
  return kExitOk;
}

// ------------------------------------------------------------------ search

struct SearchArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::size_t trials = 1;
};

struct SearchInputs {
  SearchConfig config;
  SyntheticSpec spec;
  std::optional<std::string> dataset_name;
  std::string dataset_bytes;
  Dataset data;
};

SearchInputs resolve_search(const SearchArgs& a) {
  const ConfigFile cf = load_config(a.config);
  SearchInputs in;
  if (const Json* s = cf.section("search")) in.config = search_config_from_json(*s);
  if (const Json* d = cf.section("data")) in.spec = synthetic_spec_from_json(*d);
  if (a.seed) in.config.seed = *a.seed;
  if (a.mode) in.config.mode = search_mode_from_name(*a.mode);
  in.config.validate();
  if (const Json* ds = cf.section("dataset")) {
    if (!ds->is_string()) throw ConfigError("'dataset' must be a path string");
    const fs::path p = cf.dir / ds->get<std::string>();
    in.dataset_name = ds->get<std::string>();
    in.dataset_bytes = read_file(p, "dataset");
    in.data = load_binary(p, {.normalize = false,
                              .expected_shape = std::pair{in.config.network.in_channels, in.config.network.length}});
  } else {
    in.spec.channels = in.config.network.in_channels;
    in.spec.length = in.config.network.length;
    in.data = generate_synthetic(in.spec);
  }
  return in;
}

Json search_config_snapshot(const SearchInputs& in) {
  Json c = {{"search", to_json(in.config)}};
  if (in.dataset_name) c["dataset"] = *in.dataset_name;
  else c["data"] = to_json(in.spec);
  return c;
}

std::string run_one_search(const SearchInputs& in, const SearchConfig& config, const fs::path& dir) {
  const SearchResult r = run_search(config, in.data);
  std::ostringstream trace;
  write_trace_csv(r.trace, trace);
  SearchInputs snap = in;
  snap.config = config;
  RunWriter w(dir, "search");
  if (in.dataset_name) w.add_input(*in.dataset_name, in.dataset_bytes);
  w.write("trace.csv", trace.str());
  w.write("state.json", export_state_json(state_from_result(r)));
  return w.finish(search_config_snapshot(snap));
}

int cmd_search(const SearchArgs& a, std::ostream& out) {
  if (a.trials < 1) throw ConfigError("--trials must be at least 1");
  const SearchInputs in = resolve_search(a);
  if (a.trials == 1) {
    const std::string id = run_one_search(in, in.config, a.out);
    out << "search finished: " << a.out << " (run " << id.substr(0, 12) << ")\n";
    return kExitOk;
  }
  std::vector<std::string> ids(a.trials);
  std::vector<std::string> dirs(a.trials);
  for (std::size_t t = 0; t < a.trials; ++t) {
    std::ostringstream name;
    name << "trial_" << std::setw(3) << std::setfill('0') << t;
    dirs[t] = name.str();
  }
  parallel_for(a.trials, thread_cap(), [&](std::size_t t) {
    SearchConfig c = in.config;
    c.seed = derive_seed(in.config.seed, t);
    ids[t] = run_one_search(in, c, fs::path(a.out) / dirs[t]);
  });
  RunWriter w(a.out, "search-sweep");
  Json trials = Json::array();
  for (std::size_t t = 0; t < a.trials; ++t) {
    trials.push_back({{"dir", dirs[t]}, {"input_hash", ids[t]}});
    w.add_input(dirs[t] + "/manifest.json", ids[t]);
  }
  Json snap = search_config_snapshot(in);
  snap["trials"] = trials;
  w.finish(snap);
  out << "sweep of " << a.trials << " searches finished: " << a.out << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- prune

struct PruneArgs {
  std::string state;
  std::string out;
  std::size_t keep = 2;
};

int cmd_prune(const PruneArgs& a, std::ostream& out) {
  if (a.keep < 1) throw ConfigError("--keep must be at least 1");
  const std::string text = read_file(a.state, "state file");
  const SearchState s = import_state_json(text);
  const CellDocument doc = cell_document(s, a.keep);
  RunWriter w(a.out, "prune");
  w.add_input("state.json", text);
  w.write("cell.json", export_cell_json(doc));
  w.write("cell.dot", export_dot(doc.arch.normal, "normal"));
  if (doc.arch.reduction) w.write("cell_reduction.dot", export_dot(*doc.arch.reduction, "reduction"));
  const std::string id = w.finish({{"keep", a.keep}});
  out << "normal cell skip fraction " << skip_fraction(doc.arch.normal) << " (run " << id.substr(0, 12) << ")\n";
  return kExitOk;
}

// ------------------------------------------------------------------ theory

/// Shared knobs of the lambda, gram, shallow-deep and sensitivity modes.
struct TheoryOptions {
  std::size_t nodes = 4;
  std::size_t width = 16;
  std::size_t in_channels = 4;
  std::size_t length = 8;
  std::size_t samples = 4;
  std::size_t trials = 1;
  std::string weights = "random";  // random | zeros | ones
  std::optional<std::size_t> upper;
  double eps = 1e-3;
  Activation activation = Activation::Softplus;
  std::uint64_t seed = 0;
};

TheoryOptions theory_defaults(std::string_view mode) {
  TheoryOptions o;
  if (mode == "lambda") o.trials = 10;
  if (mode == "shallow-deep") {
    o.nodes = 8;
    o.trials = 100;
  }
  if (mode == "sensitivity") o.samples = 8;
  return o;
}

Json to_json(const TheoryOptions& o) {
  Json j = {{"nodes", o.nodes},     {"width", o.width},     {"in_channels", o.in_channels},
            {"length", o.length},   {"samples", o.samples}, {"trials", o.trials},
            {"weights", o.weights}, {"eps", o.eps},         {"activation", activation_name(o.activation)},
            {"seed", o.seed}};
  j["upper"] = o.upper ? Json(*o.upper) : Json(nullptr);
  return j;
}

TheoryOptions theory_options_from_json(const Json& j, TheoryOptions o) {
  json_reject_unknown(j,
                      {"nodes", "width", "in_channels", "length", "samples", "trials", "weights", "upper", "eps",
                       "activation", "seed"},
                      "theory");
  json_read(j, "nodes", o.nodes);
  json_read(j, "width", o.width);
  json_read(j, "in_channels", o.in_channels);
  json_read(j, "length", o.length);
  json_read(j, "samples", o.samples);
  json_read(j, "trials", o.trials);
  json_read(j, "weights", o.weights);
  if (o.weights != "random" && o.weights != "zeros" && o.weights != "ones")
    throw ConfigError("'weights' must be random, zeros or ones");
  if (j.contains("upper") && !j["upper"].is_null()) {
    std::size_t u = 0;
    json_read(j, "upper", u);
    o.upper = u;
  }
  json_read(j, "eps", o.eps);
  if (j.contains("activation")) {
    std::string a;
    json_read(j, "activation", a);
    o.activation = activation_from_name(a);
  }
  json_read(j, "seed", o.seed);
  if (o.trials < 1) throw ConfigError("'trials' must be at least 1");
  return o;
}

NetworkConfig theory_network(const TheoryOptions& o) {
  NetworkConfig nc;
  nc.in_channels = o.in_channels;
  nc.length = o.length;
  nc.width = o.width;
  nc.nodes = o.nodes;
  nc.activation = o.activation;
  return nc;
}

Dataset theory_data(const TheoryOptions& o) {
  return generate_synthetic({.n = o.samples,
                             .channels = o.in_channels,
                             .length = o.length,
                             .labels = LabelModel::NonlinearTeacher,
                             .seed = o.seed});
}

/// Non-zero ops get the configured weight; zero ops always get 0.
EdgeValues theory_weights(const CellGraph& graph, const std::string& kind, Rng& rng) {
  EdgeValues w = make_edge_values(graph, 0.0);
  for (std::size_t e = 0; e < w.size(); ++e)
    for (std::size_t t = 0; t < w[e].size(); ++t) {
      if (graph.ops(e)[t].kind == OpKind::Zero) continue;
      w[e][t] = kind == "random" ? rng.uniform() : kind == "ones" ? 1.0 : 0.0;
    }
  return w;
}

struct TheoryOutput {
  std::string csv;
  Json report;
};

Json empty_report(std::string_view mode) {
  return {{"schema_version", kSchemaVersion},
          {"kind", "theory_report"},
          {"mode", mode},
          {"lambda_formula", nullptr},
          {"gram_min_eig", nullptr},
          {"empirical_contraction", Json::array()},
          {"verdicts", Json::object()},
          {"metadata", {{"c_sigma", 1.0}, {"uncomputed_constants", {"c_m", "c_eta", "c_w0"}}}}};
}

TheoryOutput theory_lambda(const TheoryOptions& o) {
  const Dataset data = theory_data(o);
  const KminReport k = lambda_min_K(data.samples);
  const CellGraph graph(o.nodes, theoretical_ops());
  Rng rng(derive_seed(o.seed, 2));
  std::ostringstream csv;
  csv << "trial,lambda,lambda_printed_kmin\n";
  TheoryOutput r{{}, empty_report("lambda")};
  bool nonnegative = true;
  for (std::size_t t = 0; t < o.trials; ++t) {
    const EdgeValues w = theory_weights(graph, o.weights, rng);
    const double sym = lambda_theorem1(graph, w, k.symmetric, 1.0, o.upper);
    const double printed = lambda_theorem1(graph, w, k.printed, 1.0, o.upper);
    if (t == 0) r.report["lambda_formula"] = sym;
    nonnegative = nonnegative && sym >= 0.0;
    csv << t << ',' << csv_number(sym) << ',' << csv_number(printed) << '\n';
  }
  r.report["verdicts"]["lambda_nonnegative"] = nonnegative;
  r.report["metadata"]["kmin_symmetric"] = k.symmetric;
  r.report["metadata"]["kmin_printed"] = k.printed;
  r.csv = csv.str();
  return r;
}

TheoryOutput theory_gram(const TheoryOptions& o) {
  const Dataset data = theory_data(o);
  const Network net(theory_network(o));
  Rng init(derive_seed(o.seed, 1)), rng(derive_seed(o.seed, 2));
  const auto params = net.init_params(init);
  const EdgeValues w = theory_weights(net.graph(), o.weights, rng);
  const GramReport g = gram_matrix(net, params, w, data.samples, thread_cap());
  std::ostringstream csv;
  csv << "i,j,value\n";
  for (std::size_t i = 0; i < g.g.size(); ++i)
    for (std::size_t j = 0; j < g.g.size(); ++j) csv << i << ',' << j << ',' << csv_number(g.g[i][j]) << '\n';
  TheoryOutput r{csv.str(), empty_report("gram")};
  const double n = static_cast<double>(g.g.size());
  r.report["gram_min_eig"] = g.min_eig;
  r.report["verdicts"]["symmetric"] = g.max_asymmetry < 1e-10;
  r.report["verdicts"]["psd"] = g.min_eig >= -1e-8 * g.trace / n;
  r.report["metadata"]["max_asymmetry"] = g.max_asymmetry;
  r.report["metadata"]["trace"] = g.trace;
  r.report["metadata"]["lambda_formula_symmetric_kmin"] =
      lambda_theorem1(net.graph(), w, lambda_min_K(data.samples).symmetric, 1.0, o.upper);
  return r;
}

TheoryOutput theory_contraction(const ContractionStudyConfig& c) {
  const ContractionStudy s = contraction_study(c);
  std::ostringstream csv;
  csv << "weighting,lambda,geometric_mean,max_ratio,diverged\n";
  bool any_diverged = false;
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& row = s.rows[i];
    any_diverged = any_diverged || row.contraction.diverged;
    csv << i << ',' << csv_number(row.lambda) << ',' << csv_number(row.contraction.geometric_mean) << ','
        << csv_number(row.contraction.max_ratio) << ',' << int(row.contraction.diverged) << '\n';
  }
  TheoryOutput r{csv.str(), empty_report("contraction")};
  r.report["lambda_formula"] = s.rows.front().lambda;
  r.report["empirical_contraction"] = s.rows.front().contraction.ratios;
  r.report["verdicts"]["positive_rank_correlation"] = s.spearman > 0.0;
  r.report["verdicts"]["none_diverged"] = !any_diverged;
  r.report["metadata"]["spearman"] = s.spearman;
  r.report["metadata"]["kmin_symmetric"] = s.kmin;
  return r;
}

TheoryOutput theory_shallow_deep(const TheoryOptions& o) {
  const Dataset data = theory_data(o);
  const double kmin = lambda_min_K(data.samples).symmetric;
  const CellGraph graph(o.nodes, theoretical_ops());
  Rng rng(derive_seed(o.seed, 2));
  std::ostringstream csv;
  csv << "trial,lambda_a,lambda_b,verdict\n";
  TheoryOutput r{{}, empty_report("shallow-deep")};
  bool all = true;
  for (std::size_t t = 0; t < o.trials; ++t) {
    const ShallowDeep sd = compare_shallow_deep(graph, theory_weights(graph, o.weights, rng), kmin);
    if (t == 0) r.report["lambda_formula"] = sd.lambda_a;
    all = all && sd.verdict;
    csv << t << ',' << csv_number(sd.lambda_a) << ',' << csv_number(sd.lambda_b) << ',' << int(sd.verdict) << '\n';
  }
  r.report["verdicts"]["verdict"] = all;
  r.report["metadata"]["kmin_symmetric"] = kmin;
  r.csv = csv.str();
  return r;
}

TheoryOutput theory_sensitivity(const TheoryOptions& o) {
  const Dataset data = theory_data(o);
  const Network net(theory_network(o));
  Rng init(derive_seed(o.seed, 1)), rng(derive_seed(o.seed, 2));
  const auto params = net.init_params(init);
  const EdgeValues g = theory_weights(net.graph(), o.weights, rng);
  const auto probes = gate_sensitivity(net, params, g, data.samples, o.eps);
  std::ostringstream csv;
  csv << "edge,op,name,analytic,forward\n";
  double skip_sum = 0.0;
  std::size_t skip_n = 0;
  for (const auto& p : probes) {
    csv << p.edge << ',' << p.op << ',' << net.graph().ops(p.edge)[p.op].name << ',' << csv_number(p.analytic) << ','
        << csv_number(p.forward) << '\n';
    if (p.kind == OpKind::Skip) {
      skip_sum += p.analytic;
      ++skip_n;
    }
  }
  TheoryOutput r{csv.str(), empty_report("sensitivity")};
  const double mean = skip_n ? skip_sum / static_cast<double>(skip_n) : 0.0;
  r.report["verdicts"]["skip_derivative_nonpositive"] = mean <= 0.0;
  r.report["metadata"]["mean_skip_derivative"] = mean;
  return r;
}

TheoryOutput theory_skipfrac(const SkipFractionConfig& c) {
  const auto rows = skip_fraction_experiment(c);
  std::ostringstream csv;
  csv << "step";
  for (const auto& row : rows) {
    std::ostringstream col;
    col << std::fixed << std::setprecision(3) << row.fraction;
    csv << ",skip_" << col.str();
  }
  csv << '\n';
  for (std::size_t k = 0; k <= c.steps; ++k) {
    csv << k;
    for (const auto& row : rows) csv << ',' << csv_number(row.mean_curve[k]);
    csv << '\n';
  }
  TheoryOutput r{csv.str(), empty_report("skipfrac")};
  bool decreasing = true;
  Json finals = Json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    finals.push_back({{"fraction", rows[i].fraction}, {"skips", rows[i].skips}, {"final_mean", rows[i].final_mean}});
    if (i > 0) decreasing = decreasing && rows[i].final_mean < rows[i - 1].final_mean;
  }
  r.report["verdicts"]["final_loss_decreasing"] = decreasing;
  r.report["metadata"]["final_losses"] = finals;
  return r;
}

struct TheoryArgs {
  std::string mode;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
};

int cmd_theory(const TheoryArgs& a, std::ostream& out) {
  if (std::find(kTheoryModes.begin(), kTheoryModes.end(), a.mode) == kTheoryModes.end())
    throw ConfigError("unknown theory mode '" + a.mode + "'");
  const ConfigFile cf = load_config(a.config);
  const Json empty = Json::object();
  const Json& section = cf.section("theory") ? *cf.section("theory") : empty;
  TheoryOutput r;
  Json snapshot;
  if (a.mode == "contraction") {
    ContractionStudyConfig c = contraction_study_config_from_json(section);
    if (a.seed) c.seed = *a.seed;
    if (a.trials) c.weightings = *a.trials;
    c.threads = thread_cap();
    r = theory_contraction(c);
    snapshot = to_json(c);
    snapshot.erase("threads");
  } else if (a.mode == "skipfrac") {
    SkipFractionConfig c = skip_fraction_config_from_json(section);
    if (a.seed) c.seed = *a.seed;
    if (a.trials) c.trials = *a.trials;
    c.threads = thread_cap();
    r = theory_skipfrac(c);
    snapshot = to_json(c);
    snapshot.erase("threads");
  } else {
    TheoryOptions o = theory_options_from_json(section, theory_defaults(a.mode));
    if (a.seed) o.seed = *a.seed;
    if (a.trials) o.trials = std::max<std::size_t>(1, *a.trials);
    if (a.mode == "lambda") r = theory_lambda(o);
    else if (a.mode == "gram") r = theory_gram(o);
    else if (a.mode == "shallow-deep") r = theory_shallow_deep(o);
    else r = theory_sensitivity(o);
    snapshot = to_json(o);
  }
  std::string file = a.mode + ".csv";
  RunWriter w(a.out, "theory");
  w.write(file, r.csv);
  w.write("report.json", r.report.dump(2) + "\n");
  w.finish({{"mode", a.mode}, {"theory", snapshot}});
  out << a.mode << ": wrote " << (fs::path(a.out) / file).string() << '\n';
  for (const auto& [k, v] : r.report["verdicts"].items()) out << "  " << k << " = " << v.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Architecture search with gated operations, pruning and convergence diagnostics", "prdk"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset (data.bin, data.json)");
  gen_cmd->add_option("--config", gen.config, "JSON config; reads the \"data\" section");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed (overrides the config)");

  SearchArgs search;
  auto* search_cmd = app.add_subcommand("search", "Run an architecture search (trace.csv, state.json)");
  search_cmd->add_option("--config", search.config, "JSON config with \"search\" and \"data\" or \"dataset\"");
  search_cmd->add_option("--out", search.out, "Output directory")->required();
  search_cmd->add_option("--seed", search.seed, "Search seed (overrides the config)");
  search_cmd->add_option("--mode", search.mode, "darts or pr-darts (overrides the config)");
  search_cmd->add_option("--trials", search.trials, "Independent seeded runs, one subdirectory each");

  PruneArgs prune;
  auto* prune_cmd = app.add_subcommand("prune", "Keep the top operations per node (cell.json, cell.dot)");
  prune_cmd->add_option("state", prune.state, "state.json written by search")->required();
  prune_cmd->add_option("--out", prune.out, "Output directory")->required();
  prune_cmd->add_option("--keep", prune.keep, "Operations kept per node")->capture_default_str();

  TheoryArgs theory;
  auto* theory_cmd = app.add_subcommand("theory", "Convergence diagnostics (<mode>.csv, report.json)");
  theory_cmd->add_option("--mode", theory.mode, "lambda, gram, contraction, shallow-deep, sensitivity or skipfrac")
      ->required();
  theory_cmd->add_option("--config", theory.config, "JSON config; reads the \"theory\" section");
  theory_cmd->add_option("--out", theory.out, "Output directory")->required();
  theory_cmd->add_option("--seed", theory.seed, "Seed (overrides the config)");
  theory_cmd->add_option("--trials", theory.trials, "Trials or weightings (overrides the config)");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (search_cmd->parsed()) return cmd_search(search, out);
    if (prune_cmd->parsed()) return cmd_prune(prune, out);
    return cmd_theory(theory, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace prdk::cli
