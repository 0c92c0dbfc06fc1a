#include "prdk/serialize.hpp"

#include <algorithm>
#include <initializer_list>

#include "prdk/error.hpp"

namespace prdk {

void json_reject_unknown(const Json& j, std::initializer_list<std::string_view> keys, std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown " + std::string(what) + " key '" + k + "'");
}

namespace {

std::vector<std::string> op_names(const std::vector<Operation>& ops) {
  std::vector<std::string> names;
  for (const auto& op : ops) names.push_back(op.name);
  return names;
}

Json edge_values_json(const EdgeValues& v) {
  Json out = Json::array();
  for (const auto& e : v) out.push_back(e);
  return out;
}

EdgeValues edge_values_from(const Json& j, const CellGraph& graph, std::string_view what) {
  auto v = j.get<EdgeValues>();
  if (v.size() != graph.num_edges()) throw FormatError(std::string(what) + ": edge count does not match the network");
  for (std::size_t e = 0; e < v.size(); ++e)
    if (v[e].size() != graph.ops(e).size()) throw FormatError(std::string(what) + ": op count does not match");
  return v;
}

void check_header(const Json& j, std::string_view kind) {
  if (!j.is_object()) throw FormatError("document is not a JSON object");
  const auto v = j.find("schema_version");
  if (v == j.end() || !v->is_string()) throw FormatError("missing schema_version");
  if (v->get<std::string>() != kSchemaVersion)
    throw FormatError("unsupported schema_version '" + v->get<std::string>() + "'");
  const auto k = j.find("kind");
  if (k == j.end() || !k->is_string() || k->get<std::string>() != kind)
    throw FormatError("expected a '" + std::string(kind) + "' document");
}

Json parse(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
}

Json gate_json(const GateParams& g) { return {{"tau", g.tau}, {"a", g.a}, {"b", g.b}}; }

GateParams gate_from(const Json& j) { return {j.at("tau").get<double>(), j.at("a").get<double>(), j.at("b").get<double>()}; }

Json cell_json(const DiscreteCell& c) {
  Json nodes = Json::array();
  for (std::size_t i = 0; i < c.retained.size(); ++i) {
    Json kept = Json::array();
    for (const auto& r : c.retained[i])
      kept.push_back({{"source", r.source}, {"op", r.op}, {"name", r.name}, {"score", r.score}});
    nodes.push_back({{"node", c.inputs + i}, {"retained", kept}});
  }
  return {{"nodes", c.nodes}, {"inputs", c.inputs}, {"skip_fraction", skip_fraction(c)}, {"retained", nodes}};
}

DiscreteCell cell_from(const Json& j) {
  DiscreteCell c;
  c.nodes = j.at("nodes").get<std::size_t>();
  c.inputs = j.at("inputs").get<std::size_t>();
  for (const auto& n : j.at("retained")) {
    const auto node = n.at("node").get<std::size_t>();
    if (node != c.inputs + c.retained.size()) throw FormatError("cell nodes out of order");
    std::vector<RetainedOp> kept;
    for (const auto& r : n.at("retained")) {
      RetainedOp op;
      op.source = r.at("source").get<std::size_t>();
      op.op = r.at("op").get<std::size_t>();
      op.name = r.at("name").get<std::string>();
      op.score = r.at("score").get<double>();
      try {
        op.kind = operation_from_name(op.name).kind;
      } catch (const ConfigError& e) {
        throw FormatError(e.what());
      }
      if (op.source >= node) throw FormatError("retained source must precede its node");
      if (op.kind == OpKind::Zero) throw FormatError("zero op cannot be retained");
      kept.push_back(std::move(op));
    }
    c.retained.push_back(std::move(kept));
  }
  if (c.inputs + c.retained.size() != c.nodes) throw FormatError("cell node count mismatch");
  return c;
}

}  // namespace

Json to_json(const NetworkConfig& c) {
  return {{"in_channels", c.in_channels},
          {"length", c.length},
          {"width", c.width},
          {"nodes", c.nodes},
          {"cells", c.cells},
          {"stem_kernel", c.stem_kernel},
          {"activation", activation_name(c.activation)},
          {"ops", op_names(c.ops)},
          {"reduction", c.reduction},
          {"reduction_positions", c.reduction_positions},
          {"two_input", c.two_input},
          {"concat_output", c.concat_output},
          {"init_std", c.init_std},
          {"head_init_std", c.head_init_std}};
}

NetworkConfig network_config_from_json(const Json& j, NetworkConfig c) {
  json_reject_unknown(j,
                 {"in_channels", "length", "width", "nodes", "cells", "stem_kernel", "activation", "ops", "reduction",
                  "reduction_positions", "two_input", "concat_output", "init_std", "head_init_std"},
                 "network");
  json_read(j, "in_channels", c.in_channels);
  json_read(j, "length", c.length);
  json_read(j, "width", c.width);
  json_read(j, "nodes", c.nodes);
  json_read(j, "cells", c.cells);
  json_read(j, "stem_kernel", c.stem_kernel);
  if (j.contains("activation")) {
    std::string a;
    json_read(j, "activation", a);
    c.activation = activation_from_name(a);
  }
  if (j.contains("ops")) {
    if (!j["ops"].is_array()) throw ConfigError("'ops' must be a list of operation names");
    std::vector<std::string> names;
    for (const auto& n : j["ops"]) {
      if (!n.is_string()) throw ConfigError("'ops' must be a list of operation names");
      names.push_back(n.get<std::string>());
    }
    c.ops = ops_from_names(names);
  }
  json_read(j, "reduction", c.reduction);
  if (j.contains("reduction_positions")) {
    c.reduction_positions.clear();
    if (!j["reduction_positions"].is_array()) throw ConfigError("'reduction_positions' must be a list");
    for (const auto& p : j["reduction_positions"]) {
      if (!p.is_number_unsigned()) throw ConfigError("'reduction_positions' must hold non-negative integers");
      c.reduction_positions.push_back(p.get<std::size_t>());
    }
  }
  json_read(j, "two_input", c.two_input);
  json_read(j, "concat_output", c.concat_output);
  json_read(j, "init_std", c.init_std);
  json_read(j, "head_init_std", c.head_init_std);
  return c;
}

Json to_json(const SearchConfig& c) {
  return {{"mode", search_mode_name(c.mode)},
          {"network", to_json(c.network)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"split_ratio", c.split_ratio},
          {"ops_per_edge", c.ops_per_edge},
          {"seed", c.seed},
          {"w_lr", c.w_lr},
          {"w_momentum", c.w_momentum},
          {"w_weight_decay", c.w_weight_decay},
          {"w_cosine", c.w_cosine},
          {"beta_lr", c.beta_lr},
          {"beta_weight_decay", c.beta_weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"beta_init", c.beta_init ? Json(*c.beta_init) : Json(nullptr)},
          {"beta_init_std", c.beta_init_std},
          {"temperature",
           {{"kind", schedule_kind_name(c.temperature.kind)},
            {"start", c.temperature.start},
            {"end", c.temperature.end}}},
          {"stretch_low", c.stretch_low},
          {"stretch_high", c.stretch_high},
          {"deterministic_gates", c.deterministic_gates},
          {"lambda", {{"skip", c.lambda.skip}, {"non_skip", c.lambda.non_skip}, {"path", c.lambda.path}}}};
}

SearchConfig search_config_from_json(const Json& j, SearchConfig c) {
  json_reject_unknown(j,
                 {"mode", "network", "epochs", "batch_size", "split_ratio", "ops_per_edge", "seed", "w_lr",
                  "w_momentum", "w_weight_decay", "w_cosine", "beta_lr", "beta_weight_decay", "adam_beta1",
                  "adam_beta2", "beta_init", "beta_init_std", "temperature", "stretch_low", "stretch_high",
                  "deterministic_gates", "lambda"},
                 "search");
  if (j.contains("mode")) {
    std::string m;
    json_read(j, "mode", m);
    c.mode = search_mode_from_name(m);
  }
  if (j.contains("network")) c.network = network_config_from_json(j["network"], c.network);
  json_read(j, "epochs", c.epochs);
  json_read(j, "batch_size", c.batch_size);
  json_read(j, "split_ratio", c.split_ratio);
  json_read(j, "ops_per_edge", c.ops_per_edge);
  json_read(j, "seed", c.seed);
  json_read(j, "w_lr", c.w_lr);
  json_read(j, "w_momentum", c.w_momentum);
  json_read(j, "w_weight_decay", c.w_weight_decay);
  json_read(j, "w_cosine", c.w_cosine);
  json_read(j, "beta_lr", c.beta_lr);
  json_read(j, "beta_weight_decay", c.beta_weight_decay);
  json_read(j, "adam_beta1", c.adam_beta1);
  json_read(j, "adam_beta2", c.adam_beta2);
  if (j.contains("beta_init")) {
    if (j["beta_init"].is_null()) {
      c.beta_init.reset();
    } else {
      double b = 0.0;
      json_read(j, "beta_init", b);
      c.beta_init = b;
    }
  }
  json_read(j, "beta_init_std", c.beta_init_std);
  if (j.contains("temperature")) {
    const Json& t = j["temperature"];
    json_reject_unknown(t, {"kind", "start", "end"}, "temperature");
    if (t.contains("kind")) {
      std::string k;
      json_read(t, "kind", k);
      c.temperature.kind = schedule_kind_from_name(k);
    }
    json_read(t, "start", c.temperature.start);
    json_read(t, "end", c.temperature.end);
  }
  json_read(j, "stretch_low", c.stretch_low);
  json_read(j, "stretch_high", c.stretch_high);
  json_read(j, "deterministic_gates", c.deterministic_gates);
  if (j.contains("lambda")) {
    const Json& l = j["lambda"];
    json_reject_unknown(l, {"skip", "non_skip", "path"}, "lambda");
    json_read(l, "skip", c.lambda.skip);
    json_read(l, "non_skip", c.lambda.non_skip);
    json_read(l, "path", c.lambda.path);
  }
  return c;
}

Json to_json(const SkipFractionConfig& c) {
  return {{"fractions", c.fractions}, {"trials", c.trials},   {"nodes", c.nodes},
          {"width", c.width},         {"in_channels", c.in_channels}, {"length", c.length},
          {"samples", c.samples},     {"steps", c.steps},     {"eta", c.eta},
          {"label_scale", c.label_scale}, {"activation", activation_name(c.activation)},
          {"seed", c.seed},           {"threads", c.threads}};
}

SkipFractionConfig skip_fraction_config_from_json(const Json& j, SkipFractionConfig c) {
  json_reject_unknown(j,
                 {"fractions", "trials", "nodes", "width", "in_channels", "length", "samples", "steps", "eta",
                  "label_scale", "activation", "seed", "threads"},
                 "skipfrac");
  if (j.contains("fractions")) {
    if (!j["fractions"].is_array()) throw ConfigError("'fractions' must be a list of numbers");
    c.fractions.clear();
    for (const auto& f : j["fractions"]) {
      if (!f.is_number()) throw ConfigError("'fractions' must be a list of numbers");
      c.fractions.push_back(f.get<double>());
    }
  }
  json_read(j, "trials", c.trials);
  json_read(j, "nodes", c.nodes);
  json_read(j, "width", c.width);
  json_read(j, "in_channels", c.in_channels);
  json_read(j, "length", c.length);
  json_read(j, "samples", c.samples);
  json_read(j, "steps", c.steps);
  json_read(j, "eta", c.eta);
  json_read(j, "label_scale", c.label_scale);
  if (j.contains("activation")) {
    std::string a;
    json_read(j, "activation", a);
    c.activation = activation_from_name(a);
  }
  json_read(j, "seed", c.seed);
  json_read(j, "threads", c.threads);
  return c;
}

Json to_json(const ContractionStudyConfig& c) {
  return {{"weightings", c.weightings}, {"nodes", c.nodes},
          {"width", c.width},           {"in_channels", c.in_channels},
          {"length", c.length},         {"samples", c.samples},
          {"steps", c.steps},           {"eta", c.eta},
          {"activation", activation_name(c.activation)}, {"seed", c.seed},
          {"threads", c.threads}};
}

ContractionStudyConfig contraction_study_config_from_json(const Json& j, ContractionStudyConfig c) {
  json_reject_unknown(j,
                      {"weightings", "nodes", "width", "in_channels", "length", "samples", "steps", "eta",
                       "activation", "seed", "threads"},
                      "contraction");
  json_read(j, "weightings", c.weightings);
  json_read(j, "nodes", c.nodes);
  json_read(j, "width", c.width);
  json_read(j, "in_channels", c.in_channels);
  json_read(j, "length", c.length);
  json_read(j, "samples", c.samples);
  json_read(j, "steps", c.steps);
  json_read(j, "eta", c.eta);
  if (j.contains("activation")) {
    std::string a;
    json_read(j, "activation", a);
    c.activation = activation_from_name(a);
  }
  json_read(j, "seed", c.seed);
  json_read(j, "threads", c.threads);
  return c;
}

Json to_json(const SyntheticSpec& s) {
  return {{"n", s.n},
          {"channels", s.channels},
          {"length", s.length},
          {"labels", label_model_name(s.labels)},
          {"label_scale", s.label_scale},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j, SyntheticSpec s) {
  json_reject_unknown(j, {"n", "channels", "length", "labels", "label_scale", "seed"}, "data");
  json_read(j, "n", s.n);
  json_read(j, "channels", s.channels);
  json_read(j, "length", s.length);
  if (j.contains("labels")) {
    std::string m;
    json_read(j, "labels", m);
    s.labels = label_model_from_name(m);
  }
  json_read(j, "label_scale", s.label_scale);
  json_read(j, "seed", s.seed);
  return s;
}

std::string export_dataset_json(const Dataset& data) {
  Json samples = Json::array();
  for (const auto& s : data.samples) samples.push_back({{"x", s.x.storage()}, {"y", s.y}});
  const Json doc = {{"schema_version", kSchemaVersion}, {"kind", "dataset"},
                    {"seed", data.seed},                {"normalized", data.normalized},
                    {"channels", data.channels()},      {"length", data.length()},
                    {"samples", samples}};
  return doc.dump(2) + "\n";
}

Dataset import_dataset_json(std::string_view text) {
  const Json j = parse(text);
  check_header(j, "dataset");
  try {
    Dataset d;
    d.seed = j.at("seed").get<std::uint64_t>();
    d.normalized = j.at("normalized").get<bool>();
    const auto channels = j.at("channels").get<std::size_t>();
    const auto length = j.at("length").get<std::size_t>();
    for (const auto& s : j.at("samples")) {
      auto values = s.at("x").get<std::vector<double>>();
      if (values.size() != channels * length || values.empty())
        throw FormatError("dataset: sample " + std::to_string(d.samples.size()) + " has the wrong size");
      d.samples.push_back({Tensor({channels, length}, std::move(values)), s.at("y").get<double>()});
    }
    return d;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
}

SearchState state_from_result(const SearchResult& r) { return {r.config, r.arch, r.final_gates, r.params}; }

std::string export_state_json(const SearchState& s) {
  Network net(s.config.network);
  net.check_params(s.params);
  Json params = Json::array();
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const auto& info = net.layout()[i];
    params.push_back({{"name", info.name}, {"shape", s.params[i].shape()}, {"values", s.params[i].storage()}});
  }
  Json arch = {{"normal", edge_values_json(s.arch.normal)}};
  if (!s.arch.reduction.empty()) arch["reduction"] = edge_values_json(s.arch.reduction);
  const Json doc = {{"schema_version", kSchemaVersion},
                    {"kind", "search_state"},
                    {"config", to_json(s.config)},
                    {"gates", gate_json(s.gates)},
                    {"arch", arch},
                    {"params", params}};
  return doc.dump(2) + "\n";
}

SearchState import_state_json(std::string_view text) {
  const Json j = parse(text);
  check_header(j, "search_state");
  try {
    SearchState s;
    s.config = search_config_from_json(j.at("config"));
    s.config.validate();
    s.gates = gate_from(j.at("gates"));
    Network net(s.config.network);
    const Json& arch = j.at("arch");
    s.arch.normal = edge_values_from(arch.at("normal"), net.graph(), "arch.normal");
    if (net.has_reduction()) s.arch.reduction = edge_values_from(arch.at("reduction"), net.graph(), "arch.reduction");
    const Json& params = j.at("params");
    if (params.size() != net.layout().size()) throw FormatError("parameter count does not match the network");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& info = net.layout()[i];
      const auto shape = params[i].at("shape").get<Tensor::Shape>();
      if (shape != info.shape || params[i].at("name").get<std::string>() != info.name)
        throw FormatError("parameter " + std::to_string(i) + " does not match the network layout");
      Tensor t(shape);
      const auto values = params[i].at("values").get<std::vector<double>>();
      if (values.size() != t.size()) throw FormatError("parameter " + info.name + " has the wrong number of values");
      std::copy(values.begin(), values.end(), t.storage().begin());
      s.params.push_back(std::move(t));
    }
    return s;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("search state: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("search state: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("search state: ") + e.what());
  }
}

CellDocument cell_document(const SearchState& s, std::size_t keep) {
  Network net(s.config.network);
  CellDocument d;
  d.arch = prune_architecture(s.config.mode, net.graph(), s.arch, s.gates, keep);
  d.ops = op_names(s.config.network.ops);
  d.gates = s.gates;
  d.lambda = s.config.lambda;
  return d;
}

std::string export_cell_json(const CellDocument& d) {
  Json cells = {{"normal", cell_json(d.arch.normal)}};
  if (d.arch.reduction) cells["reduction"] = cell_json(*d.arch.reduction);
  const Json doc = {
      {"schema_version", kSchemaVersion},
      {"kind", "discrete_cell"},
      {"mode", search_mode_name(d.arch.mode)},
      {"score", d.arch.mode == SearchMode::Darts ? "softmax_weight" : "activation_probability"},
      {"ops", d.ops},
      {"constants",
       {{"a", d.gates.a},
        {"b", d.gates.b},
        {"tau", d.gates.tau},
        {"lambda_skip", d.lambda.skip},
        {"lambda_non_skip", d.lambda.non_skip},
        {"lambda_path", d.lambda.path}}},
      {"cells", cells}};
  return doc.dump(2) + "\n";
}

CellDocument import_cell_json(std::string_view text) {
  const Json j = parse(text);
  check_header(j, "discrete_cell");
  try {
    CellDocument d;
    d.arch.mode = search_mode_from_name(j.at("mode").get<std::string>());
    d.ops = j.at("ops").get<std::vector<std::string>>();
    const Json& k = j.at("constants");
    d.gates = {k.at("tau").get<double>(), k.at("a").get<double>(), k.at("b").get<double>()};
    d.lambda = {k.at("lambda_skip").get<double>(), k.at("lambda_non_skip").get<double>(),
                k.at("lambda_path").get<double>()};
    const Json& cells = j.at("cells");
    d.arch.normal = cell_from(cells.at("normal"));
    if (cells.contains("reduction")) d.arch.reduction = cell_from(cells.at("reduction"));
    return d;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("cell: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("cell: ") + e.what());
  }
}

}  // namespace prdk
