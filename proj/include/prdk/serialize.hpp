#pragma once

#include <initializer_list>
#include <string>
#include <type_traits>
#include <string_view>

#include <json.hpp>

#include "prdk/dataio.hpp"
#include "prdk/error.hpp"
#include "prdk/pruner.hpp"
#include "prdk/search.hpp"
#include "prdk/theory.hpp"

namespace prdk {

using Json = nlohmann::json;

/// Every JSON document written by the library carries this version.
inline constexpr std::string_view kSchemaVersion = "1";

/// Throws ConfigError if `j` is not an object or has a key outside `keys`.
void json_reject_unknown(const Json& j, std::initializer_list<std::string_view> keys, std::string_view what);

/// Reads j[key] into `out` when present, with strict type checks (unsigned
/// fields need a non-negative integer). Throws ConfigError.
template <class T>
void json_read(const Json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw ConfigError(std::string("'") + key + "' must be a boolean");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!it->is_number_unsigned()) throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
  }
  try {
    out = it->get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("'") + key + "': " + e.what());
  }
}


/// Config objects are read field by field on top of `base`, so a file only
/// needs the keys it changes. Unknown keys and wrong types raise ConfigError.
Json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const Json& j, NetworkConfig base = {});
Json to_json(const SearchConfig& c);
SearchConfig search_config_from_json(const Json& j, SearchConfig base = {});
Json to_json(const SkipFractionConfig& c);
SkipFractionConfig skip_fraction_config_from_json(const Json& j, SkipFractionConfig base = {});
Json to_json(const ContractionStudyConfig& c);
ContractionStudyConfig contraction_study_config_from_json(const Json& j, ContractionStudyConfig base = {});
Json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const Json& j, SyntheticSpec base = {});

/// Dataset as JSON: every sample's matrix and target at round-trip precision.
std::string export_dataset_json(const Dataset& data);
/// Throws FormatError on malformed text, ragged samples or a schema mismatch.
Dataset import_dataset_json(std::string_view text);

/// Everything needed to resume or prune a search: config, architecture
/// parameters, the gate constants in force at the end and the network weights.
struct SearchState {
  SearchConfig config;
  ArchState arch;
  GateParams gates;
  SuperNetParams params;
};

SearchState state_from_result(const SearchResult& r);
std::string export_state_json(const SearchState& s);
/// Throws FormatError on malformed text or a schema mismatch.
SearchState import_state_json(std::string_view text);

/// A pruned architecture together with the constants it was derived under.
struct CellDocument {
  PrunedArchitecture arch;
  std::vector<std::string> ops;
  GateParams gates;
  RegularizerWeights lambda;
};

CellDocument cell_document(const SearchState& s, std::size_t keep = 2);
std::string export_cell_json(const CellDocument& d);
CellDocument import_cell_json(std::string_view text);

}  // namespace prdk
