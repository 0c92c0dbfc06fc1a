#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "prdk/dataio.hpp"
#include "prdk/gates.hpp"
#include "prdk/optim.hpp"
#include "prdk/regularizers.hpp"
#include "prdk/supernet.hpp"

namespace prdk {

enum class SearchMode { Darts, PrDarts };
std::string_view search_mode_name(SearchMode m);
SearchMode search_mode_from_name(std::string_view name);

struct SearchConfig {
  SearchMode mode = SearchMode::PrDarts;
  NetworkConfig network;

  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double split_ratio = 0.5;
  /// Ops updated per edge and step; 0 or >= r means all.
  std::size_t ops_per_edge = 2;
  std::uint64_t seed = 0;

  double w_lr = 0.025;
  double w_momentum = 0.9;
  double w_weight_decay = 3e-4;
  bool w_cosine = true;

  double beta_lr = 3e-4;
  double beta_weight_decay = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  /// Initial logit; unset means 0 for softmax weights and 0.5 for gates.
  std::optional<double> beta_init;
  double beta_init_std = 0.0;

  TemperatureSchedule temperature;
  double stretch_low = kDefaultStretchLow;
  double stretch_high = kDefaultStretchHigh;
  /// Noise-free gates (uniform draw fixed at 1/2).
  bool deterministic_gates = false;
  RegularizerWeights lambda;

  /// Throws ConfigError on invalid values.
  void validate() const;
  double initial_beta() const;
};

/// Disjoint, covering split; the first part has round(ratio * n) samples,
/// clamped so both parts are non-empty when n >= 2.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double ratio, std::uint64_t seed);

/// Uniformly random `count` of `r` slots. Throws ConfigError when count < 1.
std::vector<bool> subsample_ops(std::size_t r, std::size_t count, Rng& rng);
/// One independent subset per edge; count >= r keeps every op.
std::vector<std::vector<bool>> subsample_edge_ops(const CellGraph& graph, std::size_t count, Rng& rng);

struct TraceRecord {
  std::size_t step = 0;
  double f_train = 0.0;
  double f_val = 0.0;
  double l_skip = 0.0;
  double l_non_skip = 0.0;
  double l_path = 0.0;
  double mean_skip_prob = 0.0;
  double mean_non_skip_prob = 0.0;
  double temperature = 0.0;
};

struct SearchTrace {
  std::vector<TraceRecord> rows;
};

inline constexpr std::string_view kTraceHeader =
    "step,f_train,f_val,l_skip,l_non_skip,l_path,mean_skip_prob,mean_non_skip_prob,temperature";
void write_trace_csv(const SearchTrace& trace, std::ostream& out);

/// Architecture parameters of both cell types.
struct ArchState {
  EdgeValues normal;
  EdgeValues reduction;  // empty without reduction cells
};

/// Scores used for pruning and reporting: full-edge softmax in DARTS mode,
/// activation probability at temperature `tau` in gate mode.
EdgeValues arch_scores(SearchMode mode, const CellGraph& graph, const EdgeValues& beta, const GateParams& gp);

/// Regularizer values and mean skip / non-skip scores summed over cell types.
struct ArchSummary {
  double l_skip = 0.0;
  double l_non_skip = 0.0;
  double l_path = 0.0;
  double mean_skip = 0.0;
  double mean_non_skip = 0.0;
};
ArchSummary summarize_arch(SearchMode mode, const CellGraph& graph, const ArchState& arch, const GateParams& gp);

/// Per-edge masks of the ops updated this step, per cell type.
struct ActiveOps {
  std::vector<std::vector<bool>> normal;
  std::vector<std::vector<bool>> reduction;
};

/// Objective value, its regularizer terms and the beta gradient of one
/// beta-step, before the update is applied.
struct BetaStep {
  double f_val = 0.0;
  double objective = 0.0;
  ArchState grad;
};

/// Alternating first-order bi-level search over one network.
class Searcher {
 public:
  Searcher(SearchConfig config, Dataset train, Dataset val);

  const SearchConfig& config() const noexcept { return config_; }
  const Network& network() const noexcept { return net_; }
  const SuperNetParams& params() const noexcept { return params_; }
  const ArchState& arch() const noexcept { return arch_; }
  std::size_t step_index() const noexcept { return step_; }
  std::size_t total_steps() const noexcept { return total_steps_; }
  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  double temperature() const;
  GateParams gate_params() const;

  /// One W-step on `train_batch` then one beta-step on `val_batch`. The
  /// record's regularizer values are those of the state entering the step;
  /// the mean scores are taken after the update.
  TraceRecord step(std::span<const Sample> train_batch, std::span<const Sample> val_batch);
  /// Runs every remaining epoch over the stored data.
  SearchTrace run();

  /// Gradient of the beta-step objective at the current state. Gates draw
  /// from `gates` unless the config asks for deterministic gates. Inactive
  /// ops get a zero gradient.
  BetaStep beta_gradient(std::span<const Sample> batch, const ActiveOps* active, Rng* gates) const;

 private:
  BoundWeights arch_weights(Tape& tape, const ActiveOps* active, Rng* gates, std::vector<Var>* leaves) const;
  ActiveOps draw_active();

  SearchConfig config_;
  Dataset train_, val_;
  Network net_;
  SuperNetParams params_;
  ArchState arch_;
  std::unique_ptr<Optimizer> w_opt_, beta_opt_;
  Rng data_rng_, op_rng_, gate_rng_;
  std::size_t step_ = 0;
  std::size_t steps_per_epoch_ = 0;
  std::size_t total_steps_ = 0;
};

struct SearchResult {
  SearchConfig config;
  SuperNetParams params;
  ArchState arch;
  GateParams final_gates;
  SearchTrace trace;
};

/// Splits `data`, searches for config.epochs and returns the final state.
SearchResult run_search(const SearchConfig& config, const Dataset& data);

}  // namespace prdk
