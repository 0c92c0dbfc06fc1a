#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "prdk/dataio.hpp"
#include "prdk/supernet.hpp"

namespace prdk {

/// Convergence factor of a fixed-architecture cell:
///   (3 c / 4) * kmin * sum_{s=0}^{upper} w_conv(s -> h-1)^2 * prod_{t<s} w_skip(t -> s)^2
/// `weights` holds one value per (edge, op) of `graph`; edges without a Skip
/// or Conv op contribute weight 0. `upper` defaults to h - 2.
double lambda_theorem1(const CellGraph& graph, const EdgeValues& weights, double kmin, double c_sigma = 1.0,
                       std::optional<std::size_t> upper = std::nullopt);

/// Smallest eigenvalue of a symmetric 2x2 matrix [[p, r], [r, q]].
double min_eig_2x2(double p, double r, double q);

struct KminReport {
  /// Minimum over pairs of the smallest eigenvalue of [[<Xi,Xj>, <Xi,Xj>], [<Xj,Xi>, <Xj,Xj>]].
  double printed = 0.0;
  /// Same with the pair's Gram block [[<Xi,Xi>, <Xi,Xj>], [<Xj,Xi>, <Xj,Xj>]].
  double symmetric = 0.0;
};
/// Needs at least two samples.
KminReport lambda_min_K(std::span<const Sample> samples);

/// Per-sample loss l_i = (u_i - y_i)^2 / 2 for one sample.
Var sample_loss(const Network& net, std::span<const Var> params, const BoundWeights& weights, const Sample& sample);

/// Flattened gradient of every per-sample loss with respect to all
/// network parameters, in layout order.
std::vector<std::vector<double>> per_sample_loss_gradients(const Network& net, const SuperNetParams& params,
                                                           const EdgeValues& weights, std::span<const Sample> batch,
                                                           std::size_t threads = 1);

struct GramReport {
  std::vector<std::vector<double>> g;
  double min_eig = 0.0;
  double max_asymmetry = 0.0;
  double trace = 0.0;
};
/// G_ij = <grad l_i, grad l_j>; eigenvalues from a symmetric eigensolve.
GramReport gram_matrix(const Network& net, const SuperNetParams& params, const EdgeValues& weights,
                       std::span<const Sample> batch, std::size_t threads = 1);
GramReport gram_from_gradients(const std::vector<std::vector<double>>& grads);

struct ContractionReport {
  std::vector<double> losses;  // F(0) .. F(steps)
  std::vector<double> ratios;  // F(k+1) / F(k)
  double max_ratio = 0.0;
  double geometric_mean = 0.0;  // (F(steps) / F(0))^(1 / steps)
  bool diverged = false;
};
/// Full-batch gradient descent on all network parameters with the
/// architecture weights held fixed. Divergence is reported, not raised.
ContractionReport measure_contraction(const Network& net, SuperNetParams params, const EdgeValues& weights,
                                      std::span<const Sample> batch, double eta, std::size_t steps);

struct ShallowDeep {
  double lambda_a = 0.0;
  double lambda_b = 0.0;
  bool verdict = false;  // lambda_b >= lambda_a
};
/// Deep cell A versus the two-branch cell B sharing its gate values.
/// Throws ConfigError for odd h.
ShallowDeep compare_shallow_deep(const CellGraph& graph, const EdgeValues& gates, double kmin,
                                 double c_sigma = 1.0);

struct GateProbe {
  std::size_t edge = 0;
  std::size_t op = 0;
  OpKind kind = OpKind::Zero;
  double analytic = 0.0;  // dF/dg
  double forward = 0.0;   // (F(g + eps) - F(g)) / eps
};
/// Derivative of the batch loss with respect to every mixing weight, with
/// network parameters fixed.
std::vector<GateProbe> gate_sensitivity(const Network& net, const SuperNetParams& params, const EdgeValues& gates,
                                        std::span<const Sample> batch, double eps = 1e-3);

struct SkipFractionConfig {
  std::vector<double> fractions{0.0, 0.375, 0.625};
  std::size_t trials = 5;
  std::size_t nodes = 5;
  std::size_t width = 32;
  std::size_t in_channels = 4;
  std::size_t length = 8;
  std::size_t samples = 8;
  std::size_t steps = 200;
  double eta = 1e-3;
  double label_scale = 1.0;
  Activation activation = Activation::Softplus;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct SkipFractionRow {
  double fraction = 0.0;
  std::size_t skips = 0;
  /// curves[trial][step], losses F(0) .. F(steps)
  std::vector<std::vector<double>> curves;
  std::vector<double> mean_curve;
  double final_mean = 0.0;
};

/// Cell graph with one op per edge: `skips` edges carry Skip, the rest Conv3.
CellGraph skip_conv_cell(std::size_t nodes, std::size_t skips, Rng& rng);

/// For each fraction, round(fraction * E) random edges become Skip and the
/// rest Conv3; W is trained by full-batch gradient descent. Trial t uses the
/// same data and initialization seed for every fraction.
std::vector<SkipFractionRow> skip_fraction_experiment(const SkipFractionConfig& config);

struct ContractionStudyConfig {
  std::size_t weightings = 20;
  std::size_t nodes = 3;
  std::size_t width = 256;
  std::size_t in_channels = 4;
  std::size_t length = 8;
  std::size_t samples = 4;
  std::size_t steps = 50;
  double eta = 3e-4;
  Activation activation = Activation::Softplus;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ContractionStudyRow {
  EdgeValues weights;
  double lambda = 0.0;  // symmetric kmin
  ContractionReport contraction;
};

struct ContractionStudy {
  double kmin = 0.0;
  std::vector<ContractionStudyRow> rows;
  /// Rank correlation of lambda with 1 - geometric-mean loss ratio.
  double spearman = 0.0;
};

/// One dataset and one initialization; each weighting draws skip and conv
/// weights uniformly from [0, 1] on every edge and trains W by gradient descent.
ContractionStudy contraction_study(const ContractionStudyConfig& config);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace prdk
