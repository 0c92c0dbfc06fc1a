#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "prdk/random.hpp"
#include "prdk/tensor.hpp"

namespace prdk {

struct Sample {
  Tensor x;  // (channels, length)
  double y = 0.0;
};

using Batch = std::vector<Sample>;

struct Dataset {
  std::vector<Sample> samples;
  std::uint64_t seed = 0;
  bool normalized = false;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t channels() const { return samples.empty() ? 0 : samples.front().x.rows(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().x.cols(); }
};

/// Cosine threshold used to reject near-parallel samples.
inline constexpr double kParallelThreshold = 1.0 - 1e-3;

enum class LabelModel {
  /// y = <T, X> for a fixed Gaussian teacher T.
  LinearTeacher,
  /// y = tanh(<T1, X>) + 0.5 <T2, X>^2 with Gaussian teachers.
  NonlinearTeacher,
  /// Labels supplied by the caller (see generate_synthetic overload).
  Provided,
};

std::string_view label_model_name(LabelModel m);
LabelModel label_model_from_name(std::string_view name);

struct SyntheticSpec {
  std::size_t n = 8;
  std::size_t channels = 4;
  std::size_t length = 8;
  LabelModel labels = LabelModel::LinearTeacher;
  /// Multiplies the teacher output, so target magnitude is configurable.
  double label_scale = 1.0;
  std::uint64_t seed = 0;
};

/// Unit-Frobenius-norm Gaussian inputs with pairwise |cos| < kParallelThreshold.
/// Throws Error when rejection needs more than 1000 * n draws.
Dataset generate_synthetic(const SyntheticSpec& spec);
/// Same inputs, caller-provided targets (LabelModel::Provided).
Dataset generate_synthetic(const SyntheticSpec& spec, std::span<const double> targets);

/// Largest |cos angle| between flattened samples (0 for n < 2).
double max_pairwise_cosine(std::span<const Sample> samples);

/// Binary layout (little-endian): "PRDK", u32 version = 1, u32 n, u32 channels,
/// u32 length, then n records of channels*length f64 values followed by one
/// f64 target.
inline constexpr std::uint32_t kBinaryVersion = 1;

struct LoadOptions {
  bool normalize = false;
  /// When set, the header dimensions must equal these.
  std::optional<std::pair<std::size_t, std::size_t>> expected_shape;
};

void save_binary(const Dataset& data, const std::filesystem::path& path);
/// Throws FormatError (bad magic/version), TruncationError (short file, with
/// byte offset) or DimensionError (zero/mismatched dimensions, trailing bytes).
Dataset load_binary(const std::filesystem::path& path, const LoadOptions& options = {});

}  // namespace prdk
