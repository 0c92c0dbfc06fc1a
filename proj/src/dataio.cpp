#include "prdk/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "prdk/error.hpp"

namespace prdk {

static_assert(std::endian::native == std::endian::little, "binary dataset I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'R', 'D', 'K'};

double flat_cosine(const Tensor& a, const Tensor& b) {
  const double na = a.frobenius_norm(), nb = b.frobenius_norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return dot(a, b) / (na * nb);
}

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

Dataset generate_inputs(const SyntheticSpec& spec, Rng& rng) {
  if (spec.n == 0) throw ConfigError("generate_synthetic: n must be at least 1");
  if (spec.channels == 0 || spec.length == 0) throw ConfigError("generate_synthetic: empty sample shape");
  Dataset data;
  data.seed = spec.seed;
  data.normalized = true;
  data.samples.reserve(spec.n);
  const std::size_t budget = 1000 * spec.n;
  std::size_t draws = 0;
  while (data.samples.size() < spec.n) {
    if (++draws > budget) {
      throw Error("generate_synthetic: rejection sampling exceeded " + std::to_string(budget) + " draws");
    }
    Tensor x = gaussian_matrix(spec.channels, spec.length, rng);
    x *= 1.0 / x.frobenius_norm();
    bool ok = true;
    for (const Sample& s : data.samples) {
      if (std::abs(flat_cosine(s.x, x)) >= kParallelThreshold) {
        ok = false;
        break;
      }
    }
    if (ok) data.samples.push_back({std::move(x), 0.0});
  }
  return data;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T take(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) throw TruncationError(std::string("reading ") + what, pos_);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }
  const char* data() const { return bytes_.data(); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view label_model_name(LabelModel m) {
  switch (m) {
    case LabelModel::LinearTeacher: return "linear";
    case LabelModel::NonlinearTeacher: return "nonlinear";
    case LabelModel::Provided: return "provided";
  }
  return "unknown";
}

LabelModel label_model_from_name(std::string_view name) {
  if (name == "linear") return LabelModel::LinearTeacher;
  if (name == "nonlinear") return LabelModel::NonlinearTeacher;
  if (name == "provided") return LabelModel::Provided;
  throw ConfigError("unknown label model '" + std::string(name) + "'");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.labels == LabelModel::Provided) {
    throw ConfigError("generate_synthetic: provided labels need the targets overload");
  }
  Rng rng(spec.seed);
  // Teachers are drawn first so that n does not change them.
  Tensor t1 = gaussian_matrix(spec.channels, spec.length, rng);
  Tensor t2 = gaussian_matrix(spec.channels, spec.length, rng);
  Dataset data = generate_inputs(spec, rng);
  for (Sample& s : data.samples) {
    const double a = dot(t1, s.x);
    if (spec.labels == LabelModel::LinearTeacher) {
      s.y = spec.label_scale * a;
    } else {
      const double b = dot(t2, s.x);
      s.y = spec.label_scale * (std::tanh(a) + 0.5 * b * b);
    }
  }
  return data;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::span<const double> targets) {
  if (targets.size() != spec.n) throw ConfigError("generate_synthetic: need exactly n targets");
  Rng rng(spec.seed);
  gaussian_matrix(spec.channels, spec.length, rng);
  gaussian_matrix(spec.channels, spec.length, rng);
  Dataset data = generate_inputs(spec, rng);
  for (std::size_t i = 0; i < spec.n; ++i) data.samples[i].y = targets[i];
  return data;
}

double max_pairwise_cosine(std::span<const Sample> samples) {
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j)
      worst = std::max(worst, std::abs(flat_cosine(samples[i].x, samples[j].x)));
  return worst;
}

void save_binary(const Dataset& data, const std::filesystem::path& path) {
  const std::size_t c = data.channels(), p = data.length();
  for (const Sample& s : data.samples) {
    if (s.x.rank() != 2 || s.x.rows() != c || s.x.cols() != p) {
      throw DimensionError("save_binary: samples have inconsistent shapes");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_binary: cannot open " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kBinaryVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p));
  for (const Sample& s : data.samples) {
    out.write(reinterpret_cast<const char*>(s.x.data().data()), static_cast<std::streamsize>(s.x.size() * sizeof(double)));
    put<double>(out, s.y);
  }
  if (!out) throw Error("save_binary: write failed for " + path.string());
}

Dataset load_binary(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_binary: cannot open " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  if (r.size() < 4) throw TruncationError("reading magic", r.size());
  if (std::memcmp(r.data(), kMagic, 4) != 0) throw FormatError("load_binary: bad magic in " + path.string());
  r.take<std::uint32_t>("magic");
  const auto version = r.take<std::uint32_t>("version");
  if (version != kBinaryVersion) {
    throw FormatError("load_binary: unsupported version " + std::to_string(version));
  }
  const std::size_t n = r.take<std::uint32_t>("sample count");
  const std::size_t c = r.take<std::uint32_t>("channel count");
  const std::size_t p = r.take<std::uint32_t>("length");
  if (c == 0 || p == 0) throw DimensionError("load_binary: zero sample dimension");
  if (options.expected_shape && (options.expected_shape->first != c || options.expected_shape->second != p)) {
    throw DimensionError("load_binary: file has samples of shape (" + std::to_string(c) + "," +
                         std::to_string(p) + "), expected (" + std::to_string(options.expected_shape->first) +
                         "," + std::to_string(options.expected_shape->second) + ")");
  }

  Dataset data;
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = Tensor::matrix(c, p);
    for (double& v : x.storage()) v = r.take<double>("sample values");
    const double y = r.take<double>("sample target");
    data.samples.push_back({std::move(x), y});
  }
  if (r.pos() != r.size()) {
    throw DimensionError("load_binary: " + std::to_string(r.size() - r.pos()) +
                         " trailing bytes after the declared records");
  }
  if (options.normalize) {
    for (Sample& s : data.samples) {
      const double norm = s.x.frobenius_norm();
      if (norm > 0.0) s.x *= 1.0 / norm;
    }
    data.normalized = true;
  }
  return data;
}

}  // namespace prdk
