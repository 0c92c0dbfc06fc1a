#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "prdk/dataio.hpp"
#include "prdk/error.hpp"

using namespace prdk;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("prdk_test_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("single sample is unit norm") {
  const Dataset d = generate_synthetic({.n = 1, .channels = 3, .length = 5, .seed = 4});
  REQUIRE(d.size() == 1);
  CHECK(std::abs(d.samples[0].x.frobenius_norm() - 1.0) < 1e-10);
  CHECK(d.normalized);
}

TEST_CASE("hundred samples are unit norm and pairwise non-parallel") {
  const Dataset d = generate_synthetic({.n = 100, .channels = 2, .length = 4, .seed = 1});
  for (const auto& s : d.samples) CHECK(std::abs(s.x.frobenius_norm() - 1.0) < 1e-10);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      const double c = dot(d.samples[i].x, d.samples[j].x);
      CHECK(std::abs(c) < 1.0 - 1e-3);
    }
  CHECK(max_pairwise_cosine(d.samples) < kParallelThreshold);
}

TEST_CASE("generation is a pure function of the seed") {
  const SyntheticSpec spec{.n = 20, .channels = 3, .length = 6, .labels = LabelModel::NonlinearTeacher, .seed = 9};
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].x == b.samples[i].x);
    CHECK(a.samples[i].y == b.samples[i].y);
  }
  SyntheticSpec other = spec;
  other.seed = 10;
  CHECK(!(generate_synthetic(other).samples[0].x == a.samples[0].x));
}

TEST_CASE("linear labels scale with the label scale") {
  SyntheticSpec spec{.n = 5, .channels = 2, .length = 3, .seed = 2};
  const Dataset a = generate_synthetic(spec);
  spec.label_scale = 3.0;
  const Dataset b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b.samples[i].y == doctest::Approx(3.0 * a.samples[i].y));
}

TEST_CASE("provided targets") {
  const std::vector<double> y{1, 2, 3};
  const Dataset d = generate_synthetic({.n = 3, .channels = 2, .length = 3, .labels = LabelModel::Provided}, y);
  for (std::size_t i = 0; i < 3; ++i) CHECK(d.samples[i].y == y[i]);
  CHECK_THROWS(generate_synthetic({.n = 2, .channels = 2, .length = 3, .labels = LabelModel::Provided}, y));
}

TEST_CASE("rejection budget is enforced") {
  // one-dimensional inputs are all parallel
  CHECK_THROWS_AS(generate_synthetic({.n = 3, .channels = 1, .length = 1}), Error);
  CHECK_THROWS_AS(generate_synthetic({.n = 0}), ConfigError);
}

TEST_CASE("label model names") {
  for (auto m : {LabelModel::LinearTeacher, LabelModel::NonlinearTeacher, LabelModel::Provided})
    CHECK(label_model_from_name(label_model_name(m)) == m);
  CHECK_THROWS_AS(label_model_from_name("quadratic"), ConfigError);
}

TEST_CASE("binary round trip is lossless") {
  const Dataset d = generate_synthetic({.n = 7, .channels = 3, .length = 4, .seed = 3});
  const fs::path p = temp_file("roundtrip.bin");
  save_binary(d, p);
  CHECK(fs::file_size(p) == 20 + 7 * (12 + 1) * 8);
  const Dataset e = load_binary(p);
  REQUIRE(e.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(std::memcmp(e.samples[i].x.data().data(), d.samples[i].x.data().data(), 12 * sizeof(double)) == 0);
    CHECK(e.samples[i].y == d.samples[i].y);
  }
  const auto bytes = read_all(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PRDK");
  CHECK(bytes[4] == 1);
  fs::remove(p);
}

TEST_CASE("loading normalizes on request") {
  Dataset d;
  d.samples.push_back({Tensor::from_rows({{3, 4}}), 1.0});
  d.samples.push_back({Tensor::from_rows({{1, 0}}), 2.0});
  const fs::path p = temp_file("norm.bin");
  save_binary(d, p);
  const Dataset e = load_binary(p, {.normalize = true});
  CHECK(e.normalized);
  CHECK(e.samples[0].x(0, 0) == doctest::Approx(0.6));
  CHECK(load_binary(p).samples[0].x(0, 0) == 3.0);
  fs::remove(p);
}

TEST_CASE("binary format errors") {
  const Dataset d = generate_synthetic({.n = 3, .channels = 2, .length = 2, .seed = 5});
  const fs::path p = temp_file("errors.bin");
  save_binary(d, p);
  const auto good = read_all(p);

  SUBCASE("bad magic") {
    auto bytes = good;
    bytes[0] = 'X';
    write_all(p, bytes);
    CHECK_THROWS_AS(load_binary(p), FormatError);
    try {
      load_binary(p);
    } catch (const TruncationError&) {
      FAIL("bad magic reported as truncation");
    } catch (const DimensionError&) {
      FAIL("bad magic reported as dimension error");
    } catch (const FormatError&) {
    }
  }
  SUBCASE("bad version") {
    auto bytes = good;
    bytes[4] = 2;
    write_all(p, bytes);
    CHECK_THROWS_AS(load_binary(p), FormatError);
  }
  SUBCASE("truncated record names the byte offset") {
    auto bytes = good;
    bytes.resize(good.size() - 5);
    write_all(p, bytes);
    try {
      load_binary(p);
      FAIL("no error");
    } catch (const TruncationError& e) {
      CHECK(e.offset() == 20 + 2 * 5 * 8 + 4 * 8);  // the target of the third record
      CHECK(std::string(e.what()).find(std::to_string(e.offset())) != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    write_all(p, std::vector<char>(good.begin(), good.begin() + 10));
    CHECK_THROWS_AS(load_binary(p), TruncationError);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(load_binary(p, {.expected_shape = std::pair<std::size_t, std::size_t>{3, 2}}), DimensionError);
    CHECK_NOTHROW(load_binary(p, {.expected_shape = std::pair<std::size_t, std::size_t>{2, 2}}));
  }
  SUBCASE("zero dimension") {
    auto bytes = good;
    std::memset(bytes.data() + 12, 0, 4);
    write_all(p, bytes);
    CHECK_THROWS_AS(load_binary(p), DimensionError);
  }
  SUBCASE("trailing bytes") {
    auto bytes = good;
    bytes.push_back(0);
    write_all(p, bytes);
    CHECK_THROWS_AS(load_binary(p), DimensionError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_binary(temp_file("does_not_exist.bin")), Error); }
  fs::remove(p);
}
