#include "prdk/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numeric>

#include "prdk/error.hpp"

namespace prdk {

namespace {

std::size_t element_count(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::frobenius_norm() const noexcept {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rows() != a.cols()) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  matmul_accumulate(a, false, b, false, out);
  return out;
}

void matmul_accumulate(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b, Tensor& acc) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto view = [](const Tensor& t) {
    return Eigen::Map<const Mat>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                 static_cast<Eigen::Index>(t.cols()));
  };
  const auto ma = view(a);
  const auto mb = view(b);
  const Eigen::Index inner_a = transpose_a ? ma.rows() : ma.cols();
  const Eigen::Index inner_b = transpose_b ? mb.cols() : mb.rows();
  const Eigen::Index rows = transpose_a ? ma.cols() : ma.rows();
  const Eigen::Index cols = transpose_b ? mb.rows() : mb.cols();
  if (inner_a != inner_b || static_cast<Eigen::Index>(acc.rows()) != rows ||
      static_cast<Eigen::Index>(acc.cols()) != cols) {
    throw ShapeError("matmul_accumulate: incompatible shapes");
  }
  Eigen::Map<Mat> out(acc.data().data(), rows, cols);
  if (transpose_a && transpose_b) {
    out.noalias() += ma.transpose() * mb.transpose();
  } else if (transpose_a) {
    out.noalias() += ma.transpose() * mb;
  } else if (transpose_b) {
    out.noalias() += ma * mb.transpose();
  } else {
    out.noalias() += ma * mb;
  }
}

}  // namespace prdk
