#include "dsre/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace dsre {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("tensor: " + std::to_string(data_.size()) +
                                " values do not fill shape [" + std::to_string(rows_) + "," +
                                std::to_string(cols_) + "]");
  }
}

Tensor Tensor::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_string());
  return data_[0];
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "," + std::to_string(cols_) + "]";
}

double l2_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double s, const Tensor& b, Tensor& a) {
  if (!a.same_shape(b)) throw std::invalid_argument("axpy: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dsre
