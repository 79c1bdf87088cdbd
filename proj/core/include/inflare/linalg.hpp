#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace inflare {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Shape is fixed at construction.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  Vector column(std::size_t c) const;
  Matrix transpose() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
// aᵀ x without materializing the transpose.
Vector matvec_transposed(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Column means and (biased, 1/N) sample covariance of the rows of `points`.
Vector column_means(const Matrix& points);
Matrix sample_covariance(const Matrix& points);

struct SymEig {
  Vector values;   // descending
  Matrix vectors;  // orthonormal columns, vectors(:, k) pairs with values[k]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Each eigenvector's
// largest-magnitude entry is made positive so results are reproducible.
SymEig sym_eig(const Matrix& s);

}  // namespace inflare
