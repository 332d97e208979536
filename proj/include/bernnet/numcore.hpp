#pragma once

// Dense row-major matrices of doubles and the handful of kernels the network
// needs. Every reduction runs in a fixed loop order so results are bitwise
// reproducible run to run.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace bernnet {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// When enabled, every numcore operation checks its result for NaN/Inf and
/// throws NumericError. Off by default; the trainer checks losses instead.
void set_validation_mode(bool enabled) noexcept;
bool validation_mode() noexcept;

bool all_finite(const Matrix& m) noexcept;
void require_finite(const Matrix& m, std::string_view what);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Matrix map(const Matrix& m, const std::function<double(double)>& f);

/// Adds v to every row of m (broadcast over rows).
Matrix add_row_vector(const Matrix& m, std::span<const double> v);
std::vector<double> column_sums(const Matrix& m);
std::vector<double> row_sums(const Matrix& m);
std::vector<std::size_t> argmax_rows(const Matrix& m);

/// Copies the listed rows of m, in order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

/// Least-squares solution of min ||a·x − b||₂ via Householder QR.
/// Requires a.rows() ≥ a.cols() and full column rank.
std::vector<double> least_squares(const Matrix& a, std::span<const double> b);

}  // namespace bernnet
