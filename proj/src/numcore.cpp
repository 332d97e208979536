#include "bernnet/numcore.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "bernnet/error.hpp"

namespace bernnet {

namespace {

std::atomic<bool> g_validate{false};

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

Matrix checked(Matrix m, std::string_view op) {
  if (g_validate.load(std::memory_order_relaxed)) require_finite(m, op);
  return m;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void set_validation_mode(bool enabled) noexcept { g_validate.store(enabled); }
bool validation_mode() noexcept { return g_validate.load(); }

bool all_finite(const Matrix& m) noexcept {
  for (double v : m.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Matrix& m, std::string_view what) {
  const auto vals = m.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!std::isfinite(vals[i])) {
      throw NumericError(std::string(what) + ": non-finite value at (" +
                         std::to_string(i / std::max<std::size_t>(m.cols(), 1)) + "," +
                         std::to_string(i % std::max<std::size_t>(m.cols(), 1)) + ")");
    }
  }
}

// i-k-j order: the inner loop is an axpy over contiguous rows, which the
// compiler vectorizes without reassociating any sum.
Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape(a) + " x " + shape(b));
  }
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict o = out.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* __restrict brow = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += aik * brow[j];
    }
  }
  return checked(std::move(out), "matmul");
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape(a) + "^T x " + shape(b));
  }
  const std::size_t n = a.rows(), p = a.cols(), m = b.cols();
  Matrix out(p, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.row(i).data();
    const double* __restrict brow = b.row(i).data();
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* __restrict o = out.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += aik * brow[j];
    }
  }
  return checked(std::move(out), "matmul_tn");
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape(a) + " x " + shape(b) + "^T");
  }
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return checked(std::move(out), "add");
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return checked(std::move(out), "sub");
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return checked(std::move(out), "hadamard");
}

Matrix scale(const Matrix& m, double s) {
  Matrix out = m;
  for (double& v : out.values()) v *= s;
  return checked(std::move(out), "scale");
}

Matrix map(const Matrix& m, const std::function<double(double)>& f) {
  Matrix out = m;
  for (double& v : out.values()) v = f(v);
  return checked(std::move(out), "map");
}

Matrix add_row_vector(const Matrix& m, std::span<const double> v) {
  if (v.size() != m.cols()) {
    throw DimensionError("add_row_vector: vector length " + std::to_string(v.size()) +
                         " vs " + shape(m));
  }
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += v[j];
  }
  return checked(std::move(out), "add_row_vector");
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
  return out;
}

std::vector<double> row_sums(const Matrix& m) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v;
    out[i] = s;
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Matrix& m) {
  if (m.cols() == 0) throw DimensionError("argmax_rows: zero columns");
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) throw DimensionError("gather_rows: index out of range");
    auto src = m.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<double> least_squares(const Matrix& a, std::span<const double> b) {
  const std::size_t m = a.rows(), n = a.cols();
  if (b.size() != m) throw DimensionError("least_squares: rhs length mismatch");
  if (m < n) throw DimensionError("least_squares: underdetermined system");

  Matrix r = a;
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t k = 0; k < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < m; ++i) norm += r(i, k) * r(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DomainError("least_squares: rank-deficient matrix");
    const double alpha = r(k, k) > 0 ? -norm : norm;
    // Householder vector v = x − alpha·e₁, stored in place below the diagonal.
    std::vector<double> v(m - k);
    for (std::size_t i = k; i < m; ++i) v[i - k] = r(i, k);
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double vi : v) vnorm2 += vi * vi;
    if (vnorm2 == 0.0) continue;
    for (std::size_t j = k; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += v[i - k] * r(i, j);
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < m; ++i) r(i, j) -= f * v[i - k];
    }
    double dot = 0.0;
    for (std::size_t i = k; i < m; ++i) dot += v[i - k] * y[i];
    const double f = 2.0 * dot / vnorm2;
    for (std::size_t i = k; i < m; ++i) y[i] -= f * v[i - k];
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t kk = n; kk-- > 0;) {
    double s = y[kk];
    for (std::size_t j = kk + 1; j < n; ++j) s -= r(kk, j) * x[j];
    if (r(kk, kk) == 0.0) throw DomainError("least_squares: rank-deficient matrix");
    x[kk] = s / r(kk, kk);
  }
  return x;
}

}  // namespace bernnet
