#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nblora {

using Vector = std::vector<double>;

/// Dense row-major real matrix.
///
/// Zero-sized dimensions are allowed so that empty Cayley blocks (q == r)
/// need no special casing.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: entry count " +
                                  std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) +
                                  "x" + std::to_string(cols_));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) {
        throw std::invalid_argument("Matrix: ragged initializer");
      }
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// rows x cols matrix with `diag` on the leading diagonal.
  static Matrix diagonal(std::span<const double> diag, std::size_t rows,
                         std::size_t cols) {
    Matrix m(rows, cols);
    const std::size_t k = std::min({diag.size(), rows, cols});
    for (std::size_t i = 0; i < k; ++i) m(i, i) = diag[i];
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    return diagonal(diag, diag.size(), diag.size());
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  std::span<double> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  Vector col(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  void set_col(std::size_t j, std::span<const double> c) {
    assert(c.size() == rows_);
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = c[i];
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr,
               std::size_t nc) const {
    if (r0 + nr > rows_ || c0 + nc > cols_) {
      throw std::out_of_range("Matrix::block out of range");
    }
    Matrix b(nr, nc);
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
    return b;
  }

  Matrix top_rows(std::size_t n) const { return block(0, 0, n, cols_); }
  Matrix bottom_rows(std::size_t n) const {
    return block(rows_ - n, 0, n, cols_);
  }
  Matrix left_cols(std::size_t n) const { return block(0, 0, rows_, n); }

  void set_block(std::size_t r0, std::size_t c0, const Matrix& b) {
    if (r0 + b.rows() > rows_ || c0 + b.cols() > cols_) {
      throw std::out_of_range("Matrix::set_block out of range");
    }
    for (std::size_t i = 0; i < b.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j)
        (*this)(r0 + i, c0 + j) = b(i, j);
  }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(double a) noexcept {
    for (double& x : data_) x *= a;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }
  friend Matrix operator-(Matrix a) { return a *= -1.0; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void check_same_shape(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw std::invalid_argument("Matrix: shape mismatch " +
                                  std::to_string(rows_) + "x" +
                                  std::to_string(cols_) + " vs " +
                                  std::to_string(o.rows_) + "x" +
                                  std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch");
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// aᵀ·b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("matmul_tn: row count mismatch");
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

/// a·bᵀ without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: column count mismatch");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

/// m·diag(d): scales column j by d[j].
inline Matrix scale_cols(Matrix m, std::span<const double> d) {
  assert(d.size() == m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] *= d[j];
  }
  return m;
}

inline Vector diagonal_of(const Matrix& m) {
  const std::size_t k = std::min(m.rows(), m.cols());
  Vector d(k);
  for (std::size_t i = 0; i < k; ++i) d[i] = m(i, i);
  return d;
}

/// Frobenius inner product ⟨a, b⟩.
inline double inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("inner: shape mismatch");
  }
  double s = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) s += av[k] * bv[k];
  return s;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.values()) s += x * x;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& m) {
  double s = 0.0;
  for (double x : m.values()) s = std::max(s, std::abs(x));
  return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return max_abs(a - b);
}

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double x) { return std::isfinite(x); });
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

/// Stacks `top` over `bottom`.
inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw std::invalid_argument("vstack: column count mismatch");
  }
  Matrix m(top.rows() + bottom.rows(), top.cols());
  m.set_block(0, 0, top);
  m.set_block(top.rows(), 0, bottom);
  return m;
}

/// Places `left` and `right` side by side.
inline Matrix hstack(const Matrix& left, const Matrix& right) {
  if (left.rows() != right.rows()) {
    throw std::invalid_argument("hstack: row count mismatch");
  }
  Matrix m(left.rows(), left.cols() + right.cols());
  m.set_block(0, 0, left);
  m.set_block(0, left.cols(), right);
  return m;
}

/// LU factorization with partial pivoting, PA = LU, for square systems.
class LuDecomposition {
 public:
  explicit LuDecomposition(Matrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
    if (lu_.rows() != lu_.cols()) {
      throw std::invalid_argument("LuDecomposition: matrix is not square");
    }
    const std::size_t n = lu_.rows();
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t piv = k;
      double best = std::abs(lu_(k, k));
      for (std::size_t i = k + 1; i < n; ++i) {
        if (std::abs(lu_(i, k)) > best) {
          best = std::abs(lu_(i, k));
          piv = i;
        }
      }
      if (best == 0.0) {
        singular_ = true;
        continue;
      }
      if (piv != k) {
        std::swap_ranges(lu_.row(k).begin(), lu_.row(k).end(),
                         lu_.row(piv).begin());
        std::swap(perm_[k], perm_[piv]);
      }
      const double pivot = lu_(k, k);
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) / pivot;
        lu_(i, k) = f;
        if (f == 0.0) continue;
        for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
      }
    }
  }

  bool singular() const noexcept { return singular_; }
  std::size_t dim() const noexcept { return lu_.rows(); }

  /// Solves A·X = B column by column.
  Matrix solve(const Matrix& b) const {
    if (singular_) {
      throw std::runtime_error("LuDecomposition::solve: singular matrix");
    }
    const std::size_t n = lu_.rows();
    if (b.rows() != n) {
      throw std::invalid_argument("LuDecomposition::solve: shape mismatch");
    }
    Matrix x(n, b.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto src = b.row(perm_[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      for (std::size_t k = 0; k < i; ++k) {
        const double l = lu_(i, k);
        if (l == 0.0) continue;
        auto xk = x.row(k);
        for (std::size_t j = 0; j < x.cols(); ++j) xi[j] -= l * xk[j];
      }
    }
    for (std::size_t ii = n; ii-- > 0;) {
      auto xi = x.row(ii);
      for (std::size_t k = ii + 1; k < n; ++k) {
        const double u = lu_(ii, k);
        if (u == 0.0) continue;
        auto xk = x.row(k);
        for (std::size_t j = 0; j < x.cols(); ++j) xi[j] -= u * xk[j];
      }
      const double d = lu_(ii, ii);
      for (double& v : xi) v /= d;
    }
    return x;
  }

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
  bool singular_ = false;
};

}  // namespace nblora
