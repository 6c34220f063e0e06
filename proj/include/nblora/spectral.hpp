#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "nblora/errors.hpp"
#include "nblora/matrix.hpp"
#include "nblora/prng.hpp"

namespace nblora {

/// Thin SVD m = u·diag(sigma)·vᵀ with k = min(rows, cols) triplets.
/// sigma is non-negative and sorted non-increasing; u and v have
/// orthonormal columns (columns for zero singular values are completed).
struct SvdResult {
  Matrix u;
  Vector sigma;
  Matrix v;

  Matrix reconstruct() const {
    return matmul_nt(scale_cols(u, sigma), v);
  }
};

/// Schatten-p norm selector. Only the nuclear, Frobenius and spectral norms
/// are supported.
enum class SchattenP { kOne, kTwo, kInf };

inline std::string_view to_string(SchattenP p) {
  switch (p) {
    case SchattenP::kOne:
      return "1";
    case SchattenP::kTwo:
      return "2";
    case SchattenP::kInf:
      return "inf";
  }
  return "?";
}

inline std::optional<SchattenP> parse_schatten_p(std::string_view s) {
  if (s == "1") return SchattenP::kOne;
  if (s == "2") return SchattenP::kTwo;
  if (s == "inf" || s == "infinity") return SchattenP::kInf;
  return std::nullopt;
}

inline double vector_pnorm(std::span<const double> v, SchattenP p) {
  double acc = 0.0;
  switch (p) {
    case SchattenP::kOne:
      for (double x : v) acc += std::abs(x);
      return acc;
    case SchattenP::kTwo: {
      // Scaled to avoid overflow on large entries.
      double scale = 0.0;
      for (double x : v) scale = std::max(scale, std::abs(x));
      if (scale == 0.0) return 0.0;
      for (double x : v) acc += (x / scale) * (x / scale);
      return scale * std::sqrt(acc);
    }
    case SchattenP::kInf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
  }
  return acc;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, std::span<const double> x,
                 std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Projects `c` off every column of `basis` (twice, for stability).
inline void project_out(const std::vector<Vector>& basis, Vector& c) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) axpy(-dot(b, c), b, c);
  }
}

constexpr int kMaxJacobiSweeps = 60;
constexpr double kJacobiTol = 1e-15;
constexpr std::uint64_t kSvdCompletionSeed = 0x5eedULL;

}  // namespace detail

/// Appends `extra` orthonormal columns to the orthonormal columns of `u`.
///
/// Candidates are Gaussian draws from Prng(seed), Gram-Schmidt projected
/// against the accumulated basis; a candidate whose residual (after unit
/// normalization of the draw) falls below 1e-6 is discarded and redrawn.
inline Matrix orthonormal_completion(const Matrix& u, std::size_t extra,
                                     std::uint64_t seed = 0) {
  const std::size_t m = u.rows();
  const std::size_t k = u.cols();
  if (k + extra > m) {
    throw PreconditionViolated(
        "orthonormal_completion: " + std::to_string(k) + " + " +
        std::to_string(extra) + " columns exceed dimension " +
        std::to_string(m));
  }
  if (extra == 0) return u;
  const Matrix gram = matmul_tn(u, u);
  if (max_abs_diff(gram, Matrix::identity(k)) > 1e-8) {
    throw PreconditionViolated(
        "orthonormal_completion: input columns are not orthonormal");
  }

  std::vector<Vector> basis;
  basis.reserve(k + extra);
  for (std::size_t j = 0; j < k; ++j) basis.push_back(u.col(j));

  Prng rng(seed);
  while (basis.size() < k + extra) {
    Vector c(m);
    for (double& x : c) x = rng.gaussian();
    const double n0 = detail::norm2(c);
    if (n0 == 0.0) continue;
    for (double& x : c) x /= n0;
    detail::project_out(basis, c);
    const double n1 = detail::norm2(c);
    if (n1 < 1e-6) continue;
    for (double& x : c) x /= n1;
    basis.push_back(std::move(c));
  }

  Matrix out(m, k + extra);
  for (std::size_t j = 0; j < basis.size(); ++j) out.set_col(j, basis[j]);
  return out;
}

/// Thin SVD by one-sided Jacobi rotations on the taller orientation.
///
/// A column pair (p, q) is rotated while |a_p·a_q| > 1e-15·‖a_p‖‖a_q‖;
/// the sweep loop stops once a full sweep performs no rotation. Throws
/// std::runtime_error if 60 sweeps do not suffice.
inline SvdResult svd(const Matrix& m) {
  if (!all_finite(m)) {
    throw std::invalid_argument("svd: non-finite input");
  }
  if (m.rows() < m.cols()) {
    SvdResult t = svd(m.transpose());
    return {std::move(t.v), std::move(t.sigma), std::move(t.u)};
  }

  const std::size_t rows = m.rows();
  const std::size_t n = m.cols();

  // Column-major working copies: a[j] is column j of m, v[j] column j of V.
  std::vector<Vector> a(n, Vector(rows));
  std::vector<Vector> v(n, Vector(n, 0.0));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) a[j][i] = m(i, j);
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

  bool converged = (n < 2);
  for (int sweep = 0; sweep < detail::kMaxJacobiSweeps && !converged;
       ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = detail::dot(a[p], a[p]);
        const double beta = detail::dot(a[q], a[q]);
        const double gamma = detail::dot(a[p], a[q]);
        if (gamma == 0.0 ||
            std::abs(gamma) <= detail::kJacobiTol * std::sqrt(alpha * beta)) {
          continue;
        }
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double ap = a[p][i];
          const double aq = a[q][i];
          a[p][i] = c * ap - s * aq;
          a[q][i] = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v[p][i];
          const double vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    throw std::runtime_error("svd: Jacobi iteration did not converge");
  }

  Vector norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = detail::norm2(a[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) {
                     return norms[x] > norms[y];
                   });

  constexpr double kZero = std::numeric_limits<double>::min() * 1e4;
  SvdResult out{Matrix(rows, n), Vector(n), Matrix(n, n)};
  std::size_t nonzero = 0;
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    out.sigma[jj] = norms[j];
    out.v.set_col(jj, v[j]);
    if (norms[j] > kZero) {
      Vector col = a[j];
      for (double& x : col) x /= norms[j];
      out.u.set_col(jj, col);
      nonzero = jj + 1;
    }
  }
  if (nonzero < n) {
    const Matrix done = out.u.left_cols(nonzero);
    out.u = orthonormal_completion(done, n - nonzero,
                                   detail::kSvdCompletionSeed);
    for (std::size_t jj = nonzero; jj < n; ++jj) out.sigma[jj] = 0.0;
  }
  return out;
}

inline Vector singular_values(const Matrix& m) { return svd(m).sigma; }

/// Thin Householder QR of a tall matrix a (rows >= cols): a = q·r with q
/// having orthonormal columns and r upper triangular.
struct QrResult {
  Matrix q;
  Matrix r;
};

inline QrResult thin_qr(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  if (m < k) throw std::invalid_argument("thin_qr: matrix is wide");
  Matrix w = a;
  std::vector<Vector> reflectors(k);
  for (std::size_t j = 0; j < k; ++j) {
    Vector x(m - j);
    for (std::size_t i = j; i < m; ++i) x[i - j] = w(i, j);
    const double nx = detail::norm2(x);
    Vector h = x;
    if (nx > 0.0) {
      h[0] += std::copysign(nx, x[0]);
      const double nh = detail::norm2(h);
      for (double& e : h) e /= nh;
      for (std::size_t c = j; c < k; ++c) {
        double s = 0.0;
        for (std::size_t i = j; i < m; ++i) s += h[i - j] * w(i, c);
        for (std::size_t i = j; i < m; ++i) w(i, c) -= 2.0 * s * h[i - j];
      }
    } else {
      std::fill(h.begin(), h.end(), 0.0);
    }
    reflectors[j] = std::move(h);
  }
  QrResult out{Matrix(m, k), Matrix(k, k)};
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) out.r(i, j) = w(i, j);
  for (std::size_t j = 0; j < k; ++j) out.q(j, j) = 1.0;
  for (std::size_t jj = k; jj-- > 0;) {
    const Vector& h = reflectors[jj];
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t i = jj; i < m; ++i) s += h[i - jj] * out.q(i, c);
      if (s == 0.0) continue;
      for (std::size_t i = jj; i < m; ++i) out.q(i, c) -= 2.0 * s * h[i - jj];
    }
  }
  return out;
}

/// Rank-k truncated SVD of left·rightᵀ (left m×k, right n×k) computed from
/// the k×k core after QR of both factors. Falls back to the dense SVD when
/// k exceeds either dimension.
inline SvdResult svd_of_product(const Matrix& left, const Matrix& right) {
  if (left.cols() != right.cols()) {
    throw std::invalid_argument("svd_of_product: factor rank mismatch");
  }
  const std::size_t k = left.cols();
  if (k > left.rows() || k > right.rows()) {
    return svd(matmul_nt(left, right));
  }
  const QrResult ql = thin_qr(left);
  const QrResult qr = thin_qr(right);
  const SvdResult core = svd(matmul_nt(ql.r, qr.r));
  return {ql.q * core.u, core.sigma, qr.q * core.v};
}

inline double schatten_norm(const Matrix& m, SchattenP p) {
  return vector_pnorm(singular_values(m), p);
}

/// σ_j(a) <= b_sigma[j] + tol for every j, with σ_j and b_sigma[j] taken
/// as zero past their lengths.
inline bool sigma_dominated(std::span<const double> a_sigma,
                            std::span<const double> b_sigma, double tol) {
  for (std::size_t j = 0; j < a_sigma.size(); ++j) {
    const double bound = j < b_sigma.size() ? b_sigma[j] : 0.0;
    if (a_sigma[j] > bound + tol) return false;
  }
  return true;
}

inline bool sigma_dominated(const Matrix& a, std::span<const double> b_sigma,
                            double tol) {
  if (tol < 0.0) throw std::invalid_argument("sigma_dominated: tol < 0");
  return sigma_dominated(singular_values(a), b_sigma, tol);
}

/// Number of singular values above `rel_tol`·σ₁.
inline std::size_t numerical_rank(std::span<const double> sigma,
                                  double rel_tol) {
  if (sigma.empty() || sigma[0] <= 0.0) return 0;
  const double cut = rel_tol * sigma[0];
  return static_cast<std::size_t>(
      std::count_if(sigma.begin(), sigma.end(),
                    [cut](double s) { return s > cut; }));
}

}  // namespace nblora
