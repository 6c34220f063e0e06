#pragma once

#include <cstddef>
#include <string>

#include "nblora/errors.hpp"
#include "nblora/matrix.hpp"
#include "nblora/matrix_io.hpp"
#include "nblora/prng.hpp"
#include "nblora/spectral.hpp"

namespace nblora {

/// Free parameters of the rectangular Cayley transform of a q×r matrix
/// (q >= r): a square block x (r×r) and a tall block y ((q-r)×r).
struct CayleyParam {
  Matrix x;
  Matrix y;

  std::size_t r() const noexcept { return x.rows(); }
  std::size_t q() const noexcept { return x.rows() + y.rows(); }

  static CayleyParam zeros(std::size_t q, std::size_t r) {
    check_shape(q, r);
    return {Matrix(r, r), Matrix(q - r, r)};
  }

  static CayleyParam random(std::size_t q, std::size_t r, Prng& rng,
                            double stddev) {
    check_shape(q, r);
    CayleyParam f{rng.gaussian_matrix(r, r, stddev),
                  rng.gaussian_matrix(q - r, r, stddev)};
    return f;
  }

  void validate() const {
    if (x.rows() != x.cols() || y.cols() != x.cols()) {
      throw std::invalid_argument("CayleyParam: inconsistent block shapes");
    }
    if (!all_finite(x) || !all_finite(y)) {
      throw std::invalid_argument("CayleyParam: non-finite entries");
    }
  }

 private:
  static void check_shape(std::size_t q, std::size_t r) {
    if (q < r) {
      throw PreconditionViolated("Cayley transform needs q >= r, got q=" +
                                 std::to_string(q) +
                                 ", r=" + std::to_string(r));
    }
  }
};

/// Tall matrix with orthonormal columns, as produced by cayley_forward.
struct SemiOrthogonal {
  Matrix g;
};

/// Forward result plus what the adjoint pass needs.
struct CayleyTape {
  Matrix z;  // X - Xᵀ + YᵀY
  Matrix g;
};

namespace detail {

inline Matrix cayley_z(const CayleyParam& f) {
  return f.x - f.x.transpose() + matmul_tn(f.y, f.y);
}

}  // namespace detail

/// G = [(I-Z)(I+Z)⁻¹ ; -2Y(I+Z)⁻¹] with Z = X - Xᵀ + YᵀY.
///
/// The symmetric part of I+Z is I + YᵀY, so the solve never meets a
/// singular matrix for finite input.
inline CayleyTape cayley_forward_tape(const CayleyParam& f) {
  f.validate();
  const std::size_t r = f.r();
  CayleyTape tape;
  tape.z = detail::cayley_z(f);
  const Matrix eye = Matrix::identity(r);
  const Matrix numer = vstack(eye - tape.z, -2.0 * f.y);
  // G(I+Z) = M  <=>  (I+Z)ᵀ Gᵀ = Mᵀ
  const LuDecomposition lu((eye + tape.z).transpose());
  if (lu.singular()) {
    throw std::logic_error("cayley_forward: I+Z singular");
  }
  tape.g = lu.solve(numer.transpose()).transpose();
  return tape;
}

inline SemiOrthogonal cayley_forward(const CayleyParam& f) {
  return {cayley_forward_tape(f).g};
}

/// Adjoint of cayley_forward: maps ∂L/∂G to ∂L/∂(X, Y).
inline CayleyParam cayley_backward(const CayleyParam& f,
                                   const CayleyTape& tape,
                                   const Matrix& g_bar) {
  const std::size_t r = f.r();
  if (g_bar.rows() != f.q() || g_bar.cols() != r) {
    throw std::invalid_argument("cayley_backward: g_bar shape mismatch");
  }
  const LuDecomposition lu(Matrix::identity(r) + tape.z);
  // R = Ḡ(I+Z)⁻ᵀ
  const Matrix rr = lu.solve(g_bar.transpose()).transpose();
  const Matrix r_top = rr.top_rows(r);
  const Matrix r_bot = rr.bottom_rows(f.y.rows());
  const Matrix z_bar = -matmul_tn(tape.g, rr) - r_top;
  const Matrix z_sym = z_bar + z_bar.transpose();
  CayleyParam grad;
  grad.x = z_bar - z_bar.transpose();
  grad.y = -2.0 * r_bot + f.y * z_sym;
  return grad;
}

/// Smallest singular value of I+U below which cayley_inverse refuses.
inline constexpr double kTopBlockSingularTol = 1e-10;

/// Constructs (X, Y) with cayley_forward(X, Y) = g, for g whose top r×r
/// block U has I+U invertible:
///   Z = (I+U)⁻¹(I-U),  X = Z/2,  Y = -V(I+Z)/2.
/// The result is one preimage among many; only the image is unique.
inline CayleyParam cayley_inverse(const SemiOrthogonal& so) {
  const Matrix& g = so.g;
  const std::size_t r = g.cols();
  if (g.rows() < r) {
    throw PreconditionViolated("cayley_inverse: matrix must be tall");
  }
  const Matrix eye = Matrix::identity(r);
  const Matrix u = g.top_rows(r);
  const Matrix v = g.bottom_rows(g.rows() - r);
  const Matrix ipu = eye + u;
  if (r > 0) {
    const Vector sv = singular_values(ipu);
    if (sv.back() <= kTopBlockSingularTol) {
      throw SingularTopBlock(
          "cayley_inverse: I+U is singular (smallest singular value " +
          format_double(sv.back()) + ")");
    }
  }
  const LuDecomposition lu(ipu);
  const Matrix z = lu.solve(eye - u);
  CayleyParam f;
  f.x = 0.5 * z;
  f.y = -0.5 * (v * (eye + z));
  return f;
}

/// Sign vector p (entries ±1) such that I + diag(p)·qᵀ is invertible.
///
/// Builds A_{k+1} = A_k + s_k e_k q_kᵀ from A_1 = I while tracking A_k⁻¹ by
/// Sherman-Morrison, choosing s_k = sgn(q_kᵀ A_k⁻¹ e_k) with sgn(0) = +1 so
/// that every rank-one denominator 1 + s_k q_kᵀ A_k⁻¹ e_k is at least 1.
inline Vector choose_sign_matrix(const Matrix& q) {
  if (q.rows() != q.cols()) {
    throw std::invalid_argument("choose_sign_matrix: q must be square");
  }
  const std::size_t r = q.rows();
  Matrix inv = Matrix::identity(r);
  Vector signs(r, 1.0);
  Vector col(r), row(r);
  for (std::size_t k = 0; k < r; ++k) {
    // col = A⁻¹ e_k, row = q_kᵀ A⁻¹
    for (std::size_t i = 0; i < r; ++i) col[i] = inv(i, k);
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      const double qik = q(i, k);
      if (qik == 0.0) continue;
      auto ri = inv.row(i);
      for (std::size_t j = 0; j < r; ++j) row[j] += qik * ri[j];
    }
    const double c = row[k];
    const double s = c >= 0.0 ? 1.0 : -1.0;
    signs[k] = s;
    const double scale = s / (1.0 + s * c);
    for (std::size_t i = 0; i < r; ++i) {
      if (col[i] == 0.0) continue;
      auto ri = inv.row(i);
      const double a = scale * col[i];
      for (std::size_t j = 0; j < r; ++j) ri[j] -= a * row[j];
    }
  }
  return signs;
}

}  // namespace nblora
