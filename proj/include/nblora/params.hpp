#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "nblora/cayley.hpp"
#include "nblora/errors.hpp"
#include "nblora/matrix.hpp"
#include "nblora/prng.hpp"
#include "nblora/spectral.hpp"

namespace nblora {

/// Per-singular-value bounds s (all strictly positive). The set it defines
/// is every matrix whose j-th singular value is at most the j-th largest s.
class SingularBudget {
 public:
  explicit SingularBudget(Vector s) : s_(std::move(s)) {
    if (s_.empty()) throw std::invalid_argument("SingularBudget: empty");
    for (double v : s_) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("SingularBudget: entries must be > 0");
      }
    }
  }

  std::span<const double> values() const noexcept { return s_; }
  std::size_t rank() const noexcept { return s_.size(); }
  double operator[](std::size_t i) const noexcept { return s_[i]; }

  /// s sorted non-increasing.
  Vector sorted() const {
    Vector v = s_;
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
  }

 private:
  Vector s_;
};

enum class Variant { kI, kII };

inline std::string_view to_string(Variant v) {
  return v == Variant::kI ? "I" : "II";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "I" || s == "i" || s == "1") return Variant::kI;
  if (s == "II" || s == "ii" || s == "2") return Variant::kII;
  return std::nullopt;
}

/// rank(W) <= rank and ‖W‖_{S_p} <= delta.
struct NormBudget {
  SchattenP p = SchattenP::kTwo;
  double delta = 1.0;
  std::size_t rank = 1;

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta)) {
      throw std::invalid_argument("NormBudget: delta must be > 0");
    }
    if (rank == 0) throw std::invalid_argument("NormBudget: rank must be > 0");
  }
};

/// s_i·d_i / max(|d_i|, s_i): clips each d_i into [-s_i, s_i].
inline Vector project_interval(std::span<const double> d,
                               std::span<const double> s) {
  if (d.size() != s.size()) {
    throw std::invalid_argument("project_interval: length mismatch");
  }
  Vector out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = s[i] * d[i] / std::max(std::abs(d[i]), s[i]);
  }
  return out;
}

/// δ·d / max(‖d‖_p, 1).
inline Vector scale_pnorm(std::span<const double> d, const NormBudget& b) {
  if (d.size() != b.rank) {
    throw std::invalid_argument("scale_pnorm: length does not match rank");
  }
  const double denom = std::max(vector_pnorm(d, b.p), 1.0);
  Vector out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = b.delta * d[i] / denom;
  return out;
}

/// Parameters of W = U·D·Vᵀ with U = cayley(f_u), V = cayley(f_v) and D
/// a clipped or norm-scaled diag(d).
struct ParamsI {
  CayleyParam f_u;  // m×r
  CayleyParam f_v;  // n×r
  Vector d;

  std::size_t m() const noexcept { return f_u.q(); }
  std::size_t n() const noexcept { return f_v.q(); }
  std::size_t r() const noexcept { return d.size(); }

  static ParamsI zeros(std::size_t m, std::size_t n, std::size_t r) {
    check_shape(m, n, r);
    return {CayleyParam::zeros(m, r), CayleyParam::zeros(n, r), Vector(r)};
  }

  static ParamsI random(std::size_t m, std::size_t n, std::size_t r,
                        Prng& rng, double stddev) {
    check_shape(m, n, r);
    ParamsI p;
    p.f_u = CayleyParam::random(m, r, rng, stddev);
    p.f_v = CayleyParam::random(n, r, rng, stddev);
    p.d = rng.gaussian_vector(r, stddev);
    return p;
  }

  void validate() const {
    f_u.validate();
    f_v.validate();
    if (f_u.r() != d.size() || f_v.r() != d.size()) {
      throw std::invalid_argument("ParamsI: rank mismatch between blocks");
    }
  }

  static void check_shape(std::size_t m, std::size_t n, std::size_t r) {
    if (r == 0 || m < r || n < r) {
      throw PreconditionViolated("variant I needs 0 < r <= min(m, n); got m=" +
                                 std::to_string(m) + " n=" +
                                 std::to_string(n) + " r=" +
                                 std::to_string(r));
    }
  }
};

/// Parameters of W = 2·Aᵀ·S·B where [Aᵀ; Bᵀ] = cayley(f) is (m+n)×r.
/// `m` fixes where the stacked Cayley output splits into A and B.
struct ParamsII {
  CayleyParam f;
  Vector d;
  std::size_t m = 0;

  std::size_t n() const noexcept { return f.q() - m; }
  std::size_t r() const noexcept { return f.r(); }

  static ParamsII zeros(std::size_t m, std::size_t n, std::size_t r) {
    check_shape(m, n, r);
    return {CayleyParam::zeros(m + n, r), Vector(r), m};
  }

  static ParamsII random(std::size_t m, std::size_t n, std::size_t r,
                         Prng& rng, double stddev) {
    check_shape(m, n, r);
    ParamsII p;
    p.m = m;
    p.f = CayleyParam::random(m + n, r, rng, stddev);
    p.d = rng.gaussian_vector(r, stddev);
    return p;
  }

  void validate() const {
    f.validate();
    if (m == 0 || m >= f.q()) {
      throw std::invalid_argument("ParamsII: bad row split");
    }
    if (d.size() != f.r()) {
      throw std::invalid_argument("ParamsII: d length does not match rank");
    }
  }

  /// The forward map only needs the Cayley shape, r <= m + n. Ranks above
  /// max(m, n) are legal there but the map is then not onto its budget set
  /// (for m = n = 1, r = 2 it is identically zero); require_complete guards
  /// the inverse.
  static void check_shape(std::size_t m, std::size_t n, std::size_t r) {
    if (m == 0 || n == 0) {
      throw std::invalid_argument("ParamsII: empty output shape");
    }
    if (r == 0 || r > m + n) {
      throw PreconditionViolated("variant II needs 0 < r <= m + n; got m=" +
                                 std::to_string(m) + " n=" +
                                 std::to_string(n) + " r=" +
                                 std::to_string(r));
    }
  }

  static void require_complete(std::size_t m, std::size_t n, std::size_t r) {
    check_shape(m, n, r);
    if (r > std::max(m, n)) {
      throw RankBudgetExceeded("variant II needs r <= max(m, n); got m=" +
                               std::to_string(m) + " n=" + std::to_string(n) +
                               " r=" + std::to_string(r));
    }
  }
};

/// Visits every learnable block of a parameter set as a flat span, in a
/// fixed order. Optimizers and finite differences are written against this.
template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ParamsI>
void for_each_block(P& p, F&& f) {
  f(p.f_u.x.values());
  f(p.f_u.y.values());
  f(p.f_v.x.values());
  f(p.f_v.y.values());
  f(std::span(p.d));
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ParamsII>
void for_each_block(P& p, F&& f) {
  f(p.f.x.values());
  f(p.f.y.values());
  f(std::span(p.d));
}

// Matrices and vectors are parameter sets too (a single block each), which
// lets finite_diff and the optimizer run on raw weights.
template <class M, class F>
  requires std::same_as<std::remove_const_t<M>, Matrix>
void for_each_block(M& m, F&& f) {
  f(m.values());
}

template <class V, class F>
  requires std::same_as<std::remove_const_t<V>, Vector>
void for_each_block(V& v, F&& f) {
  f(std::span(v));
}

template <class P>
concept ParameterSet = std::copy_constructible<P> && requires(P& p) {
  for_each_block(p, [](std::span<double>) {});
};

/// Same-shaped parameter set with every entry zero.
template <ParameterSet P>
P zeros_like(P p) {
  for_each_block(p, [](std::span<double> s) {
    std::fill(s.begin(), s.end(), 0.0);
  });
  return p;
}

template <ParameterSet P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  for_each_block(p, [&](std::span<const double> s) { n += s.size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Forward maps

/// Forward pass of variant I with the intermediates the adjoint needs.
struct TapeI {
  CayleyTape u;
  CayleyTape v;
  Vector d_hat;
  Matrix w;
};

inline TapeI forward_I_tape(const ParamsI& p, std::span<const double> d_hat) {
  TapeI t;
  t.u = cayley_forward_tape(p.f_u);
  t.v = cayley_forward_tape(p.f_v);
  t.d_hat.assign(d_hat.begin(), d_hat.end());
  t.w = matmul_nt(scale_cols(t.u.g, t.d_hat), t.v.g);
  return t;
}

/// W = U·diag(project_interval(d, s))·Vᵀ. Every output lies in the set
/// bounded by s.
inline Matrix forward_I(const ParamsI& p, const SingularBudget& s) {
  p.validate();
  if (s.rank() != p.r()) {
    throw std::invalid_argument("forward_I: budget length does not match r");
  }
  return forward_I_tape(p, project_interval(p.d, s.values())).w;
}

/// W = U·diag(δ·d/max(‖d‖_p, 1))·Vᵀ, so ‖W‖_{S_p} <= δ and rank(W) <= r.
inline Matrix forward_I_normed(const ParamsI& p, const NormBudget& b) {
  p.validate();
  b.validate();
  return forward_I_tape(p, scale_pnorm(p.d, b)).w;
}

struct TapeII {
  CayleyTape g;
  Vector s;  // the diagonal actually used
  Matrix w;
};

inline TapeII forward_II_tape(const ParamsII& p, std::span<const double> s) {
  TapeII t;
  t.g = cayley_forward_tape(p.f);
  t.s.assign(s.begin(), s.end());
  const Matrix a_t = t.g.g.top_rows(p.m);
  const Matrix b_t = t.g.g.bottom_rows(p.n());
  t.w = 2.0 * matmul_nt(scale_cols(a_t, t.s), b_t);
  return t;
}

/// W = 2·Aᵀ·diag(s)·B. σ_j(W) <= j-th largest s for every draw.
inline Matrix forward_II(const ParamsII& p, const SingularBudget& s) {
  p.validate();
  if (s.rank() != p.r()) {
    throw std::invalid_argument("forward_II: budget length does not match r");
  }
  return forward_II_tape(p, s.values()).w;
}

/// forward_II with S = diag(δ·|d|/max(‖d‖_p, 1)), so ‖W‖_{S_p} <= δ.
inline Matrix forward_II_normed(const ParamsII& p, const NormBudget& b) {
  p.validate();
  b.validate();
  Vector s = scale_pnorm(p.d, b);
  for (double& x : s) x = std::abs(x);
  return forward_II_tape(p, s).w;
}

// ---------------------------------------------------------------------------
// Inverses

namespace detail {

/// Returns the permutation that sorts s non-increasing (stable).
inline std::vector<std::size_t> descending_order(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

inline void check_in_budget(std::span<const double> sigma,
                            std::span<const double> s_sorted, double tol) {
  if (!sigma_dominated(sigma, s_sorted, tol)) {
    std::size_t j = 0;
    while (j < sigma.size() &&
           sigma[j] <= (j < s_sorted.size() ? s_sorted[j] : 0.0) + tol) {
      ++j;
    }
    throw BudgetViolated("target singular value " + std::to_string(j + 1) +
                         " (" + format_double(sigma[j]) +
                         ") exceeds its budget");
  }
}

/// Multiplies column j of `g` by sign[j] so that I + (top block) is
/// invertible, then inverts the Cayley transform.
inline CayleyParam signed_cayley_inverse(Matrix& g, Vector& signs) {
  const std::size_t r = g.cols();
  signs = choose_sign_matrix(g.top_rows(r));
  g = scale_cols(std::move(g), signs);
  return cayley_inverse(SemiOrthogonal{g});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Random members of the budget sets

/// r budgets drawn uniformly from [lo, hi).
inline SingularBudget random_budget(std::size_t r, Prng& rng, double lo = 0.5,
                                    double hi = 2.0) {
  Vector s(r);
  for (double& x : s) x = lo + (hi - lo) * rng.uniform();
  return SingularBudget(std::move(s));
}

/// u·diag(c)·vᵀ with random orthonormal u (m×k), v (n×k), k = min(m, n, r),
/// and c_j = t_j·(j-th largest s) for t_j uniform on [0, 1), or t_j = 1
/// when `saturate` (every singular value on its bound).
inline Matrix random_in_budget(std::size_t m, std::size_t n,
                               const SingularBudget& s, Prng& rng,
                               bool saturate = false) {
  const std::size_t k = std::min({m, n, s.rank()});
  const Matrix u = thin_qr(rng.gaussian_matrix(m, k)).q;
  const Matrix v = thin_qr(rng.gaussian_matrix(n, k)).q;
  const Vector sorted = s.sorted();
  Vector c(k);
  for (std::size_t j = 0; j < k; ++j) {
    c[j] = (saturate ? 1.0 : rng.uniform()) * sorted[j];
  }
  return matmul_nt(scale_cols(u, c), v);
}

/// Tolerance on σ_j(w) - s_j accepted by the inverse constructions.
inline constexpr double kInverseBudgetTol = 1e-8;

/// Parameters with forward_I(result, s) == w, for w in the set bounded by s.
///
/// Reduced SVD of w; singular triplet j goes to the slot holding the j-th
/// largest budget; each of U and V is re-signed column-wise (independent
/// sign vectors) so that its Cayley preimage exists; d absorbs both signs.
inline ParamsI inverse_I(const Matrix& w, const SingularBudget& s) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const std::size_t r = s.rank();
  ParamsI::check_shape(m, n, r);

  const SvdResult sv = svd(w);
  const Vector s_sorted = s.sorted();
  detail::check_in_budget(sv.sigma, s_sorted, kInverseBudgetTol);

  const auto slot = detail::descending_order(s.values());
  Matrix u(m, r), v(n, r);
  Vector d(r);
  for (std::size_t j = 0; j < r; ++j) {
    u.set_col(slot[j], sv.u.col(j));
    v.set_col(slot[j], sv.v.col(j));
    d[slot[j]] = std::min(sv.sigma[j], s[slot[j]]);
  }

  Vector sign_u, sign_v;
  ParamsI p;
  p.f_u = detail::signed_cayley_inverse(u, sign_u);
  p.f_v = detail::signed_cayley_inverse(v, sign_v);
  for (std::size_t i = 0; i < r; ++i) d[i] *= sign_u[i] * sign_v[i];
  p.d = std::move(d);
  return p;
}

/// Parameters with forward_II(result, s) == w, for w in the set bounded by s
/// and r <= max(m, n).
///
/// With J = Σ_w / S (budgets sorted descending),
///   Σ_a = (√(I+J) + √(I-J))/2,  Σ_b = (√(I+J) - √(I-J))/2,
/// Aᵀ = U_w Σ_a, Bᵀ = V_w Σ_b, so Σ_a² + Σ_b² = I and 2Σ_aΣ_b = J. When r
/// exceeds min(m, n) the thin factor on the short side is padded with zero
/// columns and the long side with an orthonormal completion, with (Σ_a, Σ_b)
/// set to (1, 0) or (0, 1) on the padded slots. Columns are then moved back
/// to the caller's budget order and re-signed for the Cayley inverse.
inline ParamsII inverse_II(const Matrix& w, const SingularBudget& s) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const std::size_t r = s.rank();
  ParamsII::require_complete(m, n, r);

  const SvdResult sv = svd(w);
  const Vector s_sorted = s.sorted();
  detail::check_in_budget(sv.sigma, s_sorted, kInverseBudgetTol);

  const std::size_t k = std::min(m, n);
  const std::size_t used = std::min(k, r);
  Matrix uw(m, r), vw(n, r);
  Vector sigma_a(r, 0.0), sigma_b(r, 0.0);
  for (std::size_t j = 0; j < used; ++j) {
    uw.set_col(j, sv.u.col(j));
    vw.set_col(j, sv.v.col(j));
    double jj = std::min(sv.sigma[j] / s_sorted[j], 1.0);
    if (jj >= 1.0 - 1e-12) jj = 1.0;
    const double plus = std::sqrt(1.0 + jj);
    const double minus = std::sqrt(1.0 - jj);
    sigma_a[j] = 0.5 * (plus + minus);
    sigma_b[j] = 0.5 * (plus - minus);
  }
  if (r > k) {
    // Full-rank case: pad the long side with an orthonormal completion.
    const std::size_t extra = r - k;
    if (m >= n) {
      const Matrix ext = orthonormal_completion(sv.u, extra);
      for (std::size_t j = k; j < r; ++j) {
        uw.set_col(j, ext.col(j));
        sigma_a[j] = 1.0;
      }
    } else {
      const Matrix ext = orthonormal_completion(sv.v, extra);
      for (std::size_t j = k; j < r; ++j) {
        vw.set_col(j, ext.col(j));
        sigma_b[j] = 1.0;
      }
    }
  }

  const Matrix stacked =
      vstack(scale_cols(std::move(uw), sigma_a),
             scale_cols(std::move(vw), sigma_b));
  const auto slot = detail::descending_order(s.values());
  Matrix g(m + n, r);
  for (std::size_t j = 0; j < r; ++j) g.set_col(slot[j], stacked.col(j));

  Vector signs;
  ParamsII p;
  p.m = m;
  p.f = detail::signed_cayley_inverse(g, signs);
  p.d = Vector(s.values().begin(), s.values().end());
  return p;
}

// ---------------------------------------------------------------------------
// Nonlinear layers with controlled Jacobian

enum class Activation { kRelu, kTanh };

namespace detail {

inline double activate(Activation a, double x) {
  return a == Activation::kRelu ? std::max(x, 0.0) : std::tanh(x);
}

inline Vector matvec(const Matrix& m, std::span<const double> x) {
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto mi = m.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += mi[j] * x[j];
    y[i] = acc;
  }
  return y;
}

/// mᵀ·x
inline Vector matvec_t(const Matrix& m, std::span<const double> x) {
  Vector y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto mi = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) y[j] += mi[j] * x[i];
  }
  return y;
}

inline void check_layer_diagonals(std::span<const double> d1,
                                  std::span<const double> d2,
                                  const SingularBudget& s, bool nonnegative) {
  if (d1.size() != s.rank() || d2.size() != s.rank()) {
    throw PreconditionViolated("bounded_layer: diagonal lengths must be r");
  }
  for (std::size_t i = 0; i < s.rank(); ++i) {
    const double prod = d1[i] * d2[i];
    const double slack = 1e-12 * s[i];
    if (std::abs(prod) > s[i] + slack || (nonnegative && prod < 0.0)) {
      throw PreconditionViolated(
          "bounded_layer: diagonal product " + std::to_string(i) +
          " is outside its bound");
    }
  }
}

}  // namespace detail

/// f(x) = U·D₁·φ(D₂·Vᵀx) with |d1·d2| <= s elementwise; the Jacobian of f
/// lies in the set bounded by s for every x when φ has slope in [0, 1].
inline Vector bounded_layer(const ParamsI& p, const SingularBudget& s,
                            std::span<const double> d1,
                            std::span<const double> d2, Activation act,
                            std::span<const double> x) {
  p.validate();
  detail::check_layer_diagonals(d1, d2, s, false);
  if (x.size() != p.n()) {
    throw std::invalid_argument("bounded_layer: input length must be n");
  }
  const Matrix u = cayley_forward(p.f_u).g;
  const Matrix v = cayley_forward(p.f_v).g;
  Vector h = detail::matvec_t(v, x);
  for (std::size_t i = 0; i < h.size(); ++i) {
    h[i] = d1[i] * detail::activate(act, d2[i] * h[i]);
  }
  return detail::matvec(u, h);
}

/// f(x) = 2·Aᵀ·D₁·φ(D₂·B·x) with 0 <= d1·d2 <= s elementwise.
inline Vector bounded_layer(const ParamsII& p, const SingularBudget& s,
                            std::span<const double> d1,
                            std::span<const double> d2, Activation act,
                            std::span<const double> x) {
  p.validate();
  detail::check_layer_diagonals(d1, d2, s, true);
  if (x.size() != p.n()) {
    throw std::invalid_argument("bounded_layer: input length must be n");
  }
  const Matrix g = cayley_forward(p.f).g;
  const Matrix a_t = g.top_rows(p.m);
  const Matrix b_t = g.bottom_rows(p.n());
  Vector h = detail::matvec_t(b_t, x);
  for (std::size_t i = 0; i < h.size(); ++i) {
    h[i] = 2.0 * d1[i] * detail::activate(act, d2[i] * h[i]);
  }
  return detail::matvec(a_t, h);
}

// ---------------------------------------------------------------------------
// Round trip

struct RoundTripStats {
  std::size_t targets = 0;
  double max_error = 0.0;  // max elementwise |forward(inverse(w)) - w|
};

/// forward(inverse(w, s), s) against w for `count` random targets in the
/// set bounded by s (a fresh random s per target). Every fifth target sits
/// on the boundary (σ_j(w) = s_j).
inline RoundTripStats round_trip(Variant v, std::size_t m, std::size_t n,
                                 std::size_t r, std::size_t count, Prng& rng) {
  RoundTripStats st;
  for (std::size_t k = 0; k < count; ++k) {
    const SingularBudget s = random_budget(r, rng);
    const Matrix w = random_in_budget(m, n, s, rng, k % 5 == 4);
    const Matrix back = v == Variant::kI ? forward_I(inverse_I(w, s), s)
                                         : forward_II(inverse_II(w, s), s);
    st.max_error = std::max(st.max_error, max_abs_diff(back, w));
    ++st.targets;
  }
  return st;
}

}  // namespace nblora
