#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <vector>

#include "nblora/cayley.hpp"
#include "nblora/matrix.hpp"
#include "nblora/params.hpp"
#include "nblora/spectral.hpp"

namespace nblora {

/// Gradients are stored in a parameter set of the same type and shape as
/// the parameters they differentiate.
template <ParameterSet P>
using GradientBundle = P;

// ---------------------------------------------------------------------------
// Vector-Jacobian products of the diagonal maps

/// Adjoint of project_interval. Where |d_i| <= s_i the map is the identity
/// (the boundary takes this branch); beyond it the output is constant.
inline Vector project_interval_vjp(std::span<const double> d,
                                   std::span<const double> s,
                                   std::span<const double> out_bar) {
  Vector g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    g[i] = std::abs(d[i]) <= s[i] ? out_bar[i] : 0.0;
  }
  return g;
}

namespace detail {

/// A subgradient of ‖d‖_p; sign(0) = 0, first maximizer for p = inf.
inline Vector pnorm_grad(std::span<const double> d, SchattenP p,
                         double norm) {
  Vector g(d.size(), 0.0);
  auto sgn = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
  switch (p) {
    case SchattenP::kOne:
      for (std::size_t i = 0; i < d.size(); ++i) g[i] = sgn(d[i]);
      break;
    case SchattenP::kTwo:
      if (norm > 0.0)
        for (std::size_t i = 0; i < d.size(); ++i) g[i] = d[i] / norm;
      break;
    case SchattenP::kInf: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < d.size(); ++i)
        if (std::abs(d[i]) > std::abs(d[best])) best = i;
      if (!d.empty()) g[best] = sgn(d[best]);
      break;
    }
  }
  return g;
}

}  // namespace detail

/// Adjoint of scale_pnorm. For ‖d‖_p <= 1 (boundary included) the map is
/// δ·d; above it, δ·d/‖d‖_p.
inline Vector scale_pnorm_vjp(std::span<const double> d, const NormBudget& b,
                              std::span<const double> out_bar) {
  const double norm = vector_pnorm(d, b.p);
  Vector g(d.size());
  if (norm <= 1.0) {
    for (std::size_t i = 0; i < d.size(); ++i) g[i] = b.delta * out_bar[i];
    return g;
  }
  double proj = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) proj += out_bar[i] * d[i];
  const Vector dn = detail::pnorm_grad(d, b.p, norm);
  for (std::size_t i = 0; i < d.size(); ++i) {
    g[i] = b.delta / norm * (out_bar[i] - proj * dn[i] / norm);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adjoints of the forward maps

/// Gradient of ⟨w_bar, W⟩ for variant I, with respect to the Cayley blocks
/// and to the diagonal actually used (d̂). The caller chains d̂ back to d.
struct AdjointI {
  CayleyParam f_u;
  CayleyParam f_v;
  Vector d_hat;
};

inline AdjointI backward_I(const ParamsI& p, const TapeI& t,
                           const Matrix& w_bar) {
  if (w_bar.rows() != t.w.rows() || w_bar.cols() != t.w.cols()) {
    throw std::invalid_argument("backward_I: w_bar shape mismatch");
  }
  const Matrix& u = t.u.g;
  const Matrix& v = t.v.g;
  const Matrix wv = w_bar * v;              // m×r
  const Matrix wtu = matmul_tn(w_bar, u);   // n×r
  AdjointI adj;
  adj.d_hat.assign(p.r(), 0.0);
  for (std::size_t i = 0; i < u.rows(); ++i) {
    auto ui = u.row(i);
    auto wi = wv.row(i);
    for (std::size_t j = 0; j < p.r(); ++j) adj.d_hat[j] += ui[j] * wi[j];
  }
  adj.f_u = cayley_backward(p.f_u, t.u, scale_cols(wv, t.d_hat));
  adj.f_v = cayley_backward(p.f_v, t.v, scale_cols(wtu, t.d_hat));
  return adj;
}

/// Gradient of ⟨w_bar, W⟩ for variant II, with respect to the Cayley blocks
/// and to the diagonal s actually used.
struct AdjointII {
  CayleyParam f;
  Vector s;
};

inline AdjointII backward_II(const ParamsII& p, const TapeII& t,
                             const Matrix& w_bar) {
  if (w_bar.rows() != t.w.rows() || w_bar.cols() != t.w.cols()) {
    throw std::invalid_argument("backward_II: w_bar shape mismatch");
  }
  const Matrix a_t = t.g.g.top_rows(p.m);
  const Matrix b_t = t.g.g.bottom_rows(p.n());
  const Matrix wb = w_bar * b_t;             // m×r
  const Matrix wta = matmul_tn(w_bar, a_t);  // n×r
  AdjointII adj;
  adj.s.assign(p.r(), 0.0);
  for (std::size_t i = 0; i < a_t.rows(); ++i) {
    auto ai = a_t.row(i);
    auto wi = wb.row(i);
    for (std::size_t j = 0; j < p.r(); ++j) adj.s[j] += 2.0 * ai[j] * wi[j];
  }
  Vector two_s = t.s;
  for (double& x : two_s) x *= 2.0;
  const Matrix g_bar =
      vstack(scale_cols(wb, two_s), scale_cols(wta, two_s));
  adj.f = cayley_backward(p.f, t.g, g_bar);
  return adj;
}

/// Chains the |·| in S = |scale_pnorm(d)| back to d (sign(0) = 0).
inline Vector abs_scaled_vjp(std::span<const double> d, const NormBudget& b,
                             std::span<const double> s_bar) {
  const Vector d_hat = scale_pnorm(d, b);
  Vector d_hat_bar(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double sg = d_hat[i] > 0.0 ? 1.0 : (d_hat[i] < 0.0 ? -1.0 : 0.0);
    d_hat_bar[i] = sg * s_bar[i];
  }
  return scale_pnorm_vjp(d, b, d_hat_bar);
}

/// ∂⟨w_bar, forward_I(p, s)⟩/∂p.
inline GradientBundle<ParamsI> grad_forward_I(const ParamsI& p,
                                              const SingularBudget& s,
                                              const Matrix& w_bar) {
  p.validate();
  const TapeI t = forward_I_tape(p, project_interval(p.d, s.values()));
  AdjointI adj = backward_I(p, t, w_bar);
  return {std::move(adj.f_u), std::move(adj.f_v),
          project_interval_vjp(p.d, s.values(), adj.d_hat)};
}

/// ∂⟨w_bar, forward_I_normed(p, b)⟩/∂p.
inline GradientBundle<ParamsI> grad_forward_I_normed(const ParamsI& p,
                                                     const NormBudget& b,
                                                     const Matrix& w_bar) {
  p.validate();
  b.validate();
  const TapeI t = forward_I_tape(p, scale_pnorm(p.d, b));
  AdjointI adj = backward_I(p, t, w_bar);
  return {std::move(adj.f_u), std::move(adj.f_v),
          scale_pnorm_vjp(p.d, b, adj.d_hat)};
}

/// ∂⟨w_bar, forward_II(p, s)⟩/∂p. d does not enter this map, so its
/// gradient is zero.
inline GradientBundle<ParamsII> grad_forward_II(const ParamsII& p,
                                                const SingularBudget& s,
                                                const Matrix& w_bar) {
  p.validate();
  const TapeII t = forward_II_tape(p, s.values());
  AdjointII adj = backward_II(p, t, w_bar);
  return {std::move(adj.f), Vector(p.r(), 0.0), p.m};
}

/// ∂⟨w_bar, forward_II_normed(p, b)⟩/∂p.
inline GradientBundle<ParamsII> grad_forward_II_normed(const ParamsII& p,
                                                       const NormBudget& b,
                                                       const Matrix& w_bar) {
  p.validate();
  b.validate();
  Vector s = scale_pnorm(p.d, b);
  for (double& x : s) x = std::abs(x);
  const TapeII t = forward_II_tape(p, s);
  AdjointII adj = backward_II(p, t, w_bar);
  return {std::move(adj.f), abs_scaled_vjp(p.d, b, adj.s), p.m};
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central differences (loss(θ + h·e) - loss(θ - h·e)) / 2h per coordinate.
template <ParameterSet P, class Loss>
  requires std::invocable<Loss&, const P&>
GradientBundle<P> finite_diff(Loss&& loss, const P& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff: h must be > 0");
  P work = params;
  P grad = zeros_like(params);
  std::vector<std::span<double>> wb, gb;
  for_each_block(work, [&](std::span<double> s) { wb.push_back(s); });
  for_each_block(grad, [&](std::span<double> s) { gb.push_back(s); });
  for (std::size_t b = 0; b < wb.size(); ++b) {
    for (std::size_t i = 0; i < wb[b].size(); ++i) {
      const double x0 = wb[b][i];
      wb[b][i] = x0 + h;
      const double lp = loss(static_cast<const P&>(work));
      wb[b][i] = x0 - h;
      const double lm = loss(static_cast<const P&>(work));
      wb[b][i] = x0;
      gb[b][i] = (lp - lm) / (2.0 * h);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Nuclear norm

/// Singular values at or below this fraction of σ₁ are treated as zero.
inline constexpr double kNuclearRankTol = 1e-10;

/// u·vᵀ over the numerically nonzero singular triplets: an element of the
/// subdifferential of ‖·‖_{S_1} at w (zero at w = 0).
inline Matrix nuclear_subgrad_from(const SvdResult& sv, std::size_t rows,
                                   std::size_t cols) {
  const std::size_t k = numerical_rank(sv.sigma, kNuclearRankTol);
  if (k == 0) return Matrix(rows, cols);
  return matmul_nt(sv.u.left_cols(k), sv.v.left_cols(k));
}

inline Matrix nuclear_subgrad(const Matrix& w) {
  return nuclear_subgrad_from(svd(w), w.rows(), w.cols());
}

// ---------------------------------------------------------------------------
// Scale-normalized Cayley blocks

/// g·x/‖x‖_F, defined as zero when ‖x‖_F = 0.
inline Matrix normalized_scale(const Matrix& x, double g) {
  const double nx = frobenius_norm(x);
  if (nx == 0.0) return Matrix(x.rows(), x.cols());
  return (g / nx) * x;
}

/// Raw parameters (x, y, g, h) of the effective Cayley blocks
/// (g·x/‖x‖_F, h·y/‖y‖_F).
struct ScaledCayleyParam {
  Matrix x;
  Matrix y;
  double g = 1.0;
  double h = 1.0;

  CayleyParam effective() const {
    return {normalized_scale(x, g), normalized_scale(y, h)};
  }
};

template <class S, class F>
  requires std::same_as<std::remove_const_t<S>, ScaledCayleyParam>
void for_each_block(S& p, F&& f) {
  f(p.x.values());
  f(p.y.values());
  f(std::span(&p.g, 1));
  f(std::span(&p.h, 1));
}

namespace detail {

/// Gradient of L through e = g·x/‖x‖ given ∂L/∂e; returns ∂L/∂x, adds
/// ∂L/∂g into `scale_bar`.
inline Matrix normalized_scale_vjp(const Matrix& x, double g,
                                   const Matrix& e_bar, double& scale_bar) {
  const double nx = frobenius_norm(x);
  if (nx == 0.0) {
    scale_bar = 0.0;
    return Matrix(x.rows(), x.cols());
  }
  const double proj = inner(e_bar, x) / nx;  // ⟨ē, x̂⟩
  scale_bar = proj;
  Matrix gx = e_bar - (proj / nx) * x;
  gx *= g / nx;
  return gx;
}

}  // namespace detail

/// Chain rule from the effective blocks' gradient (`upstream`, shaped as a
/// CayleyParam) to the raw (x, y, g, h).
inline ScaledCayleyParam reparam_scaled_grad(const ScaledCayleyParam& p,
                                             const CayleyParam& upstream) {
  ScaledCayleyParam grad;
  grad.x = detail::normalized_scale_vjp(p.x, p.g, upstream.x, grad.g);
  grad.y = detail::normalized_scale_vjp(p.y, p.h, upstream.y, grad.h);
  return grad;
}


/// Variant I / II parameters with every Cayley block in scaled form.
struct ScaledParamsI {
  ScaledCayleyParam f_u;
  ScaledCayleyParam f_v;
  Vector d;

  ParamsI effective() const { return {f_u.effective(), f_v.effective(), d}; }
};

struct ScaledParamsII {
  ScaledCayleyParam f;
  Vector d;
  std::size_t m = 0;

  ParamsII effective() const { return {f.effective(), d, m}; }
};

/// Scaled form whose effective blocks equal the given ones (g = ‖x‖_F).
inline ScaledCayleyParam to_scaled(const CayleyParam& f) {
  return {f.x, f.y, frobenius_norm(f.x), frobenius_norm(f.y)};
}

inline ScaledParamsI to_scaled(const ParamsI& p) {
  return {to_scaled(p.f_u), to_scaled(p.f_v), p.d};
}

inline ScaledParamsII to_scaled(const ParamsII& p) {
  return {to_scaled(p.f), p.d, p.m};
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ScaledParamsI>
void for_each_block(P& p, F&& f) {
  for_each_block(p.f_u, f);
  for_each_block(p.f_v, f);
  f(std::span(p.d));
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ScaledParamsII>
void for_each_block(P& p, F&& f) {
  for_each_block(p.f, f);
  f(std::span(p.d));
}

/// Chains a gradient with respect to the effective parameters back to the
/// scaled ones.
inline ScaledParamsI reparam_scaled_grad(const ScaledParamsI& p,
                                         const ParamsI& upstream) {
  return {reparam_scaled_grad(p.f_u, upstream.f_u),
          reparam_scaled_grad(p.f_v, upstream.f_v), upstream.d};
}

inline ScaledParamsII reparam_scaled_grad(const ScaledParamsII& p,
                                          const ParamsII& upstream) {
  return {reparam_scaled_grad(p.f, upstream.f), upstream.d, p.m};
}

// ---------------------------------------------------------------------------
// Gradient check

/// Coordinates whose analytic value is below this are compared absolutely.
inline constexpr double kGradCheckAbsFloor = 1e-8;

struct GradCheck {
  double max_rel_error = 0.0;  // over coordinates with |analytic| >= floor
  double max_abs_error = 0.0;  // over coordinates with |analytic| < floor
  std::size_t coordinates = 0;

  bool ok(double rel_tol = 1e-5, double abs_tol = 1e-8) const {
    return max_rel_error <= rel_tol && max_abs_error <= abs_tol;
  }
};

template <ParameterSet P>
GradCheck compare_gradients(const P& analytic, const P& numeric) {
  std::vector<std::span<const double>> a, b;
  for_each_block(analytic, [&](std::span<const double> x) { a.push_back(x); });
  for_each_block(numeric, [&](std::span<const double> x) { b.push_back(x); });
  GradCheck r;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double err = std::abs(a[k][i] - b[k][i]);
      const double mag = std::abs(a[k][i]);
      if (mag < kGradCheckAbsFloor) {
        r.max_abs_error = std::max(r.max_abs_error, err);
      } else {
        r.max_rel_error = std::max(r.max_rel_error, err / mag);
      }
      ++r.coordinates;
    }
  }
  return r;
}

enum class ForwardKind { kI, kINormed, kII, kIINormed };

inline std::string_view to_string(ForwardKind k) {
  switch (k) {
    case ForwardKind::kI: return "I";
    case ForwardKind::kINormed: return "I_normed";
    case ForwardKind::kII: return "II";
    case ForwardKind::kIINormed: return "II_normed";
  }
  return "?";
}

/// One seeded draw: random parameters (entries N(0, 0.5²), d N(0, 1)),
/// random budget (s uniform in [0.5, 2), or p cycling through {1, 2, inf}
/// by `draw` with δ uniform in [0.5, 2)), random w_bar; compares
/// grad_forward against central differences of ⟨w_bar, W⟩.
inline GradCheck check_forward_gradient(ForwardKind kind, std::size_t m,
                                        std::size_t n, std::size_t r,
                                        std::size_t draw, Prng& rng,
                                        double h = 1e-5) {
  const Matrix w_bar = rng.gaussian_matrix(m, n);
  const NormBudget nb{static_cast<SchattenP>(draw % 3),
                      0.5 + 1.5 * rng.uniform(), r};
  if (kind == ForwardKind::kI || kind == ForwardKind::kINormed) {
    ParamsI p = ParamsI::random(m, n, r, rng, 0.5);
    p.d = rng.gaussian_vector(r);
    const SingularBudget s = random_budget(r, rng);
    if (kind == ForwardKind::kI) {
      return compare_gradients(
          grad_forward_I(p, s, w_bar),
          finite_diff([&](const ParamsI& q) { return inner(w_bar, forward_I(q, s)); },
                      p, h));
    }
    return compare_gradients(
        grad_forward_I_normed(p, nb, w_bar),
        finite_diff(
            [&](const ParamsI& q) { return inner(w_bar, forward_I_normed(q, nb)); },
            p, h));
  }
  ParamsII p = ParamsII::random(m, n, r, rng, 0.5);
  p.d = rng.gaussian_vector(r);
  const SingularBudget s = random_budget(r, rng);
  if (kind == ForwardKind::kII) {
    return compare_gradients(
        grad_forward_II(p, s, w_bar),
        finite_diff([&](const ParamsII& q) { return inner(w_bar, forward_II(q, s)); },
                    p, h));
  }
  return compare_gradients(
      grad_forward_II_normed(p, nb, w_bar),
      finite_diff(
          [&](const ParamsII& q) { return inner(w_bar, forward_II_normed(q, nb)); },
          p, h));
}

}  // namespace nblora
