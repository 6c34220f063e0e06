#include <gtest/gtest.h>

#include <cmath>

#include "nblora/grad.hpp"

using namespace nblora;

namespace {

template <ParameterSet P>
double max_entry(const P& p) {
  double m = 0.0;
  for_each_block(p, [&](std::span<const double> s) {
    for (double x : s) m = std::max(m, std::abs(x));
  });
  return m;
}

template <ParameterSet P>
double max_diff(const P& a, const P& b) {
  std::vector<std::span<const double>> x, y;
  for_each_block(a, [&](std::span<const double> s) { x.push_back(s); });
  for_each_block(b, [&](std::span<const double> s) { y.push_back(s); });
  double m = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t i = 0; i < x[k].size(); ++i)
      m = std::max(m, std::abs(x[k][i] - y[k][i]));
  return m;
}

}  // namespace

TEST(GradForward, ZeroUpstreamGivesZeroBundle) {
  Prng rng(1);
  const ParamsI pi = ParamsI::random(6, 4, 2, rng, 1.0);
  const ParamsII pii = ParamsII::random(6, 4, 3, rng, 1.0);
  EXPECT_EQ(max_entry(grad_forward_I(pi, SingularBudget({1.0, 1.0}),
                                     Matrix(6, 4))),
            0.0);
  EXPECT_EQ(max_entry(grad_forward_II_normed(
                pii, {SchattenP::kTwo, 1.0, 3}, Matrix(6, 4))),
            0.0);
}

TEST(GradForward, DiagonalGradientIsProjectedUpstream) {
  Prng rng(2);
  ParamsI p = ParamsI::random(7, 5, 3, rng, 1.0);
  p.d = {0.5, -0.2, 0.9};
  const SingularBudget s({1.0, 1.0, 1.0});
  const Matrix w_bar = rng.gaussian_matrix(7, 5);
  const ParamsI g = grad_forward_I(p, s, w_bar);
  const Matrix u = cayley_forward(p.f_u).g;
  const Matrix v = cayley_forward(p.f_v).g;
  const Matrix core = matmul_tn(u, w_bar * v);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.d[i], core(i, i), 1e-10);
}

TEST(GradForward, SeededVariantIIMatchesFiniteDifferences) {
  Prng rng(3);
  for (ForwardKind k : {ForwardKind::kII, ForwardKind::kIINormed}) {
    for (std::size_t draw = 0; draw < 3; ++draw) {
      const GradCheck c = check_forward_gradient(k, 8, 5, 3, draw, rng);
      EXPECT_TRUE(c.ok()) << to_string(k) << " rel " << c.max_rel_error
                          << " abs " << c.max_abs_error;
    }
  }
}

TEST(GradForward, GradientCheckSuite) {
  struct Shape {
    std::size_t m, n, r;
  };
  const Shape shapes[] = {{6, 4, 2}, {10, 7, 4}, {12, 12, 12}, {9, 3, 5}};
  Prng rng(4);
  for (ForwardKind k : {ForwardKind::kI, ForwardKind::kINormed,
                        ForwardKind::kII, ForwardKind::kIINormed}) {
    const bool v1 = k == ForwardKind::kI || k == ForwardKind::kINormed;
    for (const Shape& s : shapes) {
      if (v1 && s.r > std::min(s.m, s.n)) continue;
      // Twelve-square shapes are slow under finite differences; fewer draws.
      const std::size_t draws = s.r == 12 ? 4 : 20;
      for (std::size_t d = 0; d < draws; ++d) {
        const GradCheck c = check_forward_gradient(k, s.m, s.n, s.r, d, rng);
        ASSERT_TRUE(c.ok()) << to_string(k) << ' ' << s.m << 'x' << s.n
                            << " r" << s.r << " draw " << d << " rel "
                            << c.max_rel_error << " abs " << c.max_abs_error;
      }
    }
  }
}

TEST(GradForward, LinearInUpstream) {
  Prng rng(5);
  const ParamsI p = ParamsI::random(6, 5, 3, rng, 1.0);
  const NormBudget b{SchattenP::kOne, 1.5, 3};
  const Matrix a = rng.gaussian_matrix(6, 5), c = rng.gaussian_matrix(6, 5);
  const ParamsI ga = grad_forward_I_normed(p, b, a);
  const ParamsI gc = grad_forward_I_normed(p, b, c);
  ParamsI sum = grad_forward_I_normed(p, b, a + c);
  std::vector<std::span<double>> sb;
  std::vector<std::span<const double>> ab, cb;
  for_each_block(sum, [&](std::span<double> s) { sb.push_back(s); });
  for_each_block(ga, [&](std::span<const double> s) { ab.push_back(s); });
  for_each_block(gc, [&](std::span<const double> s) { cb.push_back(s); });
  for (std::size_t k = 0; k < sb.size(); ++k)
    for (std::size_t i = 0; i < sb[k].size(); ++i)
      EXPECT_NEAR(sb[k][i], ab[k][i] + cb[k][i], 1e-12);

  const ParamsII q = ParamsII::random(5, 6, 4, rng, 1.0);
  const SingularBudget s({1.0, 2.0, 0.5, 1.0});
  const Matrix a2 = rng.gaussian_matrix(5, 6), c2 = rng.gaussian_matrix(5, 6);
  const ParamsII lhs = grad_forward_II(q, s, a2 + c2);
  const ParamsII r1 = grad_forward_II(q, s, a2), r2 = grad_forward_II(q, s, c2);
  EXPECT_LT(max_abs_diff(lhs.f.x, r1.f.x + r2.f.x), 1e-12);
  EXPECT_LT(max_abs_diff(lhs.f.y, r1.f.y + r2.f.y), 1e-12);
}

TEST(FiniteDiff, ConstantAndQuadratic) {
  const Vector theta{3.0, -1.0};
  const Vector zero = finite_diff([](const Vector&) { return 7.0; }, theta, 1e-5);
  EXPECT_EQ(zero, (Vector{0.0, 0.0}));
  const Vector g =
      finite_diff([](const Vector& t) { return t[0] * t[0]; }, theta, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
  EXPECT_THROW(finite_diff([](const Vector&) { return 0.0; }, theta, 0.0),
               std::invalid_argument);
}

TEST(FiniteDiff, FrobeniusSquaredCrossOracle) {
  Prng rng(6);
  const ParamsII p = ParamsII::random(6, 4, 3, rng, 0.7);
  const SingularBudget s({1.5, 1.0, 0.5});
  const Matrix w = forward_II(p, s);
  const ParamsII analytic = grad_forward_II(p, s, 2.0 * w);
  const ParamsII numeric = finite_diff(
      [&](const ParamsII& q) {
        const double f = frobenius_norm(forward_II(q, s));
        return f * f;
      },
      p, 1e-5);
  EXPECT_TRUE(compare_gradients(analytic, numeric).ok());
}

TEST(NuclearSubgrad, Examples) {
  Matrix w(2, 2);
  w(0, 0) = 2.0;
  w(1, 1) = 3.0;
  EXPECT_LT(max_abs_diff(nuclear_subgrad(w), Matrix::identity(2)), 1e-12);
  EXPECT_EQ(max_abs(nuclear_subgrad(Matrix(3, 2))), 0.0);
}

TEST(NuclearSubgrad, InnerProductIsNuclearNorm) {
  Prng rng(7);
  for (int t = 0; t < 20; ++t) {
    const Matrix w = rng.gaussian_matrix(6, 4);
    EXPECT_NEAR(inner(nuclear_subgrad(w), w),
                schatten_norm(w, SchattenP::kOne), 1e-8);
  }
}

TEST(NuclearSubgrad, DirectionalDerivative) {
  Prng rng(8);
  const Matrix w = rng.gaussian_matrix(7, 5);
  const Matrix dir = rng.gaussian_matrix(7, 5);
  const double h = 1e-6;
  const double fd = (schatten_norm(w + h * dir, SchattenP::kOne) -
                     schatten_norm(w - h * dir, SchattenP::kOne)) /
                    (2 * h);
  EXPECT_NEAR(fd, inner(nuclear_subgrad(w), dir), 1e-5);
}

TEST(NuclearSubgrad, SpectralNormAtMostOne) {
  Prng rng(9);
  for (int t = 0; t < 30; ++t) {
    Matrix w = rng.gaussian_matrix(5, 2) * rng.gaussian_matrix(2, 6);
    EXPECT_LE(singular_values(nuclear_subgrad(w))[0], 1.0 + 1e-9);
  }
}

TEST(ReparamScaled, ZeroScaleKillsXGradient) {
  Prng rng(10);
  const ScaledCayleyParam p{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(2, 3),
                            0.0, 1.0};
  const CayleyParam up{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(2, 3)};
  const ScaledCayleyParam g = reparam_scaled_grad(p, up);
  EXPECT_EQ(max_abs(g.x), 0.0);
  EXPECT_GT(max_abs(g.y), 0.0);
}

TEST(ReparamScaled, UnitNormBlockMatchesFiniteDifferences) {
  Prng rng(11);
  Matrix x = rng.gaussian_matrix(4, 4);
  x *= 1.0 / frobenius_norm(x);
  ScaledCayleyParam p{x, rng.gaussian_matrix(3, 4), 1.0, 0.7};
  EXPECT_LT(max_abs_diff(p.effective().x, x), 1e-15);

  const Matrix w_bar = rng.gaussian_matrix(7, 4);
  auto loss = [&](const ScaledCayleyParam& q) {
    return inner(w_bar, cayley_forward(q.effective()).g);
  };
  const CayleyParam f = p.effective();
  const CayleyParam up = cayley_backward(f, cayley_forward_tape(f), w_bar);
  const ScaledCayleyParam analytic = reparam_scaled_grad(p, up);
  const ScaledCayleyParam numeric = finite_diff(loss, p, 1e-5);
  EXPECT_TRUE(compare_gradients(analytic, numeric).ok());
}

TEST(ReparamScaled, ZeroBlockIsDefined) {
  const ScaledCayleyParam p{Matrix(2, 2), Matrix(1, 2), 1.0, 1.0};
  EXPECT_EQ(max_abs(p.effective().x), 0.0);
  const CayleyParam up{Matrix(2, 2, 1.0), Matrix(1, 2, 1.0)};
  const ScaledCayleyParam g = reparam_scaled_grad(p, up);
  EXPECT_TRUE(all_finite(g.x));
  EXPECT_EQ(max_abs(g.x), 0.0);
  EXPECT_EQ(g.g, 0.0);
}

TEST(ReparamScaled, FullParameterSetsMatchFiniteDifferences) {
  Prng rng(12);
  const ScaledParamsII p = to_scaled(ParamsII::random(5, 4, 3, rng, 0.5));
  const NormBudget b{SchattenP::kTwo, 1.0, 3};
  const Matrix w_bar = rng.gaussian_matrix(5, 4);
  const ScaledParamsII analytic = reparam_scaled_grad(
      p, grad_forward_II_normed(p.effective(), b, w_bar));
  const ScaledParamsII numeric = finite_diff(
      [&](const ScaledParamsII& q) {
        return inner(w_bar, forward_II_normed(q.effective(), b));
      },
      p, 1e-5);
  EXPECT_TRUE(compare_gradients(analytic, numeric).ok());
  EXPECT_LT(max_diff(analytic, numeric), 1e-6);
}
