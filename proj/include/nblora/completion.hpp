#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "nblora/errors.hpp"
#include "nblora/grad.hpp"
#include "nblora/matrix.hpp"
#include "nblora/matrix_io.hpp"
#include "nblora/optimizer.hpp"
#include "nblora/params.hpp"
#include "nblora/prng.hpp"
#include "nblora/spectral.hpp"

namespace nblora {

struct Entry {
  std::size_t i = 0;
  std::size_t j = 0;
  double value = 0.0;
};

enum class CompletionMode { kPenalty, kBound };

/// Masked least squares over the observed entries, plus either a nuclear
/// norm penalty γ‖W‖_{S_1} (penalty mode) or the hard constraint
/// ‖W‖_{S_1} <= bound_delta (bound mode).
struct CompletionProblem {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<Entry> observed;
  CompletionMode mode = CompletionMode::kPenalty;
  double gamma = 0.0;
  double bound_delta = 0.0;
  std::size_t param_rank = 1;

  void validate() const {
    if (m == 0 || n == 0) {
      throw std::invalid_argument("completion: empty matrix shape");
    }
    if (param_rank == 0) {
      throw std::invalid_argument("completion: param_rank must be > 0");
    }
    if (mode == CompletionMode::kPenalty &&
        !(gamma >= 0.0 && std::isfinite(gamma))) {
      throw std::invalid_argument("completion: gamma must be >= 0");
    }
    if (mode == CompletionMode::kBound &&
        !(bound_delta > 0.0 && std::isfinite(bound_delta))) {
      throw std::invalid_argument("completion: bound_delta must be > 0");
    }
    std::vector<char> seen(m * n, 0);
    for (const Entry& e : observed) {
      if (e.i >= m || e.j >= n) {
        throw std::invalid_argument("completion: observed index out of range");
      }
      if (!std::isfinite(e.value)) {
        throw std::invalid_argument("completion: non-finite observation");
      }
      char& s = seen[e.i * n + e.j];
      if (s) throw std::invalid_argument("completion: duplicate observation");
      s = 1;
    }
  }
};

struct GroundTruth {
  Matrix w_true;
  Matrix w_noisy;
  std::vector<std::size_t> dropped;  // row-major flat indices, ascending
};

struct CompletionSetup {
  std::size_t m = 150;
  std::size_t n = 100;
  std::size_t true_rank = 10;
  double noise_std = 0.1;
  double drop_frac = 0.2;
  std::uint64_t seed = 0;
};

struct GeneratedProblem {
  CompletionProblem problem;
  GroundTruth truth;
};

/// W̃ = AᵀB + W_n with A (r×m), B (r×n) uniform on [0, 1) and W_n Gaussian,
/// then round(drop_frac·m·n) entries held out uniformly without replacement.
/// Draw order from one stream: A, B (row-major), noise, held-out indices.
/// The problem comes back in penalty mode with γ = 0 and param_rank = 2r.
inline GeneratedProblem generate_problem(const CompletionSetup& c) {
  if (c.true_rank == 0 || c.true_rank > std::min(c.m, c.n)) {
    throw std::invalid_argument("generate_problem: need 0 < true_rank <= min(m, n)");
  }
  if (!(c.drop_frac > 0.0 && c.drop_frac < 1.0)) {
    throw std::invalid_argument("generate_problem: drop_frac must lie in (0, 1)");
  }
  if (!(c.noise_std >= 0.0)) {
    throw std::invalid_argument("generate_problem: noise_std must be >= 0");
  }
  Prng rng(c.seed);
  const Matrix a = rng.uniform_matrix(c.true_rank, c.m);
  const Matrix b = rng.uniform_matrix(c.true_rank, c.n);
  GeneratedProblem out;
  GroundTruth& t = out.truth;
  t.w_true = matmul_tn(a, b);
  t.w_noisy = t.w_true + rng.gaussian_matrix(c.m, c.n, c.noise_std);

  const std::size_t total = c.m * c.n;
  const auto n_drop = static_cast<std::size_t>(
      std::llround(c.drop_frac * static_cast<double>(total)));
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t k = 0; k < n_drop; ++k) {
    const std::size_t pick = k + rng.index(total - k);
    std::swap(perm[k], perm[pick]);
  }
  t.dropped.assign(perm.begin(), perm.begin() + static_cast<long>(n_drop));
  std::sort(t.dropped.begin(), t.dropped.end());

  CompletionProblem& p = out.problem;
  p.m = c.m;
  p.n = c.n;
  p.param_rank = 2 * c.true_rank;
  p.observed.reserve(total - n_drop);
  std::size_t next = 0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    if (next < t.dropped.size() && t.dropped[next] == idx) {
      ++next;
      continue;
    }
    p.observed.push_back({idx / c.n, idx % c.n, t.w_noisy.values()[idx]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Singular values at or below this fraction of σ₁ do not count toward the
/// numerical rank.
inline constexpr double kNumericalRankTol = 1e-2;

struct MetricRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double fit_rmse = 0.0;
  double test_rmse = 0.0;
  double nuclear_norm = 0.0;
  std::size_t numerical_rank = 0;
  Vector singular_values;
};

struct MetricTrace {
  std::vector<MetricRecord> records;
};

namespace detail {

inline MetricRecord metrics_with_sigma(const Matrix& w, Vector sigma,
                                       const CompletionProblem& p,
                                       const GroundTruth& t) {
  MetricRecord r;
  double fit = 0.0;
  for (const Entry& e : p.observed) {
    const double diff = w(e.i, e.j) - e.value;
    fit += diff * diff;
  }
  r.fit_rmse = p.observed.empty()
                   ? 0.0
                   : std::sqrt(fit / static_cast<double>(p.observed.size()));
  double test = 0.0;
  for (std::size_t idx : t.dropped) {
    const double diff = w.values()[idx] - t.w_true.values()[idx];
    test += diff * diff;
  }
  r.test_rmse = t.dropped.empty()
                    ? 0.0
                    : std::sqrt(test / static_cast<double>(t.dropped.size()));
  r.nuclear_norm = vector_pnorm(sigma, SchattenP::kOne);
  r.numerical_rank = numerical_rank(sigma, kNumericalRankTol);
  r.singular_values = std::move(sigma);
  return r;
}

}  // namespace detail

/// fit RMSE on observed entries (vs W̃), test RMSE on held-out entries (vs
/// the noiseless W_t), nuclear norm and numerical rank.
inline MetricRecord metrics(const Matrix& w, const CompletionProblem& p,
                            const GroundTruth& t) {
  if (w.rows() != p.m || w.cols() != p.n || t.w_true.rows() != p.m ||
      t.w_true.cols() != p.n) {
    throw std::invalid_argument("metrics: shape mismatch");
  }
  return detail::metrics_with_sigma(w, singular_values(w), p, t);
}

/// Header plus one line per record. Singular-value columns are padded with
/// zeros to the longest record.
inline void write_trace_csv(std::ostream& os, const MetricTrace& trace) {
  std::size_t k = 0;
  for (const auto& r : trace.records) k = std::max(k, r.singular_values.size());
  os << "step,loss,fit_rmse,test_rmse,nuclear_norm,numerical_rank";
  for (std::size_t j = 0; j < k; ++j) os << ",sigma_" << (j + 1);
  os << '\n';
  for (const auto& r : trace.records) {
    os << r.step << ',' << format_double(r.loss) << ','
       << format_double(r.fit_rmse) << ',' << format_double(r.test_rmse) << ','
       << format_double(r.nuclear_norm) << ',' << r.numerical_rank;
    for (std::size_t j = 0; j < k; ++j) {
      os << ','
         << format_double(j < r.singular_values.size() ? r.singular_values[j]
                                                       : 0.0);
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Solver

/// Knobs of the unconstrained training loop. In penalty mode the diagonal
/// still goes through the norm-bounded map, with a loose cap ‖W‖_{S_cap_p}
/// <= cap_delta; cap_delta = 0 picks cap_scale times the spectral norm of
/// the rescaled zero-filled observations.
struct SolveConfig {
  Variant variant = Variant::kII;
  OptimConfig optim{.lr_peak = 0.1,
                    .weight_decay = 0.01,
                    .total_steps = 2000,
                    .warmup_frac = 0.1};
  double init_std = 0.1;
  std::uint64_t seed = 0;
  SchattenP cap_p = SchattenP::kInf;
  double cap_delta = 0.0;
  double cap_scale = 1.25;
  bool scaled_blocks = true;
};

struct CompletionResult {
  Matrix w;
  MetricTrace trace;
  double cap_delta = 0.0;  // penalty mode only
};

/// Spectral norm of the zero-filled observed matrix divided by the observed
/// fraction: a data-only estimate of σ₁ of the full matrix.
inline double observed_spectral_scale(const CompletionProblem& p) {
  Matrix z(p.m, p.n);
  for (const Entry& e : p.observed) z(e.i, e.j) = e.value;
  const double frac =
      static_cast<double>(p.observed.size()) / static_cast<double>(p.m * p.n);
  if (frac == 0.0) return 0.0;
  return singular_values(z).front() / frac;
}

namespace detail {

struct CompletionStep {
  Matrix w;
  Vector sigma;
  double loss = 0.0;
};

/// Loss and W̄ = ∂loss/∂W for the data term.
inline double masked_loss(const Matrix& w, const CompletionProblem& p,
                          Matrix& w_bar) {
  w_bar = Matrix(p.m, p.n);
  double loss = 0.0;
  for (const Entry& e : p.observed) {
    const double diff = w(e.i, e.j) - e.value;
    loss += diff * diff;
    w_bar(e.i, e.j) = 2.0 * diff;
  }
  return loss;
}

/// A non-finite iterate is divergence, reported before the SVD sees it.
inline void check_iterate(const Matrix& w) {
  if (!all_finite(w)) {
    throw DivergenceDetected("completion: non-finite iterate");
  }
}

inline double sign_of(double x) {
  return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

/// Evaluates the objective at p and, if `grad` is non-null, its gradient.
inline CompletionStep evaluate(const ParamsI& params, const CompletionProblem& p,
                               const NormBudget& budget, ParamsI* grad) {
  const Vector d_hat = scale_pnorm(params.d, budget);
  const TapeI tape = forward_I_tape(params, d_hat);
  CompletionStep st;
  st.w = tape.w;
  check_iterate(st.w);
  st.sigma = svd_of_product(scale_cols(tape.u.g, d_hat), tape.v.g).sigma;
  Matrix w_bar;
  st.loss = masked_loss(st.w, p, w_bar);
  const bool penalty = p.mode == CompletionMode::kPenalty;
  if (penalty) {
    // U, V orthonormal: ‖W‖_{S_1} = ‖d̂‖_1 exactly.
    st.loss += p.gamma * vector_pnorm(d_hat, SchattenP::kOne);
  }
  if (grad) {
    AdjointI adj = backward_I(params, tape, w_bar);
    if (penalty) {
      for (std::size_t i = 0; i < d_hat.size(); ++i) {
        adj.d_hat[i] += p.gamma * sign_of(d_hat[i]);
      }
    }
    *grad = {std::move(adj.f_u), std::move(adj.f_v),
             scale_pnorm_vjp(params.d, budget, adj.d_hat)};
  }
  return st;
}

inline CompletionStep evaluate(const ParamsII& params,
                               const CompletionProblem& p,
                               const NormBudget& budget, ParamsII* grad) {
  Vector s = scale_pnorm(params.d, budget);
  for (double& x : s) x = std::abs(x);
  const TapeII tape = forward_II_tape(params, s);
  CompletionStep st;
  st.w = tape.w;
  check_iterate(st.w);
  Vector two_s = s;
  for (double& x : two_s) x *= 2.0;
  const SvdResult sv = svd_of_product(
      scale_cols(tape.g.g.top_rows(params.m), two_s),
      tape.g.g.bottom_rows(params.n()));
  st.sigma = sv.sigma;
  Matrix w_bar;
  st.loss = masked_loss(st.w, p, w_bar);
  const bool penalty = p.mode == CompletionMode::kPenalty;
  if (penalty) {
    st.loss += p.gamma * vector_pnorm(sv.sigma, SchattenP::kOne);
  }
  if (grad) {
    if (penalty && p.gamma != 0.0) {
      Matrix sub = nuclear_subgrad_from(sv, p.m, p.n);
      sub *= p.gamma;
      w_bar += sub;
    }
    AdjointII adj = backward_II(params, tape, w_bar);
    *grad = {std::move(adj.f), abs_scaled_vjp(params.d, budget, adj.s),
             params.m};
  }
  return st;
}

template <class S>
  requires std::same_as<S, ScaledParamsI> || std::same_as<S, ScaledParamsII>
CompletionStep evaluate(const S& params, const CompletionProblem& p,
                        const NormBudget& budget, S* grad) {
  const auto eff = params.effective();
  auto eff_grad = eff;
  CompletionStep st = evaluate(eff, p, budget, grad ? &eff_grad : nullptr);
  if (grad) *grad = reparam_scaled_grad(params, eff_grad);
  return st;
}

template <ParameterSet P>
CompletionResult run_solver(P params, const CompletionProblem& p,
                            const GroundTruth& truth, const NormBudget& budget,
                            const SolveConfig& cfg) {
  CompletionResult out;
  out.cap_delta = budget.delta;
  OptimState<P> state(params, cfg.optim);
  P grad = zeros_like(params);
  const std::size_t total = cfg.optim.total_steps;
  out.trace.records.reserve(total + 1);
  for (std::size_t step = 0;; ++step) {
    const bool last = step == total;
    CompletionStep st = evaluate(params, p, budget, last ? nullptr : &grad);
    if (!std::isfinite(st.loss)) {
      throw DivergenceDetected("completion: non-finite loss at step " +
                               std::to_string(step));
    }
    MetricRecord rec = metrics_with_sigma(st.w, std::move(st.sigma), p, truth);
    rec.step = step;
    rec.loss = st.loss;
    out.trace.records.push_back(std::move(rec));
    if (last) {
      out.w = std::move(st.w);
      break;
    }
    adamw_step(params, grad, state);
  }
  return out;
}

}  // namespace detail

/// Unconstrained first-order solve over NB-LoRA parameters. Records one
/// metric line per step, including the initial point (step 0) and the
/// final iterate (step total_steps).
inline CompletionResult solve(const CompletionProblem& p,
                              const GroundTruth& truth,
                              const SolveConfig& cfg) {
  p.validate();
  cfg.optim.validate();
  if (truth.w_true.rows() != p.m || truth.w_true.cols() != p.n) {
    throw std::invalid_argument("solve: ground truth shape mismatch");
  }
  if (!(cfg.init_std >= 0.0)) {
    throw std::invalid_argument("solve: init_std must be >= 0");
  }
  NormBudget budget;
  budget.rank = p.param_rank;
  if (p.mode == CompletionMode::kBound) {
    budget.p = SchattenP::kOne;
    budget.delta = p.bound_delta;
  } else {
    budget.p = cfg.cap_p;
    budget.delta = cfg.cap_delta > 0.0
                       ? cfg.cap_delta
                       : cfg.cap_scale * observed_spectral_scale(p);
    if (!(budget.delta > 0.0)) budget.delta = 1.0;
  }
  Prng rng(cfg.seed);
  if (cfg.variant == Variant::kI) {
    auto init = ParamsI::random(p.m, p.n, p.param_rank, rng, cfg.init_std);
    if (cfg.scaled_blocks) {
      return detail::run_solver(to_scaled(init), p, truth, budget, cfg);
    }
    return detail::run_solver(std::move(init), p, truth, budget, cfg);
  }
  auto init = ParamsII::random(p.m, p.n, p.param_rank, rng, cfg.init_std);
  if (cfg.scaled_blocks) {
    return detail::run_solver(to_scaled(init), p, truth, budget, cfg);
  }
  return detail::run_solver(std::move(init), p, truth, budget, cfg);
}

}  // namespace nblora
