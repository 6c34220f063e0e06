// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nblora/cayley.hpp"
#include "nblora/completion.hpp"
#include "nblora/dp_merge.hpp"
#include "nblora/grad.hpp"
#include "nblora/params.hpp"

using namespace nblora;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> body;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

struct Shape {
  std::size_t m, n, r;
};
const Shape kShapes[] = {{6, 4, 2}, {10, 7, 4}, {12, 12, 12}, {9, 3, 5}};

bool fits(Variant v, const Shape& s) {
  return v == Variant::kI ? s.r <= std::min(s.m, s.n)
                          : s.r <= std::max(s.m, s.n);
}

// 1 ------------------------------------------------------------------------
Verdict round_trips() {
  Verdict v;
  double worst = 0.0;
  std::size_t targets = 0, job = 0;
  for (Variant var : {Variant::kI, Variant::kII}) {
    for (const Shape& s : kShapes) {
      if (!fits(var, s)) continue;
      Prng rng = Prng::derive(1, job++);
      const RoundTripStats st = round_trip(var, s.m, s.n, s.r, 50, rng);
      worst = std::max(worst, st.max_error);
      targets += st.targets;
    }
  }
  v.pass = worst <= 1e-8;
  v.detail = std::to_string(targets) + " targets, max error " +
             fmt("%.2e", worst) + " (tol 1e-8)";
  return v;
}

// 2 ------------------------------------------------------------------------
Verdict soundness() {
  Prng rng(2);
  std::size_t dom_fail = 0, norm_fail = 0, evals = 0;
  double worst_ratio = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.index(9), n = 2 + rng.index(9);
    const std::size_t r1 = 1 + rng.index(std::min(m, n));
    const std::size_t r2 = 1 + rng.index(std::max(m, n));
    const SingularBudget s1 = random_budget(r1, rng);
    const SingularBudget s2 = random_budget(r2, rng);
    ParamsI a = ParamsI::random(m, n, r1, rng, 1.0);
    a.d = rng.gaussian_vector(r1, 2.0);
    ParamsII b = ParamsII::random(m, n, r2, rng, 1.0);
    b.d = rng.gaussian_vector(r2, 2.0);
    dom_fail += !sigma_dominated(forward_I(a, s1), s1.sorted(), 1e-9);
    dom_fail += !sigma_dominated(forward_II(b, s2), s2.sorted(), 1e-9);
    evals += 2;
    for (int pi = 0; pi < 3; ++pi) {
      const auto p = static_cast<SchattenP>(pi);
      const double delta = 0.25 + 2.0 * rng.uniform();
      const double na =
          schatten_norm(forward_I_normed(a, {p, delta, r1}), p);
      const double nb =
          schatten_norm(forward_II_normed(b, {p, delta, r2}), p);
      norm_fail += na > delta * (1 + 1e-9);
      norm_fail += nb > delta * (1 + 1e-9);
      worst_ratio = std::max({worst_ratio, na / delta, nb / delta});
      evals += 2;
    }
  }
  Verdict v;
  v.pass = dom_fail == 0 && norm_fail == 0;
  v.detail = std::to_string(evals) + " forward evaluations, " +
             std::to_string(dom_fail) + " dominance and " +
             std::to_string(norm_fail) + " norm violations, max norm/delta " +
             fmt("%.12f", worst_ratio);
  return v;
}

// 3 ------------------------------------------------------------------------
Verdict sharpness() {
  Prng rng(3);
  const SingularBudget s({1.0, 1.0});
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const ParamsII p = ParamsII::random(1, 1, 2, rng, 1.0 + t % 5);
    worst = std::max(worst, max_abs(forward_II(p, s)));
  }
  Verdict v;
  v.pass = worst <= 1e-12;
  v.detail = "100 draws, max |W| " + fmt("%.2e", worst) + " (tol 1e-12)";
  return v;
}

// 4 ------------------------------------------------------------------------
Verdict lemmas() {
  Prng rng(4);
  double min_sigma = 1e300;
  for (int t = 0; t < 200; ++t) {
    const std::size_t r = 1 + t % 10;
    Matrix q;
    switch (t % 5) {
      case 0: q = -1.0 * Matrix::identity(r); break;
      case 1: q = thin_qr(rng.gaussian_matrix(r, r)).q; break;
      case 2: {
        const std::size_t k = std::max<std::size_t>(1, r / 2);
        q = rng.gaussian_matrix(r, k) * rng.gaussian_matrix(k, r);
        break;
      }
      case 3: q = Matrix(r, r); break;
      default: q = rng.gaussian_matrix(r, r, 3.0); break;
    }
    const Vector p = choose_sign_matrix(q);
    Matrix a = q.transpose();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) a(i, j) *= p[i];
    min_sigma = std::min(min_sigma,
                         singular_values(Matrix::identity(r) + a).back());
  }

  double worst = 0.0;
  std::size_t wrong_errors = 0;
  const std::pair<std::size_t, std::size_t> shapes[] = {
      {2, 1}, {5, 3}, {8, 8}, {20, 6}};
  for (int t = 0; t < 200; ++t) {
    const auto [q, r] = shapes[t % 4];
    const Matrix g = cayley_forward(CayleyParam::random(q, r, rng, 1.0)).g;
    try {
      worst = std::max(
          worst, max_abs_diff(cayley_forward(cayley_inverse({g})).g, g));
    } catch (const SingularTopBlock&) {
      ++wrong_errors;
    }
    // Reflecting a column whose top entry is on the diagonal (-1) makes
    // I + U singular; the inverse must refuse.
    Matrix h(q, r);
    for (std::size_t j = 0; j < r; ++j) h(j, j) = 1.0;
    h(t % r, t % r) = -1.0;
    try {
      cayley_inverse({h});
      ++wrong_errors;
    } catch (const SingularTopBlock&) {
    }
  }
  Verdict v;
  v.pass = min_sigma > 1e-8 && worst <= 1e-9 && wrong_errors == 0;
  v.detail = "sign lemma min sigma " + fmt("%.3e", min_sigma) +
             " over 200 inputs; 200 inverse round trips max error " +
             fmt("%.2e", worst) + "; " + std::to_string(wrong_errors) +
             " wrong singular-block verdicts";
  return v;
}

// 5 ------------------------------------------------------------------------
Verdict gradients() {
  double rel = 0.0, abs_err = 0.0;
  std::size_t draws = 0, job = 0;
  bool ok = true;
  for (ForwardKind k : {ForwardKind::kI, ForwardKind::kINormed,
                        ForwardKind::kII, ForwardKind::kIINormed}) {
    const Variant var = (k == ForwardKind::kI || k == ForwardKind::kINormed)
                            ? Variant::kI
                            : Variant::kII;
    for (const Shape& s : kShapes) {
      if (!fits(var, s)) continue;
      for (std::size_t d = 0; d < 20; ++d) {
        Prng rng = Prng::derive(5, job++);
        const GradCheck g = check_forward_gradient(k, s.m, s.n, s.r, d, rng);
        ok = ok && g.ok(1e-5, 1e-8);
        rel = std::max(rel, g.max_rel_error);
        abs_err = std::max(abs_err, g.max_abs_error);
        ++draws;
      }
    }
  }
  Verdict v;
  v.pass = ok;
  v.detail = std::to_string(draws) + " draws, max relative " +
             fmt("%.2e", rel) + " (tol 1e-5), max absolute " +
             fmt("%.2e", abs_err) + " (tol 1e-8)";
  return v;
}

// 6, 7, 9 ------------------------------------------------------------------
constexpr std::uint64_t kCompletionSeed = 0;
constexpr std::size_t kBlock = 200;
// A later 200-step block may exceed the previous one by at most this
// fraction before it counts as a sustained increase.
constexpr double kTrendSlack = 1e-3;

struct CompletionRun {
  CompletionResult result;
  GroundTruth truth;
  std::string trace_csv;
};

CompletionRun run_completion(Variant var, bool bound_mode) {
  GeneratedProblem g = generate_problem(CompletionSetup{.seed = kCompletionSeed});
  g.problem.param_rank = 20;
  if (bound_mode) {
    g.problem.mode = CompletionMode::kBound;
    g.problem.bound_delta =
        0.5 * schatten_norm(g.truth.w_true, SchattenP::kOne);
  } else {
    g.problem.gamma = 0.9;
  }
  SolveConfig c;
  c.variant = var;
  c.optim.lr_peak = 0.1;
  c.optim.total_steps = 2000;
  c.seed = SplitMix64(kCompletionSeed + 1).next();
  CompletionRun r{solve(g.problem, g.truth, c), g.truth, {}};
  std::ostringstream os;
  write_trace_csv(os, r.result.trace);
  r.trace_csv = os.str();
  return r;
}

// Largest relative rise of one post-warmup block mean over its predecessor.
double worst_block_rise(const MetricTrace& t, std::size_t warmup,
                        double MetricRecord::*field) {
  std::vector<double> means;
  for (std::size_t start = warmup; start + kBlock <= t.records.size() - 1;
       start += kBlock) {
    double s = 0.0;
    for (std::size_t k = start; k < start + kBlock; ++k) s += t.records[k].*field;
    means.push_back(s / kBlock);
  }
  double worst = -1.0;
  for (std::size_t k = 1; k < means.size(); ++k)
    worst = std::max(worst, means[k] / means[k - 1] - 1.0);
  return worst;
}

std::vector<std::string> g_completion_csv;
std::string g_merge_csv;

Verdict completion() {
  Verdict v;
  g_completion_csv.clear();
  for (Variant var : {Variant::kI, Variant::kII}) {
    const CompletionRun run = run_completion(var, false);
    g_completion_csv.push_back(run.trace_csv);
    const MetricTrace& t = run.result.trace;
    const MetricRecord& last = t.records.back();
    const double true_nuc =
        schatten_norm(run.truth.w_true, SchattenP::kOne);
    const double fit_rise = worst_block_rise(t, kBlock, &MetricRecord::fit_rmse);
    const double test_rise =
        worst_block_rise(t, kBlock, &MetricRecord::test_rmse);
    const double nuc_err = std::abs(last.nuclear_norm / true_nuc - 1.0);
    const Vector& sv = last.singular_values;
    double tail = 0.0;
    for (std::size_t j = 10; j < 20 && j < sv.size(); ++j)
      tail = std::max(tail, sv[j] / sv[9]);

    const bool trend = fit_rise <= kTrendSlack && test_rise <= kTrendSlack;
    const bool ok = trend && last.test_rmse <= 0.15 && nuc_err <= 0.15 &&
                    tail <= 0.10;
    v.pass = v.pass && ok;
    v.detail += std::string(v.detail.empty() ? "" : "; ") + "variant " +
                std::string(to_string(var)) + ": block rise fit " +
                fmt("%+.1e", fit_rise) + " test " + fmt("%+.1e", test_rise) +
                ", test RMSE " + fmt("%.4f", last.test_rmse) +
                " (<= 0.15), nuclear " + fmt("%.1f", last.nuclear_norm) +
                " vs " + fmt("%.1f", true_nuc) + " (" +
                fmt("%.1f", 100 * nuc_err) + "% <= 15%), tail sigma ratio " +
                fmt("%.3f", tail) + " (<= 0.10)";
  }
  return v;
}

Verdict bound_mode() {
  Verdict v;
  for (Variant var : {Variant::kI, Variant::kII}) {
    const CompletionRun run = run_completion(var, true);
    const double delta =
        0.5 * schatten_norm(run.truth.w_true, SchattenP::kOne);
    std::size_t violations = 0;
    double worst = 0.0;
    for (const MetricRecord& r : run.result.trace.records) {
      violations += r.nuclear_norm > delta * (1 + 1e-9);
      worst = std::max(worst, r.nuclear_norm / delta);
    }
    v.pass = v.pass && violations == 0;
    v.detail += std::string(v.detail.empty() ? "" : "; ") + "variant " +
                std::string(to_string(var)) + ": " +
                std::to_string(run.result.trace.records.size()) +
                " steps, " + std::to_string(violations) +
                " violations, max norm/delta " + fmt("%.12f", worst);
  }
  return v;
}

// 8 ------------------------------------------------------------------------
std::string run_merge(Vector& nb, Vector& lora, const MergeConfig& c) {
  const MergeWorld w = generate_tasks(c);
  const TrainedAdapters ad = train_all(w, c);
  const auto rows = sweep(w, ad, c);
  nb = mean_accuracy(rows, MergeMethod::kNb, c.sigma_list);
  lora = mean_accuracy(rows, MergeMethod::kLora, c.sigma_list);
  std::ostringstream os;
  write_results_csv(os, rows);
  return os.str();
}

Verdict merge() {
  const MergeConfig c;  // 7 sigma values, 10 noise seeds
  Vector nb, lora;
  g_merge_csv = run_merge(nb, lora, c);
  std::size_t wins = 0, inv_nb = 0, inv_lora = 0;
  std::string curve;
  for (std::size_t i = 0; i < nb.size(); ++i) {
    wins += nb[i] >= lora[i];
    if (i > 0) {
      inv_nb += nb[i] > nb[i - 1];
      inv_lora += lora[i] > lora[i - 1];
    }
    curve += fmt(" s=%g:", c.sigma_list[i]) + fmt("%.3f/", nb[i]) +
             fmt("%.3f", lora[i]);
  }
  Verdict v;
  v.pass = c.sigma_list.size() >= 6 && c.noise_seeds >= 5 &&
           2 * wins > nb.size() && inv_nb <= 1 && inv_lora <= 1;
  v.detail = "nb >= lora at " + std::to_string(wins) + "/" +
             std::to_string(nb.size()) + " sigmas, inversions nb " +
             std::to_string(inv_nb) + " lora " + std::to_string(inv_lora) +
             ", " + std::to_string(c.noise_seeds) + " noise seeds; nb/lora" +
             curve;
  return v;
}

// 9 ------------------------------------------------------------------------
Verdict determinism() {
  Verdict v;
  std::size_t same = 0, total = 0;
  const Variant vars[] = {Variant::kI, Variant::kII};
  for (std::size_t i = 0; i < 2; ++i) {
    const CompletionRun again = run_completion(vars[i], false);
    ++total;
    same += i < g_completion_csv.size() && again.trace_csv == g_completion_csv[i];
  }
  Vector nb, lora;
  ++total;
  same += !g_merge_csv.empty() && run_merge(nb, lora, MergeConfig{}) == g_merge_csv;
  v.pass = same == total;
  v.detail = std::to_string(same) + "/" + std::to_string(total) +
             " artifacts byte-identical (completion traces I and II, merge "
             "results)";
  return v;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "completeness round trips", 10, round_trips},
      {2, "soundness", 10, soundness},
      {3, "sharpness witness", 1, sharpness},
      {4, "appendix lemmas", 10, lemmas},
      {5, "gradient fidelity", 30, gradients},
      {6, "matrix completion", 600, completion},
      {7, "bound-mode constraint", 600, bound_mode},
      {8, "dp merge ordering", 300, merge},
      {9, "determinism", 900, determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.body();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::printf("%s criterion %d: %s: %s [%.2f s, budget %.0f s%s]\n",
                pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs,
                c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed ? 1 : 0;
}
