#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nblora/completion.hpp"
#include "nblora/config.hpp"
#include "nblora/dp_merge.hpp"
#include "nblora/errors.hpp"
#include "nblora/grad.hpp"
#include "nblora/matrix_io.hpp"
#include "nblora/params.hpp"

namespace nblora::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct Shape {
  std::size_t m, n, r;
};

/// Shapes of the round-trip and gradient suites; the last one exercises the
/// full-rank branch of variant II (min(m, n) < r).
inline const std::vector<Shape>& suite_shapes() {
  static const std::vector<Shape> shapes{
      {6, 4, 2}, {10, 7, 4}, {12, 12, 12}, {9, 3, 5}};
  return shapes;
}

inline bool variant_fits(Variant v, const Shape& s) {
  return v == Variant::kI ? s.r <= std::min(s.m, s.n)
                          : s.r <= std::max(s.m, s.n);
}

inline constexpr std::size_t kRoundTripTargets = 50;
inline constexpr double kRoundTripTol = 1e-8;
inline constexpr std::size_t kGradCheckDraws = 20;

/// Prints variant,m,n,r,targets,max_error; fails if any error > 1e-8.
inline int cmd_roundtrip(std::uint64_t seed, std::ostream& out) {
  out << "variant,m,n,r,targets,max_error\n";
  bool ok = true;
  std::size_t job = 0;
  for (Variant v : {Variant::kI, Variant::kII}) {
    for (const Shape& s : suite_shapes()) {
      if (!variant_fits(v, s)) continue;
      Prng rng = Prng::derive(seed, job++);
      const RoundTripStats st =
          round_trip(v, s.m, s.n, s.r, kRoundTripTargets, rng);
      ok = ok && st.max_error <= kRoundTripTol;
      out << to_string(v) << ',' << s.m << ',' << s.n << ',' << s.r << ','
          << st.targets << ',' << format_double(st.max_error) << '\n';
    }
  }
  return ok ? kExitOk : kExitRuntime;
}

/// Prints kind,m,n,r,draws,max_rel_error,max_abs_error per forward map and
/// shape; fails if any draw exceeds the tolerances.
inline int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  out << "kind,m,n,r,draws,max_rel_error,max_abs_error\n";
  bool ok = true;
  std::size_t job = 0;
  for (ForwardKind k : {ForwardKind::kI, ForwardKind::kINormed,
                        ForwardKind::kII, ForwardKind::kIINormed}) {
    const Variant v = (k == ForwardKind::kI || k == ForwardKind::kINormed)
                          ? Variant::kI
                          : Variant::kII;
    for (const Shape& s : suite_shapes()) {
      if (!variant_fits(v, s)) continue;
      GradCheck worst;
      for (std::size_t d = 0; d < kGradCheckDraws; ++d) {
        Prng rng = Prng::derive(seed, job++);
        const GradCheck g = check_forward_gradient(k, s.m, s.n, s.r, d, rng);
        worst.max_rel_error = std::max(worst.max_rel_error, g.max_rel_error);
        worst.max_abs_error = std::max(worst.max_abs_error, g.max_abs_error);
      }
      ok = ok && worst.ok();
      out << to_string(k) << ',' << s.m << ',' << s.n << ',' << s.r << ','
          << kGradCheckDraws << ',' << format_double(worst.max_rel_error) << ','
          << format_double(worst.max_abs_error) << '\n';
    }
  }
  return ok ? kExitOk : kExitRuntime;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

inline int cmd_complete(const std::string& config_path,
                        const std::filesystem::path& out_dir,
                        std::ostream& out) {
  const CompletionJob job = parse_completion_config(load_json(config_path));
  GeneratedProblem g = generate_problem(job.setup);
  g.problem.mode = job.mode;
  g.problem.gamma = job.gamma;
  g.problem.bound_delta = job.bound_delta;
  g.problem.param_rank = job.param_rank;
  const CompletionResult r = solve(g.problem, g.truth, job.solve);

  std::filesystem::create_directories(out_dir);
  {
    auto os = open_output(out_dir / "trace.csv");
    write_trace_csv(os, r.trace);
  }
  save_matrix_csv(out_dir / "solution.csv", r.w);
  save_matrix_csv(out_dir / "truth.csv", g.truth.w_true);

  const MetricRecord& last = r.trace.records.back();
  out << "variant=" << to_string(job.solve.variant)
      << " steps=" << last.step << " fit_rmse=" << last.fit_rmse
      << " test_rmse=" << last.test_rmse
      << " nuclear_norm=" << last.nuclear_norm
      << " numerical_rank=" << last.numerical_rank << '\n';
  return kExitOk;
}

inline int cmd_dpmerge(const std::string& config_path,
                       const std::filesystem::path& out_dir,
                       std::ostream& out) {
  const MergeConfig c = parse_merge_config(load_json(config_path));
  const MergeWorld world = generate_tasks(c);
  const TrainedAdapters adapters = train_all(world, c);
  const auto rows = sweep(world, adapters, c);

  std::filesystem::create_directories(out_dir);
  {
    auto os = open_output(out_dir / "dpmerge_results.csv");
    write_results_csv(os, rows);
  }
  const Vector nb = mean_accuracy(rows, MergeMethod::kNb, c.sigma_list);
  const Vector lora = mean_accuracy(rows, MergeMethod::kLora, c.sigma_list);
  out << "sigma,nb_mean_accuracy,lora_mean_accuracy\n";
  for (std::size_t i = 0; i < c.sigma_list.size(); ++i) {
    out << c.sigma_list[i] << ',' << nb[i] << ',' << lora[i] << '\n';
  }
  return kExitOk;
}

/// Entry point: parses argv, runs the subcommand, maps failures to exit
/// codes (1 for usage and validation, 2 for runtime failures).
inline int run(int argc, const char* const* argv, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"Norm-bounded low-rank parameterizations: checks and experiments",
               "nblora"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config;
  std::string out_dir = ".";

  auto* rt = app.add_subcommand("roundtrip",
                                "forward(inverse(W)) = W on random targets");
  rt->add_option("--seed", seed, "PRNG seed");
  auto* gc = app.add_subcommand("gradcheck",
                                "analytic vs central-difference gradients");
  gc->add_option("--seed", seed, "PRNG seed");
  auto* cp = app.add_subcommand("complete", "matrix completion run");
  cp->add_option("--config", config, "JSON config")->required();
  cp->add_option("--out", out_dir, "output directory");
  auto* dp = app.add_subcommand("dpmerge", "noisy adapter merging sweep");
  dp->add_option("--config", config, "JSON config")->required();
  dp->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (rt->parsed()) return cmd_roundtrip(seed, out);
    if (gc->parsed()) return cmd_gradcheck(seed, out);
    if (cp->parsed()) return cmd_complete(config, out_dir, out);
    if (dp->parsed()) return cmd_dpmerge(config, out_dir, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

inline int run(int argc, const char* const* argv) {
  return run(argc, argv, std::cout, std::cerr);
}

}  // namespace nblora::cli
