#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
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

enum class MergeMethod { kNb, kLora };

inline std::string_view to_string(MergeMethod m) {
  return m == MergeMethod::kNb ? "nb" : "lora";
}

/// Labelled samples, one feature row per sample.
struct Dataset {
  Matrix features;
  std::vector<std::size_t> labels;
};

struct MergeTask {
  Dataset data;
  std::vector<std::size_t> class_range;
};

struct MergeTrainConfig {
  std::size_t steps = 300;
  OptimConfig optim{.lr_peak = 5e-3, .weight_decay = 0.01};
  double init_std = 0.1;
};

struct MergeConfig {
  std::size_t K = 10;
  std::size_t num_classes = 10;
  std::size_t input_dim = 32;
  std::size_t feature_dim = 64;
  std::size_t samples_per_class = 200;
  std::size_t test_per_class = 100;
  double cluster_sep = 4.0;   // expected distance between cluster means
  double head_leak = 0.05;    // fraction of W_pt's head-visible part kept
  std::size_t adapter_rank = 4;
  double bound_ratio = 0.01;
  std::vector<double> sigma_list{0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  std::size_t noise_seeds = 10;
  std::uint64_t seed = 0;
  MergeTrainConfig train;

  void validate() const {
    if (K < 2) throw std::invalid_argument("dpmerge: K must be >= 2");
    if (num_classes < K) {
      throw std::invalid_argument("dpmerge: need at least one class per task");
    }
    if (input_dim == 0 || feature_dim == 0 || samples_per_class == 0 ||
        test_per_class == 0) {
      throw std::invalid_argument("dpmerge: dimensions must be > 0");
    }
    if (adapter_rank == 0 ||
        adapter_rank > std::max(input_dim, feature_dim)) {
      throw std::invalid_argument(
          "dpmerge: adapter_rank must lie in [1, max(input_dim, feature_dim)]");
    }
    if (!(bound_ratio > 0.0)) {
      throw std::invalid_argument("dpmerge: bound_ratio must be > 0");
    }
    if (!(cluster_sep >= 0.0) || !(head_leak >= 0.0 && head_leak <= 1.0)) {
      throw std::invalid_argument("dpmerge: bad cluster_sep or head_leak");
    }
    for (double s : sigma_list) {
      if (!(s >= 0.0) || !std::isfinite(s)) {
        throw std::invalid_argument("dpmerge: sigma values must be >= 0");
      }
    }
    if (noise_seeds == 0) {
      throw std::invalid_argument("dpmerge: noise_seeds must be > 0");
    }
    train.optim.validate();
  }
};

/// Frozen model: classifier logits are x·(W_pt + W)ᵀ·headᵀ.
struct MergeWorld {
  Matrix w_pt;  // feature_dim × input_dim
  Matrix head;  // num_classes × feature_dim, orthonormal rows
  std::vector<MergeTask> tasks;
  Dataset test;
};

namespace detail {

inline Dataset sample_clusters(const Matrix& means,
                               std::span<const std::size_t> classes,
                               std::size_t per_class, Prng& rng) {
  const std::size_t din = means.cols();
  Dataset d;
  d.features = Matrix(classes.size() * per_class, din);
  d.labels.reserve(classes.size() * per_class);
  std::size_t row = 0;
  for (std::size_t c : classes) {
    auto mu = means.row(c);
    for (std::size_t k = 0; k < per_class; ++k, ++row) {
      auto x = d.features.row(row);
      for (std::size_t j = 0; j < din; ++j) x[j] = mu[j] + rng.gaussian();
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace detail

/// Builds the frozen model and the task split. Class c is a unit-variance
/// Gaussian cluster around a random mean; task k owns the k-th contiguous
/// block of classes. W_pt is a random map with most of its head-visible
/// component removed, so the frozen model starts near chance and the
/// adapters carry the signal.
inline MergeWorld generate_tasks(const MergeConfig& c) {
  c.validate();
  Prng rng = Prng::derive(c.seed, 0);
  MergeWorld w;
  Matrix means = rng.gaussian_matrix(c.num_classes, c.input_dim,
                                     c.cluster_sep / std::numbers::sqrt2);
  if (c.num_classes > c.feature_dim) {
    throw std::invalid_argument("dpmerge: num_classes must be <= feature_dim");
  }
  w.head = thin_qr(rng.gaussian_matrix(c.feature_dim, c.num_classes)).q
               .transpose();
  const Matrix raw = rng.gaussian_matrix(
      c.feature_dim, c.input_dim, 1.0 / std::sqrt(double(c.input_dim)));
  w.w_pt = raw - (1.0 - c.head_leak) * matmul_tn(w.head, w.head * raw);

  const std::size_t base = c.num_classes / c.K;
  const std::size_t extra = c.num_classes % c.K;
  std::size_t next = 0;
  for (std::size_t k = 0; k < c.K; ++k) {
    MergeTask t;
    const std::size_t cnt = base + (k < extra ? 1 : 0);
    t.class_range.resize(cnt);
    std::iota(t.class_range.begin(), t.class_range.end(), next);
    next += cnt;
    t.data = detail::sample_clusters(means, t.class_range,
                                     c.samples_per_class, rng);
    w.tasks.push_back(std::move(t));
  }
  std::vector<std::size_t> all(c.num_classes);
  std::iota(all.begin(), all.end(), std::size_t{0});
  w.test = detail::sample_clusters(means, all, c.test_per_class, rng);
  return w;
}

// ---------------------------------------------------------------------------
// Classifier

/// Mean softmax cross-entropy of the logits and, if `w_bar` is non-null,
/// its gradient with respect to the adapter W.
inline double cross_entropy(const MergeWorld& world, const Matrix& w,
                            const Dataset& data, Matrix* w_bar) {
  const Matrix m = world.w_pt + w;
  const Matrix logits = matmul_nt(data.features, world.head * m);
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  Matrix dz(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - z[data.labels[i]];
    auto g = dz.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      g[j] = std::exp(z[j] - lse) / double(n);
    }
    g[data.labels[i]] -= 1.0 / double(n);
  }
  if (w_bar) *w_bar = matmul_tn(world.head, matmul_tn(dz, data.features));
  return loss / double(n);
}

inline double accuracy(const MergeWorld& world, const Matrix& w,
                       const Dataset& data) {
  const Matrix logits =
      matmul_nt(data.features, world.head * (world.w_pt + w));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    const auto best = static_cast<std::size_t>(
        std::max_element(z.begin(), z.end()) - z.begin());
    if (best == data.labels[i]) ++hits;
  }
  return logits.rows() ? double(hits) / double(logits.rows()) : 0.0;
}

/// B = bound_ratio·‖W_pt‖_F.
inline double sensitivity_bound(const MergeWorld& world,
                                const MergeConfig& c) {
  return c.bound_ratio * frobenius_norm(world.w_pt);
}

// ---------------------------------------------------------------------------
// Adapters

/// Plain low-rank adapter W = AᵀB (A r×rows, B r×cols).
struct LoraParams {
  Matrix a;
  Matrix b;

  Matrix weight() const { return matmul_tn(a, b); }
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LoraParams>
void for_each_block(P& p, F&& f) {
  f(p.a.values());
  f(p.b.values());
}

/// Trains one adapter on one task. nb uses variant II with ‖W‖_{S_2} <= B;
/// lora is the unconstrained AᵀB with A Gaussian and B zero at start.
inline Matrix train_adapter(const MergeWorld& world, const MergeTask& task,
                            MergeMethod method, const MergeConfig& c,
                            double bound, Prng& rng) {
  const std::size_t rows = world.w_pt.rows();
  const std::size_t cols = world.w_pt.cols();
  OptimConfig oc = c.train.optim;
  oc.total_steps = c.train.steps;
  auto check = [](double loss, std::size_t step) {
    if (!std::isfinite(loss)) {
      throw DivergenceDetected("train_adapter: non-finite loss at step " +
                               std::to_string(step));
    }
  };
  if (method == MergeMethod::kLora) {
    LoraParams p{rng.gaussian_matrix(c.adapter_rank, rows, c.train.init_std),
                 Matrix(c.adapter_rank, cols)};
    OptimState<LoraParams> st(p, oc);
    Matrix w_bar;
    for (std::size_t step = 0; step < c.train.steps; ++step) {
      check(cross_entropy(world, p.weight(), task.data, &w_bar), step);
      LoraParams g{p.b * w_bar.transpose(), p.a * w_bar};
      adamw_step(p, g, st);
    }
    return p.weight();
  }
  const NormBudget budget{SchattenP::kTwo, bound, c.adapter_rank};
  ScaledParamsII p = to_scaled(
      ParamsII::random(rows, cols, c.adapter_rank, rng, c.train.init_std));
  OptimState<ScaledParamsII> st(p, oc);
  Matrix w_bar;
  for (std::size_t step = 0; step < c.train.steps; ++step) {
    const ParamsII eff = p.effective();
    check(cross_entropy(world, forward_II_normed(eff, budget), task.data,
                        &w_bar),
          step);
    adamw_step(p,
               reparam_scaled_grad(p, grad_forward_II_normed(eff, budget,
                                                             w_bar)),
               st);
  }
  return forward_II_normed(p.effective(), budget);
}

/// w·min(1, b/‖w‖_F).
inline Matrix project_frobenius(const Matrix& w, double b) {
  if (!(b > 0.0)) throw std::invalid_argument("project_frobenius: b <= 0");
  const double nw = frobenius_norm(w);
  if (nw <= b) return w;
  return (b / nw) * w;
}

/// Accuracy of W_pt + (1/K)·Σ_k (W_k + σ·b·η_k), η_k i.i.d. standard normal
/// drawn in task order from Prng(noise_seed).
inline double merge_and_eval(const MergeWorld& world,
                             const std::vector<Matrix>& adapters, double sigma,
                             double b, std::uint64_t noise_seed,
                             const Dataset& test) {
  if (adapters.empty()) throw std::invalid_argument("merge: no adapters");
  for (const Matrix& a : adapters) {
    if (frobenius_norm(a) > b * (1.0 + 1e-9)) {
      throw PreconditionViolated("merge: adapter exceeds the sensitivity bound");
    }
  }
  Prng rng(noise_seed);
  Matrix sum(world.w_pt.rows(), world.w_pt.cols());
  for (const Matrix& a : adapters) {
    sum += a;
    if (sigma != 0.0) {
      sum += rng.gaussian_matrix(a.rows(), a.cols(), sigma * b);
    }
  }
  sum *= 1.0 / double(adapters.size());
  return accuracy(world, sum, test);
}

struct MergeResultRow {
  MergeMethod method;
  double sigma;
  std::size_t seed;
  double accuracy;
};

struct TrainedAdapters {
  double bound = 0.0;
  std::vector<Matrix> nb;
  std::vector<Matrix> lora;  // after project_frobenius
};

/// Adapter k of method nb draws its initialization from stream
/// derive(seed, 1 + k), lora from derive(seed, 1 + K + k).
inline TrainedAdapters train_all(const MergeWorld& world,
                                 const MergeConfig& c) {
  TrainedAdapters out;
  out.bound = sensitivity_bound(world, c);
  for (std::size_t k = 0; k < c.K; ++k) {
    Prng rng = Prng::derive(c.seed, 1 + k);
    out.nb.push_back(train_adapter(world, world.tasks[k], MergeMethod::kNb, c,
                                   out.bound, rng));
  }
  for (std::size_t k = 0; k < c.K; ++k) {
    Prng rng = Prng::derive(c.seed, 1 + c.K + k);
    out.lora.push_back(project_frobenius(
        train_adapter(world, world.tasks[k], MergeMethod::kLora, c, out.bound,
                      rng),
        out.bound));
  }
  return out;
}

/// Noise draw j of every sigma uses seed derive(seed, 1 + 2K + j) for both
/// methods, so the methods are compared on common noise.
inline std::uint64_t noise_seed(const MergeConfig& c, std::size_t j) {
  return SplitMix64(c.seed + 1 + 2 * c.K + j).next();
}

inline std::vector<MergeResultRow> sweep(const MergeWorld& world,
                                         const TrainedAdapters& adapters,
                                         const MergeConfig& c) {
  std::vector<MergeResultRow> rows;
  for (MergeMethod m : {MergeMethod::kNb, MergeMethod::kLora}) {
    const auto& ws = m == MergeMethod::kNb ? adapters.nb : adapters.lora;
    for (double sigma : c.sigma_list) {
      for (std::size_t j = 0; j < c.noise_seeds; ++j) {
        rows.push_back({m, sigma, j,
                        merge_and_eval(world, ws, sigma, adapters.bound,
                                       noise_seed(c, j), world.test)});
      }
    }
  }
  return rows;
}

inline void write_results_csv(std::ostream& os,
                              const std::vector<MergeResultRow>& rows) {
  os << "method,sigma,seed,accuracy\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << format_double(r.sigma) << ','
       << r.seed << ',' << format_double(r.accuracy) << '\n';
  }
}

/// Mean accuracy per sigma (in sigma_list order) for one method.
inline Vector mean_accuracy(const std::vector<MergeResultRow>& rows,
                            MergeMethod method,
                            std::span<const double> sigma_list) {
  Vector out(sigma_list.size(), 0.0);
  std::vector<std::size_t> cnt(sigma_list.size(), 0);
  for (const auto& r : rows) {
    if (r.method != method) continue;
    for (std::size_t i = 0; i < sigma_list.size(); ++i) {
      if (sigma_list[i] == r.sigma) {
        out[i] += r.accuracy;
        ++cnt[i];
        break;
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (cnt[i]) out[i] /= double(cnt[i]);
  }
  return out;
}

}  // namespace nblora
