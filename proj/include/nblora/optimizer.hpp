#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nblora/params.hpp"

namespace nblora {

enum class LrSchedule { kOneCycle, kConstant };

inline std::optional<LrSchedule> parse_lr_schedule(std::string_view s) {
  if (s == "one_cycle") return LrSchedule::kOneCycle;
  if (s == "constant") return LrSchedule::kConstant;
  return std::nullopt;
}

struct OptimConfig {
  double lr_peak = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t total_steps = 1000;
  double warmup_frac = 0.1;
  LrSchedule schedule = LrSchedule::kOneCycle;

  void validate() const {
    if (!(lr_peak >= 0.0) || !std::isfinite(lr_peak)) {
      throw std::invalid_argument("optimizer: lr_peak must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("optimizer: eps must be > 0");
    if (!(weight_decay >= 0.0)) {
      throw std::invalid_argument("optimizer: weight_decay must be >= 0");
    }
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) {
      throw std::invalid_argument("optimizer: warmup_frac must lie in (0, 1)");
    }
  }
};

/// Linear ramp 0 -> lr_peak over the first warmup_frac·total_steps steps,
/// then cosine decay to 0 at total_steps.
inline double one_cycle_lr(std::size_t step, const OptimConfig& c) {
  if (c.schedule == LrSchedule::kConstant) return c.lr_peak;
  const double total = static_cast<double>(c.total_steps);
  const double warm = c.warmup_frac * total;
  const double t = std::min(static_cast<double>(step), total);
  if (t < warm) return c.lr_peak * t / warm;
  const double rest = total - warm;
  if (rest <= 0.0) return c.lr_peak;
  const double frac = (t - warm) / rest;
  return 0.5 * c.lr_peak * (1.0 + std::cos(std::numbers::pi * frac));
}

/// AdamW state for a parameter set of type P.
template <ParameterSet P>
struct OptimState {
  std::size_t step = 0;
  P first_moment;
  P second_moment;
  OptimConfig config;

  OptimState(const P& like, OptimConfig cfg)
      : first_moment(zeros_like(like)),
        second_moment(zeros_like(like)),
        config(cfg) {
    config.validate();
  }
};

namespace detail {

template <class T, class P>
std::vector<std::span<T>> blocks_of(P& p) {
  std::vector<std::span<T>> out;
  for_each_block(p, [&](std::span<T> s) { out.push_back(s); });
  return out;
}

}  // namespace detail

/// One AdamW update in place. The learning rate is the schedule value at
/// the step being taken (state.step + 1), so the first update of a one-cycle
/// run is already nonzero.
template <ParameterSet P>
void adamw_step(P& params, const P& grads, OptimState<P>& state) {
  const OptimConfig& c = state.config;
  const double lr = one_cycle_lr(state.step + 1, c);
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * c.weight_decay;

  auto pb = detail::blocks_of<double>(params);
  auto gb = detail::blocks_of<const double>(grads);
  auto mb = detail::blocks_of<double>(state.first_moment);
  auto vb = detail::blocks_of<double>(state.second_moment);
  if (pb.size() != gb.size() || pb.size() != mb.size()) {
    throw std::invalid_argument("adamw_step: parameter structure mismatch");
  }
  for (std::size_t b = 0; b < pb.size(); ++b) {
    if (pb[b].size() != gb[b].size() || pb[b].size() != mb[b].size()) {
      throw std::invalid_argument("adamw_step: block " + std::to_string(b) +
                                  " shape mismatch");
    }
    for (std::size_t i = 0; i < pb[b].size(); ++i) {
      const double g = gb[b][i];
      double& m = mb[b][i];
      double& v = vb[b][i];
      m = c.beta1 * m + (1.0 - c.beta1) * g;
      v = c.beta2 * v + (1.0 - c.beta2) * g * g;
      double& theta = pb[b][i];
      theta *= decay;
      theta -= lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
    }
  }
}

}  // namespace nblora
