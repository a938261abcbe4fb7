// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "sparse_sched/model.hpp"

namespace sparse_sched {

/// Discrete noise schedule over a 1000-step training chain (scaled-linear betas),
/// subsampled to the sampler's step count with trailing spacing.
struct NoiseSchedule {
  static constexpr int kTrainSteps = 1000;
  static constexpr double kBetaStart = 0.00085;
  static constexpr double kBetaEnd = 0.012;

  std::vector<double> betas;       // per training step, increasing, in (0, 1)
  std::vector<double> alpha_bars;  // cumulative products
  std::vector<int> timesteps;      // sampler step -> training timestep, decreasing

  static NoiseSchedule make(int num_steps) {
    require(num_steps >= 1 && num_steps <= kTrainSteps, "NoiseSchedule: num_steps out of range");
    NoiseSchedule s;
    s.betas.resize(kTrainSteps);
    s.alpha_bars.resize(kTrainSteps);
    const double lo = std::sqrt(kBetaStart), hi = std::sqrt(kBetaEnd);
    double prod = 1.0;
    for (int i = 0; i < kTrainSteps; ++i) {
      const double r = lo + (hi - lo) * i / (kTrainSteps - 1);
      s.betas[i] = r * r;
      prod *= 1.0 - s.betas[i];
      s.alpha_bars[i] = prod;
    }
    for (int i = 0; i < num_steps; ++i)
      s.timesteps.push_back(static_cast<int>(std::lround(kTrainSteps - static_cast<double>(i) * kTrainSteps / num_steps)) - 1);
    return s;
  }

  int num_steps() const { return static_cast<int>(timesteps.size()); }
  double alpha_bar_at(int step) const { return alpha_bars[static_cast<std::size_t>(timesteps[static_cast<std::size_t>(step)])]; }
  /// alpha_bar the step lands on; 1 after the last step.
  double alpha_bar_after(int step) const { return step + 1 < num_steps() ? alpha_bar_at(step + 1) : 1.0; }

  /// Coefficients (a, b) with x_prev = a * x_t + b * eps for deterministic DDIM (eta = 0).
  std::pair<double, double> ddim_coefficients(int step) const {
    const double ab = alpha_bar_at(step), ab_prev = alpha_bar_after(step);
    const double a = std::sqrt(ab_prev / ab);
    const double b = std::sqrt(1.0 - ab_prev) - std::sqrt(ab_prev) * std::sqrt(1.0 - ab) / std::sqrt(ab);
    return {a, b};
  }
};

template <typename Scalar>
Matrix<Scalar> ddim_step(const NoiseSchedule& schedule, int step, const Matrix<Scalar>& latent, const Matrix<Scalar>& eps) {
  const auto [a, b] = schedule.ddim_coefficients(step);
  return (static_cast<Scalar>(a) * latent + static_cast<Scalar>(b) * eps).eval();
}

/// Full-compute noise prediction at one step.
template <typename Scalar>
Matrix<Scalar> dense_eps(const ToyDiTModel<Scalar>& model, const Matrix<Scalar>& latent, int step,
                         const Condition<Scalar>& condition, const ContextKV<Scalar>& context,
                         MacCounter* counter = nullptr) {
  const auto& c = model.config;
  const TokenMask all(static_cast<std::size_t>(c.token_count), true);
  Matrix<Scalar> h = stem(model, latent, step, condition);
  for (int l = 0; l < c.sublayer_count(); ++l) {
    const SubLayerId id = SubLayerId::at(c, step, l);
    const auto* ctx = id.kind == SubLayerKind::CrossAttn ? &context : nullptr;
    h += sublayer_forward(model, id, h, ctx, all, counter).output;
  }
  if (counter) counter->model += stem_head_macs(c);
  return head(model, h);
}

/// Teacher sampler: T deterministic DDIM steps with every sub-layer fully computed.
template <typename Scalar>
Matrix<Scalar> sample_dense(const ToyDiTModel<Scalar>& model, const Condition<Scalar>& condition,
                            const Matrix<Scalar>& initial_noise, MacCounter* counter = nullptr) {
  const auto& c = model.config;
  require(initial_noise.rows() == c.token_count && initial_noise.cols() == c.model_dim,
          "sample: initial noise must be N x D");
  const NoiseSchedule schedule = NoiseSchedule::make(c.num_steps);
  const ContextKV<Scalar> context = precompute_context(model, condition, counter);
  Matrix<Scalar> x = initial_noise;
  for (int t = 0; t < c.num_steps; ++t) x = ddim_step(schedule, t, x, dense_eps(model, x, t, condition, context, counter));
  return x;
}

}  // namespace sparse_sched
