// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

// Helpers shared by the unit tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "sparse_sched/trainer.hpp"

namespace sparse_sched::testing {

struct Brute {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<int> units;
};

/// Exhaustive enumeration. Among equal-cost optima the DP backtrack prefers the smallest
/// unit at the last slot, then the previous slot, so compare reversed tuples.
inline Brute brute_force(const Eigen::MatrixXd& costs, std::int64_t budget, bool at_most = false) {
  const auto slots = static_cast<int>(costs.rows());
  const int u = static_cast<int>(costs.cols()) - 1;
  Brute best;
  std::vector<int> cur(static_cast<std::size_t>(slots), 0);
  std::function<void(int, std::int64_t, double)> rec = [&](int i, std::int64_t used, double c) {
    if (i == slots) {
      const bool feasible = at_most ? used <= budget : used == budget;
      const bool earlier = c == best.cost && std::lexicographical_compare(cur.rbegin(), cur.rend(), best.units.rbegin(),
                                                                          best.units.rend());
      if (feasible && (c < best.cost || earlier)) {
        best.cost = c;
        best.units = cur;
      }
      return;
    }
    for (int s = 0; s <= u; ++s) {
      cur[static_cast<std::size_t>(i)] = s;
      rec(i + 1, used + s, c + costs(i, s));
    }
  };
  rec(0, 0, 0.0);
  return best;
}

/// 16-token model small enough for finite differences.
inline ToyDiTConfig tiny_config(int blocks = 1, int steps = 2) {
  ToyDiTConfig c;
  c.num_blocks = blocks;
  c.token_count = 16;
  c.model_dim = 8;
  c.mlp_hidden = 16;
  c.context_tokens = 4;
  c.num_heads = 2;
  c.num_steps = steps;
  c.seed = 3;
  return c;
}

struct GradientCheck {
  Eigen::MatrixXd analytic;
  Eigen::MatrixXd numeric;
  double norm_relative_error = 0.0;  // ||analytic - numeric|| / ||numeric||
  double max_entry_error = 0.0;      // max |analytic - numeric| / max |numeric|
};

/// Straight-through gradient of the batch loss w.r.t. layer costs against central
/// differences of the surrogate loss L(p(C) + onehot - p(C0)), with the token
/// rankings of the unperturbed pass held fixed.
inline GradientCheck ste_gradient_check(const TrainContext& ctx, const CostMatrix& costs, double h = 1e-5) {
  const auto& c = ctx.model->config;
  const std::vector<int> batch = {0};
  const CostGradient g = layer_cost_gradient(ctx, costs, batch);
  const StraightThroughGates st = gates_from_dp(costs, g.schedule);
  const StudentPlan base = plan_for_schedule(c, g.schedule);
  const auto& teacher = ctx.train.teacher[0];
  const LossFn loss = [&](const Matrix<double>& x0) { return ctx.loss(teacher, x0); };
  const auto orders = student_pass(*ctx.model, ctx.selector, ctx.train.conditions[0], ctx.train.noises[0], base, loss,
                                   false)
                          .orders;

  auto surrogate = [&](const CostMatrix& perturbed) {
    StudentPlan plan = base;
    plan.gates = st.surrogate(perturbed.relaxed_gates());
    plan.frozen_orders = &orders;
    return student_pass(*ctx.model, ctx.selector, ctx.train.conditions[0], ctx.train.noises[0], plan, loss, false).loss;
  };

  GradientCheck r;
  r.analytic = g.grad;
  r.numeric = Eigen::MatrixXd::Zero(costs.values.rows(), costs.values.cols());
  for (Eigen::Index i = 0; i < costs.values.size(); ++i) {
    CostMatrix plus = costs, minus = costs;
    plus.values.data()[i] += h;
    minus.values.data()[i] -= h;
    r.numeric.data()[i] = (surrogate(plus) - surrogate(minus)) / (2.0 * h);
  }
  const double scale = std::max(r.numeric.cwiseAbs().maxCoeff(), 1e-300);
  r.norm_relative_error = (r.analytic - r.numeric).norm() / std::max(r.numeric.norm(), 1e-300);
  r.max_entry_error = (r.analytic - r.numeric).cwiseAbs().maxCoeff() / scale;
  return r;
}

}  // namespace sparse_sched::testing
