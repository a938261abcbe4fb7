// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>

#include "sparse_sched/schedule.hpp"

namespace sparse_sched {

/// Softmax of -values / temperature.
inline Eigen::RowVectorXd relaxed_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& values, double temperature) {
  Eigen::RowVectorXd z = -values / temperature;
  z = (z.array() - z.maxCoeff()).exp().matrix();
  return z / z.sum();
}

/// Gradient of a loss w.r.t. costs given its gradient w.r.t. the relaxed gates
/// p = softmax(-c / tau): dc_s = -(1/tau) p_s (dg_s - sum_j p_j dg_j).
inline Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& relaxed, const Eigen::MatrixXd& gate_grad, double temperature) {
  Eigen::MatrixXd out(relaxed.rows(), relaxed.cols());
  for (Eigen::Index r = 0; r < relaxed.rows(); ++r) {
    const double inner = relaxed.row(r).dot(gate_grad.row(r));
    out.row(r) = -(relaxed.row(r).array() * (gate_grad.row(r).array() - inner)).matrix() / temperature;
  }
  return out;
}

/// Learnable layer-sparsity cost, one row of |S| entries per (schedulable step, sub-layer).
struct CostMatrix {
  int steps = 0;       // T' = T - 1
  int sublayers = 0;   // L_d
  int candidates = 0;  // |S|
  double temperature = 1.0;
  bool learnable = true;
  Eigen::MatrixXd values;  // (steps * sublayers) x candidates, slot = t * sublayers + l

  CostMatrix() = default;
  CostMatrix(int steps_, int sublayers_, int candidates_)
      : steps(steps_), sublayers(sublayers_), candidates(candidates_),
        values(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps_) * sublayers_, candidates_)) {}

  int slots() const { return steps * sublayers; }
  int slot(int t, int l) const { return t * sublayers + l; }
  double& operator()(int t, int l, int s) { return values(slot(t, l), s); }
  double operator()(int t, int l, int s) const { return values(slot(t, l), s); }
  std::int64_t parameter_count() const { return values.size(); }

  Eigen::RowVectorXd relaxed_gates(int t, int l) const { return relaxed_softmax(values.row(slot(t, l)), temperature); }
  Eigen::MatrixXd relaxed_gates() const {
    Eigen::MatrixXd p(values.rows(), values.cols());
    for (Eigen::Index r = 0; r < values.rows(); ++r) p.row(r) = relaxed_softmax(values.row(r), temperature);
    return p;
  }
  bool all_finite() const { return values.allFinite(); }
};

/// Step cost: column 0 = accelerated step, column 1 = full step.
struct StepCostMatrix {
  double temperature = 1.0;
  Eigen::MatrixXd values;  // T' x 2

  StepCostMatrix() = default;
  explicit StepCostMatrix(int steps) : values(Eigen::MatrixXd::Zero(steps, 2)) {}
  int steps() const { return static_cast<int>(values.rows()); }
  Eigen::MatrixXd relaxed_gates() const {
    Eigen::MatrixXd p(values.rows(), 2);
    for (Eigen::Index r = 0; r < values.rows(); ++r) p.row(r) = relaxed_softmax(values.row(r), temperature);
    return p;
  }
};

/// Hard one-hot gates for a schedule with the relaxed distribution kept for the
/// straight-through backward: forward value onehot, gradient through p.
struct StraightThroughGates {
  Eigen::MatrixXd hard;     // slots x |S|, one-hot
  Eigen::MatrixXd relaxed;  // slots x |S|
  double temperature = 1.0;

  /// Forward values of p + (onehot - p)|frozen evaluated at perturbed costs; equals
  /// `hard` at the costs the gates were built from.
  Eigen::MatrixXd surrogate(const Eigen::MatrixXd& relaxed_now) const { return relaxed_now + (hard - relaxed); }

  Eigen::MatrixXd backward(const Eigen::MatrixXd& gate_grad) const { return softmax_backward(relaxed, gate_grad, temperature); }
};

inline StraightThroughGates gates_from_dp(const CostMatrix& costs, const SparsitySchedule& schedule) {
  require(schedule.schedulable_steps() == costs.steps && schedule.sublayer_count() == costs.sublayers,
          "gates_from_dp: schedule shape does not match costs");
  StraightThroughGates g;
  g.temperature = costs.temperature;
  g.relaxed = costs.relaxed_gates();
  g.hard = Eigen::MatrixXd::Zero(costs.slots(), costs.candidates);
  for (int t = 0; t < costs.steps; ++t)
    for (int l = 0; l < costs.sublayers; ++l) {
      const int s = schedule.choice(t, l);
      require(s >= 0 && s < costs.candidates, "gates_from_dp: candidate index out of range");
      g.hard(costs.slot(t, l), s) = 1.0;
    }
  return g;
}

/// Lower the full-retention entry of every sub-layer at the given steps by delta.
inline void warm_start(CostMatrix& costs, const std::set<int>& full_steps, double delta) {
  require(delta >= 0.0, "warm_start: delta must be non-negative");
  for (int t : full_steps) {
    require(t >= 0 && t < costs.steps, "warm_start: step out of range");
    for (int l = 0; l < costs.sublayers; ++l) costs(t, l, costs.candidates - 1) -= delta;
  }
}

inline constexpr double kInitNoise = 0.01;

/// Seeded small zero-mean noise; with `init` the scheduled entries are lowered by 1
/// so the solver reproduces `init` before any training.
inline CostMatrix init_costs(int steps, int sublayers, int candidates, std::uint64_t seed,
                             const std::optional<SparsitySchedule>& init = std::nullopt) {
  CostMatrix c(steps, sublayers, candidates);
  Rng rng(split_seed(seed, "cost_layer"));
  c.values = random_normal<double>(c.slots(), candidates, kInitNoise, rng).cast<double>();
  if (init) {
    require(init->schedulable_steps() == steps && init->sublayer_count() == sublayers && init->candidates.size() == candidates,
            "init_costs: schedule shape mismatch");
    for (int t = 0; t < steps; ++t)
      for (int l = 0; l < sublayers; ++l) c(t, l, init->choice(t, l)) -= 1.0;
  }
  return c;
}

inline StepCostMatrix init_step_costs(int steps, std::uint64_t seed) {
  StepCostMatrix c(steps);
  Rng rng(split_seed(seed, "cost_step"));
  c.values = random_normal<double>(steps, 2, kInitNoise, rng).cast<double>();
  return c;
}

}  // namespace sparse_sched
