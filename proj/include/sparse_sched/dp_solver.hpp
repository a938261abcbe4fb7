// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sparse_sched/cost_matrix.hpp"
#include "sparse_sched/schedule.hpp"

namespace sparse_sched {

struct SolveOptions {
  bool prune = true;
  /// Names by flat index for the emitted schedule; generated when empty.
  std::vector<std::string> sub_layer_names;
};

/// Result of the slot-level allocation.
struct Allocation {
  std::vector<int> units;  // candidate index per slot
  double total_cost = 0.0;
  std::int64_t total_units = 0;
  std::int64_t cells_evaluated = 0;
};

/// Reachable band [r_min, r_max] of partial unit sums after `slot_index` slots.
std::pair<std::int64_t, std::int64_t> prune_states(const Budget& budget, int slot_index);

/// Minimum-cost assignment of one candidate per row of `slot_costs` (slots x |S|)
/// whose candidate indices sum to the budget (or at most the budget in at_most mode).
/// Ties: candidates scanned in ascending index, an incumbent is only replaced by a
/// strictly smaller value.
Allocation allocate(const Eigen::MatrixXd& slot_costs, const Budget& budget, bool prune = true);

SparsitySchedule solve(const CostMatrix& costs, const Budget& budget, const SolveOptions& options = {});

struct FullStepSolution {
  std::set<int> steps;
  double total_cost = 0.0;
};

/// Choose exactly `count` full steps minimizing the summed step costs.
FullStepSolution solve_full_steps(const StepCostMatrix& step_costs, int count);

/// Default full-step count: ceil(0.15 * T').
int default_full_step_count(int schedulable_steps);

}  // namespace sparse_sched
