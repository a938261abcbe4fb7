// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/dp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sparse_sched {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_budget(const Budget& budget, std::int64_t slots, int units) {
  if (budget.schedulable_slots != slots) throw BudgetError("solve: budget slot count does not match the cost matrix");
  if (budget.units_per_slot != units) throw BudgetError("solve: budget units per slot do not match the candidate set");
  if (budget.total_units < 0 || budget.total_units > budget.capacity())
    throw BudgetError("solve: budget units outside [0, slots * u]");
}

}  // namespace

std::pair<std::int64_t, std::int64_t> prune_states(const Budget& budget, int slot_index) {
  const std::int64_t u = budget.units_per_slot, b = budget.total_units;
  const std::int64_t hi = std::min<std::int64_t>(slot_index * u, b);
  const std::int64_t lo = budget.at_most ? 0 : std::max<std::int64_t>(0, b - (budget.schedulable_slots - slot_index) * u);
  return {lo, hi};
}

Allocation allocate(const Eigen::MatrixXd& slot_costs, const Budget& budget, bool prune) {
  const auto slots = static_cast<int>(slot_costs.rows());
  const int u = static_cast<int>(slot_costs.cols()) - 1;
  check_budget(budget, slots, u);
  const std::int64_t b = budget.total_units;
  const auto width = static_cast<std::size_t>(b + 1);

  std::vector<double> prev(width, kInf), cur(width, kInf);
  std::vector<std::uint8_t> choice(static_cast<std::size_t>(slots) * width, 0);
  prev[0] = 0.0;
  Allocation result;

  for (int i = 0; i < slots; ++i) {
    std::int64_t lo = 0, hi = b;
    if (prune) std::tie(lo, hi) = prune_states(budget, i + 1);
    std::fill(cur.begin(), cur.end(), kInf);
    auto* row_choice = choice.data() + static_cast<std::size_t>(i) * width;
    for (std::int64_t r = lo; r <= hi; ++r) {
      double best = kInf;
      int arg = 0;
      for (int s = 0; s <= u && s <= r; ++s) {
        const double candidate = prev[static_cast<std::size_t>(r - s)] + slot_costs(i, s);
        if (candidate < best) {
          best = candidate;
          arg = s;
        }
      }
      cur[static_cast<std::size_t>(r)] = best;
      row_choice[r] = static_cast<std::uint8_t>(arg);
      ++result.cells_evaluated;
    }
    std::swap(prev, cur);
  }

  std::int64_t r = b;
  if (budget.at_most) {
    double best = kInf;
    for (std::int64_t q = 0; q <= b; ++q)
      if (prev[static_cast<std::size_t>(q)] < best) {
        best = prev[static_cast<std::size_t>(q)];
        r = q;
      }
  }
  if (!std::isfinite(prev[static_cast<std::size_t>(r)])) throw BudgetError("solve: budget is infeasible");
  result.total_cost = prev[static_cast<std::size_t>(r)];
  result.total_units = r;
  result.units.assign(static_cast<std::size_t>(slots), 0);
  for (int i = slots - 1; i >= 0; --i) {
    const int s = choice[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(r)];
    result.units[static_cast<std::size_t>(i)] = s;
    r -= s;
  }
  return result;
}

SparsitySchedule solve(const CostMatrix& costs, const Budget& budget, const SolveOptions& options) {
  if (!costs.all_finite()) throw ContractError("solve: cost matrix has non-finite entries");
  const Allocation a = allocate(costs.values, budget, options.prune);
  SparsitySchedule s{CandidateSet(1.0 / (costs.candidates - 1)), costs.steps + 1, options.sub_layer_names,
                     IndexMatrix(costs.steps, costs.sublayers), a.total_units, a.total_cost, {}};
  if (s.sub_layers.empty())
    for (int l = 0; l < costs.sublayers; ++l) s.sub_layers.push_back("layer" + std::to_string(l));
  require(static_cast<int>(s.sub_layers.size()) == costs.sublayers, "solve: sub-layer name count mismatch");
  for (int i = 0; i < costs.slots(); ++i) s.choice.data()[i] = a.units[static_cast<std::size_t>(i)];
  BudgetAudit::record(s, budget.total_units, budget.at_most);
  return s;
}

FullStepSolution solve_full_steps(const StepCostMatrix& step_costs, int count) {
  const int steps = step_costs.steps();
  require(count >= 0 && count <= steps, "solve_full_steps: count out of range");
  const auto width = static_cast<std::size_t>(count + 1);
  std::vector<double> prev(width, kInf), cur(width, kInf);
  std::vector<std::uint8_t> choice(static_cast<std::size_t>(steps) * width, 0);
  prev[0] = 0.0;
  for (int i = 0; i < steps; ++i) {
    std::fill(cur.begin(), cur.end(), kInf);
    const int lo = std::max(0, count - (steps - i - 1)), hi = std::min(i + 1, count);
    for (int j = lo; j <= hi; ++j) {
      double best = kInf;
      int arg = 0;
      for (int s = 0; s <= 1 && s <= j; ++s) {
        const double candidate = prev[static_cast<std::size_t>(j - s)] + step_costs.values(i, s);
        if (candidate < best) {
          best = candidate;
          arg = s;
        }
      }
      cur[static_cast<std::size_t>(j)] = best;
      choice[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(arg);
    }
    std::swap(prev, cur);
  }
  FullStepSolution out;
  out.total_cost = prev[static_cast<std::size_t>(count)];
  int j = count;
  for (int i = steps - 1; i >= 0; --i) {
    const int s = choice[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(j)];
    if (s == 1) out.steps.insert(i);
    j -= s;
  }
  return out;
}

int default_full_step_count(int schedulable_steps) {
  return static_cast<int>(std::ceil(0.15 * schedulable_steps - 1e-12));
}

}  // namespace sparse_sched
