// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sparse_sched/config.hpp"
#include "sparse_sched/types.hpp"

namespace sparse_sched {

using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Discrete grid of retention fractions {0, interval, ..., 1}.
class CandidateSet {
 public:
  explicit CandidateSet(double interval = 0.25) : interval_(interval) {
    if (!(interval > 0.0 && interval <= 1.0)) throw ConfigError("CandidateSet: interval must lie in (0, 1]");
    const double steps = 1.0 / interval;
    units_ = static_cast<int>(std::lround(steps));
    if (std::abs(steps - units_) > 1e-9) throw ConfigError("CandidateSet: interval must divide 1");
  }

  double interval() const { return interval_; }
  /// Units per slot, u = |S| - 1.
  int units() const { return units_; }
  int size() const { return units_ + 1; }
  double fraction(int index) const { return index * interval_; }
  std::vector<double> fractions() const {
    std::vector<double> f;
    for (int s = 0; s < size(); ++s) f.push_back(fraction(s));
    return f;
  }
  bool is_full(int index) const { return index == units_; }

  /// Tokens retained for candidate `index`: round(rho * N), ties to even.
  int retained_tokens(int index, int token_count) const {
    require(index >= 0 && index < size(), "CandidateSet: candidate index out of range");
    if (index == units_) return token_count;
    return static_cast<int>(std::nearbyint(fraction(index) * token_count));
  }

  bool operator==(const CandidateSet&) const = default;

 private:
  double interval_;
  int units_;
};

/// Global retained-compute budget derived from the cache ratio R.
struct Budget {
  double cache_ratio = 0.0;
  int schedulable_slots = 0;
  int units_per_slot = 0;
  std::int64_t total_units = 0;
  bool at_most = false;  // "<=" instead of equality

  static Budget from_ratio(double cache_ratio, int schedulable_slots, int units_per_slot, bool at_most = false) {
    if (!(cache_ratio >= 0.0 && cache_ratio <= 1.0)) throw BudgetError("Budget: cache ratio must lie in [0, 1]");
    if (schedulable_slots <= 0 || units_per_slot <= 0) throw BudgetError("Budget: empty slot space");
    Budget b{cache_ratio, schedulable_slots, units_per_slot, 0, at_most};
    b.total_units = std::llround((1.0 - cache_ratio) * schedulable_slots * units_per_slot);
    return b;
  }

  static Budget from_units(std::int64_t total_units, int schedulable_slots, int units_per_slot, bool at_most = false) {
    Budget b{0.0, schedulable_slots, units_per_slot, total_units, at_most};
    const std::int64_t cap = b.capacity();
    if (total_units < 0 || total_units > cap) throw BudgetError("Budget: units outside [0, slots * u]");
    b.cache_ratio = cap > 0 ? 1.0 - static_cast<double>(total_units) / static_cast<double>(cap) : 0.0;
    return b;
  }

  std::int64_t capacity() const { return static_cast<std::int64_t>(schedulable_slots) * units_per_slot; }
  double mean_retention() const { return static_cast<double>(total_units) / static_cast<double>(capacity()); }
};

/// Retention candidate per (schedulable step, sub-layer). Row r drives sampler step r + 1;
/// step 0 always runs at full retention.
struct SparsitySchedule {
  CandidateSet candidates;
  int num_steps = 0;
  std::vector<std::string> sub_layers;
  IndexMatrix choice;  // (T - 1) x L_d candidate indices
  std::int64_t budget_units = 0;
  double total_cost = 0.0;
  std::string config_hash;

  int schedulable_steps() const { return static_cast<int>(choice.rows()); }
  int sublayer_count() const { return static_cast<int>(choice.cols()); }
  std::int64_t achieved_units() const { return choice.cast<std::int64_t>().sum(); }

  /// Retention fraction used at sampler step `step` for sub-layer `flat_index`.
  double rho(int step, int flat_index) const {
    return step == 0 ? 1.0 : candidates.fraction(choice(step - 1, flat_index));
  }
  int candidate_at(int step, int flat_index) const {
    return step == 0 ? candidates.units() : choice(step - 1, flat_index);
  }

  void validate() const {
    require(choice.rows() == num_steps - 1, "SparsitySchedule: expected T - 1 rows");
    require(static_cast<std::size_t>(choice.cols()) == sub_layers.size(), "SparsitySchedule: sub-layer count mismatch");
    require(choice.size() == 0 || (choice.minCoeff() >= 0 && choice.maxCoeff() < candidates.size()),
            "SparsitySchedule: candidate index out of range");
  }

  bool same_assignment(const SparsitySchedule& other) const {
    return candidates == other.candidates && choice == other.choice;
  }

  static SparsitySchedule filled(const ToyDiTConfig& config, const CandidateSet& candidates, int index) {
    SparsitySchedule s{candidates, config.num_steps, {}, IndexMatrix::Constant(config.schedulable_steps(), config.sublayer_count(), index), 0, 0.0, {}};
    for (int l = 0; l < config.sublayer_count(); ++l) s.sub_layers.push_back(config.sublayer_name(l));
    s.budget_units = s.achieved_units();
    return s;
  }

  /// Budget spread as evenly as possible: every slot gets floor(B / slots) units and
  /// the remainder goes one unit each to evenly strided slots.
  static SparsitySchedule uniform(const ToyDiTConfig& config, const CandidateSet& candidates, const Budget& budget);
};

/// Process-wide audit of budget exactness for every schedule that feeds a forward
/// pass or is returned by the solver and search paths.
struct BudgetAudit {
  static void record(const SparsitySchedule& schedule, std::int64_t budget_units, bool at_most = false);
  static std::int64_t checked();
  static std::int64_t violations();
};

/// Serialize to the versioned schedule JSON document (deterministic byte layout).
std::string schedule_to_json(const SparsitySchedule& schedule);
SparsitySchedule schedule_from_json(const std::string& text);
void write_schedule(const std::string& path, const SparsitySchedule& schedule);
SparsitySchedule read_schedule(const std::string& path);

}  // namespace sparse_sched
