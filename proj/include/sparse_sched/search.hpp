// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparse_sched/trainer.hpp"

namespace sparse_sched {

enum class SearchStrategy { Random, Genetic };

struct SearchOptions {
  int population = 50;
  double mutation_rate = 0.01;
  int elites = 2;
  std::uint64_t seed = 0;
};

struct SearchResult {
  SparsitySchedule best;
  double best_loss = 0.0;
  int evaluations = 0;
};

/// Uniformly random vector of `slots` integers in [0, u] summing to `total`.
std::vector<int> random_composition(int slots, int u, std::int64_t total, Rng& rng);

/// Move the unit sum of `units` to `total` by random unit increments/decrements.
void repair_budget(std::vector<int>& units, int u, std::int64_t total, Rng& rng);

/// Budget-feasible schedule search scored by mean distillation loss on `fitness_set`.
/// Every candidate evaluated counts against `iterations`.
SearchResult search_baseline(const ToyDiTModel<double>& model, const SelectorWeights& selector,
                             const CandidateSet& candidates, const Budget& budget, SearchStrategy strategy,
                             int iterations, const SampleSet& fitness_set, LossKind kind,
                             const SearchOptions& options = {});

}  // namespace sparse_sched
