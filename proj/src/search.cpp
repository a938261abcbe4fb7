// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sparse_sched {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

SparsitySchedule to_schedule(const ToyDiTConfig& config, const CandidateSet& candidates, const std::vector<int>& units) {
  SparsitySchedule s = SparsitySchedule::filled(config, candidates, 0);
  for (std::size_t i = 0; i < units.size(); ++i) s.choice.data()[i] = units[i];
  s.budget_units = s.achieved_units();
  return s;
}

}  // namespace

std::vector<int> random_composition(int slots, int u, std::int64_t total, Rng& rng) {
  require(total >= 0 && total <= static_cast<std::int64_t>(slots) * u, "random_composition: total out of range");
  const auto width = static_cast<std::size_t>(total + 1);
  // log_count[i][r]: log number of ways slots i..end sum to r.
  std::vector<double> log_count(static_cast<std::size_t>(slots + 1) * width, kNegInf);
  auto at = [&](int i, std::int64_t r) -> double& { return log_count[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(r)]; };
  at(slots, 0) = 0.0;
  for (int i = slots - 1; i >= 0; --i)
    for (std::int64_t r = 0; r <= total; ++r) {
      double acc = kNegInf;
      for (int s = 0; s <= u && s <= r; ++s) acc = log_add(acc, at(i + 1, r - s));
      at(i, r) = acc;
    }
  std::vector<int> out(static_cast<std::size_t>(slots));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::int64_t r = total;
  for (int i = 0; i < slots; ++i) {
    const double target = std::log(unif(rng)) + at(i, r);
    double acc = kNegInf;
    int pick = -1;
    for (int s = 0; s <= u && s <= r; ++s) {
      if (at(i + 1, r - s) == kNegInf) continue;
      acc = log_add(acc, at(i + 1, r - s));
      pick = s;
      if (acc >= target) break;
    }
    out[static_cast<std::size_t>(i)] = pick;
    r -= pick;
  }
  return out;
}

void repair_budget(std::vector<int>& units, int u, std::int64_t total, Rng& rng) {
  const auto slots = static_cast<int>(units.size());
  require(total >= 0 && total <= static_cast<std::int64_t>(slots) * u, "repair_budget: total out of range");
  std::int64_t sum = std::accumulate(units.begin(), units.end(), std::int64_t{0});
  std::uniform_int_distribution<int> pick(0, slots - 1);
  while (sum != total) {
    const int i = pick(rng);
    int& v = units[static_cast<std::size_t>(i)];
    if (sum > total && v > 0) {
      --v;
      --sum;
    } else if (sum < total && v < u) {
      ++v;
      ++sum;
    }
  }
}

SearchResult search_baseline(const ToyDiTModel<double>& model, const SelectorWeights& selector,
                             const CandidateSet& candidates, const Budget& budget, SearchStrategy strategy,
                             int iterations, const SampleSet& fitness_set, LossKind kind, const SearchOptions& options) {
  require(iterations >= 1, "search_baseline: iterations must be >= 1");
  const auto& c = model.config;
  const int slots = c.schedulable_steps() * c.sublayer_count(), u = candidates.units();
  require(budget.schedulable_slots == slots && budget.units_per_slot == u, "search_baseline: budget shape mismatch");
  Rng rng(split_seed(options.seed, strategy == SearchStrategy::Random ? "search_random" : "search_genetic"));
  std::optional<FeatureProxy> proxy;
  if (kind == LossKind::FeatureProxy) proxy.emplace(c.model_dim, c.grid_shape(), kFeatureProxySeed);

  SearchResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  auto evaluate = [&](const std::vector<int>& units) {
    SparsitySchedule s = to_schedule(c, candidates, units);
    BudgetAudit::record(s, budget.total_units);
    const double loss = evaluate_schedule(model, selector, s, fitness_set, kind, proxy ? &*proxy : nullptr);
    ++result.evaluations;
    if (loss < result.best_loss || result.evaluations == 1) {
      result.best_loss = loss;
      result.best = s;
    }
    return loss;
  };

  if (strategy == SearchStrategy::Random) {
    for (int i = 0; i < iterations; ++i) evaluate(random_composition(slots, u, budget.total_units, rng));
    return result;
  }

  struct Member {
    std::vector<int> units;
    double loss;
  };
  std::vector<Member> population;
  const int pop = std::max(2, std::min(options.population, iterations));
  for (int i = 0; i < pop && result.evaluations < iterations; ++i) {
    auto units = random_composition(slots, u, budget.total_units, rng);
    const double loss = evaluate(units);
    population.push_back({std::move(units), loss});
  }
  auto by_loss = [](const Member& a, const Member& b) { return a.loss < b.loss; };
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> value(0, u);
  while (result.evaluations < iterations) {
    std::stable_sort(population.begin(), population.end(), by_loss);
    // Elitist truncation: parents come from the better half; elites survive unchanged.
    const int parents = std::max(2, static_cast<int>(population.size()) / 2);
    std::uniform_int_distribution<int> parent(0, parents - 1);
    std::uniform_int_distribution<int> cut(1, std::max(1, slots - 1));
    std::vector<Member> next(population.begin(), population.begin() + std::min<int>(options.elites, static_cast<int>(population.size())));
    while (static_cast<int>(next.size()) < pop && result.evaluations < iterations) {
      const auto& a = population[static_cast<std::size_t>(parent(rng))].units;
      const auto& b = population[static_cast<std::size_t>(parent(rng))].units;
      const int point = cut(rng);
      std::vector<int> child(a.begin(), a.begin() + point);
      child.insert(child.end(), b.begin() + point, b.end());
      repair_budget(child, u, budget.total_units, rng);
      for (int& v : child)
        if (unif(rng) < options.mutation_rate) v = value(rng);
      repair_budget(child, u, budget.total_units, rng);
      const double loss = evaluate(child);
      next.push_back({std::move(child), loss});
    }
    population = std::move(next);
  }
  return result;
}

}  // namespace sparse_sched
