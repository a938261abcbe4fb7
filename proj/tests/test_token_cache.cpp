// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <json.hpp>

#include "sparse_sched/token_cache.hpp"

namespace sparse_sched {
namespace {

ToyDiTConfig small_config() {
  ToyDiTConfig c;
  c.num_blocks = 2;
  c.token_count = 16;
  c.model_dim = 16;
  c.mlp_hidden = 32;
  c.context_tokens = 4;
  c.num_heads = 2;
  c.num_steps = 5;
  c.seed = 11;
  return c;
}

SparsitySchedule random_schedule(const ToyDiTConfig& c, const CandidateSet& cands, std::uint64_t seed) {
  SparsitySchedule s = SparsitySchedule::filled(c, cands, 0);
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, cands.units());
  for (Eigen::Index i = 0; i < s.choice.size(); ++i) s.choice.data()[i] = pick(rng);
  s.budget_units = s.achieved_units();
  return s;
}

TEST(TokenCache, AllFullScheduleEqualsTeacherBitwise) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  const auto cond = make_condition<float>(c, 1);
  const auto noise = make_noise<float>(c, 1);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 4));
  const auto run = run_scheduled_sample(exec, m, cond, noise);
  const auto teacher = sample(m, cond, noise);
  EXPECT_TRUE(run.x0 == teacher);
}

TEST(TokenCache, AllZeroScheduleEqualsFrozenOutputOracle) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  const auto cond = make_condition<float>(c, 2);
  const auto noise = make_noise<float>(c, 2);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 0));
  const auto run = run_scheduled_sample(exec, m, cond, noise);

  // Oracle: record every sub-layer output at step 0, then add the frozen outputs to
  // the fresh stem at each later step.
  const auto ctx = precompute_context(m, cond);
  const auto sched = NoiseSchedule::make(c.num_steps);
  const TokenMask all(static_cast<std::size_t>(c.token_count), true);
  std::vector<Matrix<float>> frozen;
  Matrix<float> x = noise;
  for (int t = 0; t < c.num_steps; ++t) {
    Matrix<float> h = stem(m, x, t, cond);
    for (int l = 0; l < c.sublayer_count(); ++l) {
      if (t == 0) {
        const auto id = SubLayerId::at(c, 0, l);
        frozen.push_back(sublayer_forward(m, id, h, id.kind == SubLayerKind::CrossAttn ? &ctx : nullptr, all).output);
      }
      h += frozen[static_cast<std::size_t>(l)];
    }
    x = ddim_step(sched, t, x, head(m, h));
  }
  EXPECT_LE((run.x0 - x).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(TokenCache, HalfRetentionRecomputesExactlySelectedRows) {
  auto c = small_config();
  c.token_count = 8;
  const auto m = init_model<double>(c);
  const auto cond = make_condition<double>(c, 3);
  const auto ctx = precompute_context(m, cond);
  SelectorWeights sel;
  sel.neighborhood = 2;
  CacheExecutor<double> exec(c, SparsitySchedule::filled(c, CandidateSet(0.5), 1), sel);
  Matrix<double> h = stem(m, make_noise<double>(c, 3), 0, cond);
  for (int l = 0; l < c.sublayer_count(); ++l) {
    const auto id = SubLayerId::at(c, 0, l);
    h += exec.execute_sublayer(m, id, h, id.kind == SubLayerKind::CrossAttn ? &ctx : nullptr);
  }
  Matrix<double> h1 = stem(m, make_noise<double>(c, 4), 1, cond);
  for (int l = 0; l < c.sublayer_count(); ++l) {
    const auto id = SubLayerId::at(c, 1, l);
    const Matrix<double> before = exec.cache().at(l).output;
    const Matrix<double> merged = exec.execute_sublayer(m, id, h1, id.kind == SubLayerKind::CrossAttn ? &ctx : nullptr);
    const auto& selected = exec.trace().back().selected;
    ASSERT_EQ(selected.size(), 4u);
    int changed = 0;
    for (int i = 0; i < c.token_count; ++i) {
      const bool sel_i = std::find(selected.begin(), selected.end(), i) != selected.end();
      if (!sel_i) {
        EXPECT_TRUE(merged.row(i) == before.row(i));
      }
      if (merged.row(i) != before.row(i)) ++changed;
      EXPECT_EQ(exec.cache().at(l).reuse[static_cast<std::size_t>(i)], sel_i ? 0 : 1);
    }
    EXPECT_EQ(changed, 4);
    h1 += merged;
  }
}

TEST(TokenCache, ZeroRetentionSkipsAndIncrementsCounters) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 0));
  const auto run = run_scheduled_sample(exec, m, make_condition<float>(c, 5), make_noise<float>(c, 5));
  for (const auto& e : run.trace) {
    if (e.step == 0) continue;
    EXPECT_EQ(e.macs, 0);
    EXPECT_EQ(e.selector_macs, 0);
    EXPECT_TRUE(e.selected.empty());
  }
  for (int l = 0; l < c.sublayer_count(); ++l)
    for (int n : exec.cache().at(l).reuse) EXPECT_EQ(n, c.num_steps - 1);
}

TEST(TokenCache, CounterLawMatchesTraceReplay) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  const CandidateSet cands(0.25);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CacheExecutor<float> exec(c, random_schedule(c, cands, seed));
    const auto run = run_scheduled_sample(exec, m, make_condition<float>(c, seed), make_noise<float>(c, seed));
    std::vector<std::vector<int>> last(static_cast<std::size_t>(c.sublayer_count()),
                                       std::vector<int>(static_cast<std::size_t>(c.token_count), 0));
    for (const auto& e : run.trace)
      for (int i : e.selected) last[static_cast<std::size_t>(e.flat_index)][static_cast<std::size_t>(i)] = e.step;
    for (int l = 0; l < c.sublayer_count(); ++l)
      for (int i = 0; i < c.token_count; ++i)
        EXPECT_EQ(exec.cache().at(l).reuse[static_cast<std::size_t>(i)],
                  c.num_steps - 1 - last[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)]);
  }
}

TEST(TokenCache, PartialRetentionOnColdCacheIsStateError) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 2));
  const Matrix<float> h = stem(m, make_noise<float>(c, 1), 1, make_condition<float>(c, 1));
  EXPECT_THROW(exec.execute_sublayer(m, SubLayerId::at(c, 1, 0), h, nullptr), StateError);
  TokenCache<float> cache(c);
  EXPECT_THROW(cache.update(0, {0, 1}, h, Matrix<float>(), h), StateError);
}

TEST(TokenCache, StepZeroAlwaysFull) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 0));
  const auto run = run_scheduled_sample(exec, m, make_condition<float>(c, 1), make_noise<float>(c, 1));
  for (const auto& e : run.trace)
    if (e.step == 0) {
      EXPECT_EQ(e.rho, 1.0);
      EXPECT_EQ(static_cast<int>(e.selected.size()), c.token_count);
    }
}

TEST(TokenCache, ScheduleShapeMismatchIsContractError) {
  const auto c = small_config();
  auto other = c;
  other.num_steps = 6;
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(other, SparsitySchedule::filled(other, CandidateSet(0.25), 4));
  EXPECT_THROW(run_scheduled_sample(exec, m, make_condition<float>(c, 1), make_noise<float>(c, 1)), ContractError);
}

TEST(TokenCache, ExecutorIsSingleUse) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 4));
  const auto cond = make_condition<float>(c, 1);
  const auto noise = make_noise<float>(c, 1);
  run_scheduled_sample(exec, m, cond, noise);
  EXPECT_THROW(run_scheduled_sample(exec, m, cond, noise), ContractError);
}

TEST(TokenCache, TraceJsonHasDocumentedFields) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(c, random_schedule(c, CandidateSet(0.25), 3));
  const auto run = run_scheduled_sample(exec, m, make_condition<float>(c, 1), make_noise<float>(c, 1));
  const auto doc = nlohmann::json::parse(trace_to_json(run.trace));
  ASSERT_EQ(doc.size(), run.trace.size());
  for (const auto& e : doc) {
    for (const char* key : {"step", "flat_index", "rho", "selected_indices", "macs"}) EXPECT_TRUE(e.contains(key)) << key;
  }
}

TEST(TokenCache, DeterministicAcrossRuns) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  const auto s = random_schedule(c, CandidateSet(0.25), 9);
  CacheExecutor<float> a(c, s), b(c, s);
  const auto cond = make_condition<float>(c, 1);
  const auto noise = make_noise<float>(c, 1);
  const auto ra = run_scheduled_sample(a, m, cond, noise);
  const auto rb = run_scheduled_sample(b, m, cond, noise);
  EXPECT_TRUE(ra.x0 == rb.x0);
  for (std::size_t i = 0; i < ra.trace.size(); ++i) EXPECT_EQ(ra.trace[i].selected, rb.trace[i].selected);
}

}  // namespace
}  // namespace sparse_sched
