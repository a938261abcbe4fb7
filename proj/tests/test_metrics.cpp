// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <regex>

#include "sparse_sched/dp_solver.hpp"
#include "sparse_sched/metrics.hpp"

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
  return c;
}

SparsitySchedule random_schedule(const ToyDiTConfig& c, Rng& rng) {
  auto s = SparsitySchedule::filled(c, CandidateSet(0.25), 0);
  std::uniform_int_distribution<int> pick(0, 4);
  for (Eigen::Index i = 0; i < s.choice.size(); ++i) s.choice.data()[i] = pick(rng);
  s.budget_units = s.achieved_units();
  return s;
}

TEST(Macs, MlpArithmetic) {
  ToyDiTConfig c;
  c.model_dim = 64;
  c.mlp_hidden = 256;
  EXPECT_EQ(analytic_macs(c, SubLayerKind::MLP, 32), 1048576);
}

TEST(Macs, ZeroRetentionIsFree) {
  const ToyDiTConfig c;
  for (auto k : {SubLayerKind::SelfAttn, SubLayerKind::CrossAttn, SubLayerKind::MLP}) {
    EXPECT_EQ(analytic_macs(c, k, 0), 0);
    EXPECT_GT(analytic_macs(c, k, 1), 0);
  }
  EXPECT_THROW(analytic_macs(c, SubLayerKind::MLP, c.token_count + 1), ContractError);
}

TEST(Macs, FullRetentionMatchesDenseSample) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  MacCounter counter;
  sample_dense(m, make_condition<float>(c, 1), make_noise<float>(c, 1), &counter);
  EXPECT_EQ(counter.model, baseline_macs(c));
}

TEST(Macs, InstrumentedEqualsAnalyticOnRandomSchedules) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_schedule(c, rng);
    CacheExecutor<float> exec(c, s);
    const auto run = exec.run(m, make_condition<float>(c, trial), make_noise<float>(c, trial));
    const auto report = macs_report(c, run);
    EXPECT_TRUE(report.ledger_consistent());
    EXPECT_EQ(report.analytic_total, schedule_macs(c, s));
    for (const auto& e : report.entries) EXPECT_EQ(e.analytic, e.instrumented);
  }
}

TEST(Macs, SpeedupIsOneForFullAndMonotone) {
  const auto c = small_config();
  const auto full = SparsitySchedule::filled(c, CandidateSet(0.25), 4);
  EXPECT_EQ(schedule_macs(c, full), baseline_macs(c));
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto hi = random_schedule(c, rng);
    auto lo = hi;
    std::uniform_int_distribution<int> pick(0, static_cast<int>(lo.choice.size()) - 1);
    const int i = pick(rng);
    if (lo.choice.data()[i] > 0) --lo.choice.data()[i];
    EXPECT_LE(schedule_macs(c, lo), schedule_macs(c, hi));
    EXPECT_LE(schedule_macs(c, hi), baseline_macs(c));
  }
}

TEST(Macs, SkippedSlotsBoundTotalAtPreset) {
  // All-or-nothing allocation of the R = 0.54 budget over schedulable slots.
  const ToyDiTConfig c;
  const CandidateSet cands(0.25);
  const auto budget = Budget::from_ratio(0.54, c.schedulable_steps() * c.sublayer_count(), cands.units());
  auto s = SparsitySchedule::filled(c, cands, 0);
  const std::int64_t full_slots = budget.total_units / cands.units();
  for (std::int64_t i = 0; i < full_slots; ++i) s.choice.data()[i] = cands.units();
  std::int64_t slot_total = 0, slot_baseline = 0;
  for (int t = 1; t < c.num_steps; ++t)
    for (int l = 0; l < c.sublayer_count(); ++l) {
      slot_total += slot_macs(c, t, l, cands.retained_tokens(s.candidate_at(t, l), c.token_count));
      slot_baseline += slot_macs(c, t, l, c.token_count);
    }
  EXPECT_LE(static_cast<double>(slot_total), 0.46 * static_cast<double>(slot_baseline));
}

TEST(Macs, SelectorOverheadBelowTwoPercent) {
  const ToyDiTConfig c;
  const auto m = init_model<float>(c);
  const auto budget = Budget::from_ratio(0.54, c.schedulable_steps() * c.sublayer_count(), 4);
  CacheExecutor<float> exec(c, SparsitySchedule::uniform(c, CandidateSet(0.25), budget));
  const auto run = exec.run(m, make_condition<float>(c, 0), make_noise<float>(c, 0));
  const auto report = macs_report(c, run);
  EXPECT_GT(report.selector_total, 0);
  EXPECT_LT(static_cast<double>(report.selector_total), 0.02 * static_cast<double>(report.baseline_total));
  EXPECT_GT(report.speedup, 1.0);
}

TEST(Quality, IdenticalInputs) {
  Rng rng(5);
  const Matrix<double> x = random_normal<double>(16, 4, 1.0, rng);
  const auto q = quality_metrics(x, x, {4, 4});
  EXPECT_TRUE(std::isinf(q.psnr));
  EXPECT_DOUBLE_EQ(q.ssim, 1.0);
}

TEST(Quality, OffsetOfOneRangeIsZeroDecibels) {
  Rng rng(6);
  const Matrix<double> x = random_normal<double>(16, 4, 1.0, rng);
  const double range = x.maxCoeff() - x.minCoeff();
  const Matrix<double> y = (x.array() + range).matrix();
  EXPECT_NEAR(psnr(x, y), 0.0, 1e-12);
}

TEST(Quality, ConstantReferenceIsDefined) {
  const Matrix<double> x = Matrix<double>::Constant(16, 2, 3.0);
  const Matrix<double> y = Matrix<double>::Constant(16, 2, 3.5);
  EXPECT_TRUE(std::isfinite(ssim(x, y, {4, 4})));
  EXPECT_TRUE(std::isfinite(psnr(x, y)));
}

TEST(Quality, SsimGradientMatchesFiniteDifferences) {
  Rng rng(7);
  const Matrix<double> x = random_normal<double>(64, 2, 1.0, rng);
  Matrix<double> y = x + random_normal<double>(64, 2, 0.5, rng);
  Matrix<double> g;
  ssim(x, y, {8, 8}, &g);
  for (Eigen::Index i = 0; i < y.size(); i += 7) {
    const double v = y.data()[i];
    y.data()[i] = v + 1e-6;
    const double up = ssim(x, y, {8, 8});
    y.data()[i] = v - 1e-6;
    const double down = ssim(x, y, {8, 8});
    y.data()[i] = v;
    EXPECT_NEAR(g.data()[i], (up - down) / 2e-6, 1e-7);
  }
}

TEST(Stats, FullZeroAndBudgetSchedules) {
  const auto c = small_config();
  const CandidateSet cands(0.25);
  const auto full = schedule_stats(c, SparsitySchedule::filled(c, cands, 4));
  EXPECT_EQ(full.mean_retention, 1.0);
  EXPECT_EQ(full.zero_skip_count, 0);
  const auto zero = schedule_stats(c, SparsitySchedule::filled(c, cands, 0));
  EXPECT_EQ(zero.mean_retention, 0.0);
  EXPECT_EQ(zero.zero_skip_count, c.schedulable_steps() * c.sublayer_count());
  EXPECT_EQ(zero.heatmap.rows(), c.schedulable_steps());
  EXPECT_EQ(zero.heatmap.cols(), c.sublayer_count());
  Rng rng(8);
  for (double r : {0.1, 0.43, 0.5, 0.9}) {
    const int slots = c.schedulable_steps() * c.sublayer_count();
    const auto budget = Budget::from_ratio(r, slots, 4);
    CostMatrix costs(c.schedulable_steps(), c.sublayer_count(), 5);
    costs.values = random_normal<double>(slots, 5, 1.0, rng);
    const auto st = schedule_stats(c, solve(costs, budget));
    EXPECT_EQ(st.mean_retention, static_cast<double>(budget.total_units) / (slots * 4.0));
    int hist_total = 0;
    for (const auto& [kind, counts] : st.histogram)
      for (int n : counts) hist_total += n;
    EXPECT_EQ(hist_total, slots);
  }
}

TEST(Report, SvgHasOneCellPerSlotAndHash) {
  const auto c = small_config();
  Rng rng(9);
  const auto svg = heatmap_svg(random_schedule(c, rng), "abc123");
  const std::regex rect("<rect ");
  const auto cells = std::distance(std::sregex_iterator(svg.begin(), svg.end(), rect), std::sregex_iterator());
  EXPECT_EQ(cells, c.schedulable_steps() * c.sublayer_count());
  EXPECT_NE(svg.find("config_hash=abc123"), std::string::npos);
  EXPECT_NE(svg.find("#0000ff"), std::string::npos);  // a zero-retention cell is pure blue
}

TEST(Report, CsvHasHeaderCommentAndOneRowPerSlot) {
  const auto c = small_config();
  const auto m = init_model<float>(c);
  CacheExecutor<float> exec(c, SparsitySchedule::filled(c, CandidateSet(0.25), 2));
  const auto report = macs_report(c, exec.run(m, make_condition<float>(c, 0), make_noise<float>(c, 0)));
  const auto csv = macs_report_csv(c, report, "feedface");
  EXPECT_EQ(csv.rfind("# config_hash=feedface\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + c.num_steps * c.sublayer_count());
}

}  // namespace
}  // namespace sparse_sched
