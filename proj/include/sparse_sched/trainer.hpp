// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sparse_sched/cost_matrix.hpp"
#include "sparse_sched/dp_solver.hpp"
#include "sparse_sched/losses.hpp"
#include "sparse_sched/student.hpp"

namespace sparse_sched {

struct TrainConfig {
  double stage1_layer_lr = 1.0;
  double stage1_step_lr = 0.01;
  double stage2_lr = 0.1;
  double delta = 10.0;
  int stage1_layer_iterations = 200;
  int stage1_step_iterations = 200;
  int stage2_iterations = 200;
  int batch_size = 2;
  int train_samples = 8;
  int eval_samples = 8;
  LossKind loss_kind = LossKind::FeatureProxy;
  int dp_resolve_period = 1;
  int full_step_count = 0;  // 0 = ceil(0.15 T')
  std::uint64_t seed = 0;

  void validate() const;
};

/// Adaptive-moment descent with decoupled weight decay.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(Eigen::MatrixXd& params, const Eigen::MatrixXd& grad);

  const Eigen::MatrixXd& first_moment() const { return m_; }
  const Eigen::MatrixXd& second_moment() const { return v_; }
  int steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  Eigen::MatrixXd m_, v_;
  int t_ = 0;
};

/// Conditions, initial noises and teacher outputs for a fixed seed set.
struct SampleSet {
  std::vector<Condition<double>> conditions;
  std::vector<Matrix<double>> noises;
  std::vector<Matrix<double>> teacher;

  int size() const { return static_cast<int>(noises.size()); }
};

SampleSet make_sample_set(const ToyDiTModel<double>& model, int count, std::uint64_t seed);

struct LogRow {
  int iteration = 0;
  std::string stage;
  double loss = 0.0;
  std::int64_t budget_units = 0;
  double dp_total_cost = 0.0;
  double wall_ms = 0.0;
};

std::string log_csv_header();
std::string log_csv_row(const LogRow& row);

/// Everything the optimization needs besides the cost tensors.
struct TrainContext {
  const ToyDiTModel<double>* model = nullptr;
  CandidateSet candidates;
  Budget budget;
  SelectorWeights selector;
  TrainConfig config;
  SampleSet train;
  std::optional<FeatureProxy> proxy;
  std::function<void(const LogRow&)> on_log;

  TrainContext(const ToyDiTModel<double>& model, const CandidateSet& candidates, double cache_ratio,
               const SelectorWeights& selector, const TrainConfig& config);

  SolveOptions solve_options() const;
  LossValue loss(const Matrix<double>& teacher, const Matrix<double>& student) const;
};

struct TrainState {
  CostMatrix layer_costs;
  StepCostMatrix step_costs;
  Adam layer_optimizer;
  Adam step_optimizer;
  std::set<int> full_steps;
  SparsitySchedule schedule;
  int iteration = 0;
  std::vector<LogRow> history;
};

/// Layer costs start from the uniform allocation of the budget, step costs from noise.
TrainState init_train_state(const TrainContext& ctx);

/// Stage 1: layer costs under the budget, step costs (full vs mid-retention step),
/// T_f from the step costs, then warm start of the layer costs.
void train_stage1(const TrainContext& ctx, TrainState& state);

/// The two halves of stage 1: cost training with T_f selection, then the warm start
/// of the layer costs at T_f by `delta` followed by a solve.
void train_stage1_costs(const TrainContext& ctx, TrainState& state);
void apply_warm_start(const TrainContext& ctx, TrainState& state, double delta);

/// Stage 2: fine-tune the warm-started layer costs, re-solving the allocation.
void train_stage2(const TrainContext& ctx, TrainState& state);

/// Costs rounded to the checkpoint precision and solved; the shipped schedule.
SparsitySchedule finalize_schedule(const TrainContext& ctx, CostMatrix& costs);

/// Mean distillation loss of a schedule over a sample set (inference path).
double evaluate_schedule(const ToyDiTModel<double>& model, const SelectorWeights& selector,
                         const SparsitySchedule& schedule, const SampleSet& samples, LossKind kind,
                         const FeatureProxy* proxy = nullptr);

/// Mean SSIM to the teacher over a sample set.
double evaluate_ssim(const ToyDiTModel<double>& model, const SelectorWeights& selector, const SparsitySchedule& schedule,
                     const SampleSet& samples);

/// Gradient of the mean batch loss w.r.t. layer costs at the current DP solution
/// (straight-through). Exposed for gradient checks.
struct CostGradient {
  double loss = 0.0;
  Eigen::MatrixXd grad;
  SparsitySchedule schedule;
};
CostGradient layer_cost_gradient(const TrainContext& ctx, const CostMatrix& costs, const std::vector<int>& batch);

}  // namespace sparse_sched
