// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace sparse_sched {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

std::vector<int> batch_indices(const TrainContext& ctx, int iteration) {
  std::vector<int> idx;
  for (int j = 0; j < ctx.config.batch_size; ++j)
    idx.push_back((iteration * ctx.config.batch_size + j) % ctx.train.size());
  return idx;
}

void check_finite(double loss, const Eigen::MatrixXd& grad, const std::string& stage, int iteration) {
  if (!std::isfinite(loss) || !grad.allFinite()) {
    std::ostringstream msg;
    msg << "training diverged in stage " << stage << " at iteration " << iteration << " (loss " << loss << ")";
    throw TrainingError(msg.str());
  }
}

void emit(const TrainContext& ctx, TrainState& state, LogRow row) {
  state.history.push_back(row);
  if (ctx.on_log) ctx.on_log(row);
}

struct BatchResult {
  double loss = 0.0;
  Eigen::MatrixXd gate_grad;
};

BatchResult run_batch(const TrainContext& ctx, const StudentPlan& plan, const std::vector<int>& batch) {
  BatchResult r;
  for (int i : batch) {
    const auto& teacher = ctx.train.teacher[static_cast<std::size_t>(i)];
    const auto pass = student_pass(*ctx.model, ctx.selector, ctx.train.conditions[static_cast<std::size_t>(i)],
                                   ctx.train.noises[static_cast<std::size_t>(i)], plan,
                                   [&](const Matrix<double>& x0) { return ctx.loss(teacher, x0); });
    r.loss += pass.loss;
    if (r.gate_grad.size() == 0) r.gate_grad = pass.gate_grad;
    else r.gate_grad += pass.gate_grad;
  }
  const double n = static_cast<double>(batch.size());
  r.loss /= n;
  r.gate_grad /= n;
  return r;
}

SparsitySchedule solve_layer(const TrainContext& ctx, const CostMatrix& costs) {
  SparsitySchedule s = solve(costs, ctx.budget, ctx.solve_options());
  s.candidates = ctx.candidates;
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(stage1_layer_lr > 0 && stage1_step_lr > 0 && stage2_lr > 0)) throw ConfigError("train: learning rates must be positive");
  if (!(delta >= 0.0)) throw ConfigError("train: delta must be non-negative");
  if (stage1_layer_iterations < 0 || stage1_step_iterations < 0 || stage2_iterations < 0)
    throw ConfigError("train: iteration counts must be non-negative");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (train_samples < 1 || eval_samples < 1) throw ConfigError("train: sample counts must be >= 1");
  if (dp_resolve_period < 1) throw ConfigError("train: dp_resolve_period must be >= 1");
  if (full_step_count < 0) throw ConfigError("train: full_step_count must be >= 0");
}

void Adam::step(Eigen::MatrixXd& params, const Eigen::MatrixXd& grad) {
  require(params.rows() == grad.rows() && params.cols() == grad.cols(), "Adam: gradient shape mismatch");
  if (m_.size() == 0) {
    m_ = Eigen::MatrixXd::Zero(params.rows(), params.cols());
    v_ = Eigen::MatrixXd::Zero(params.rows(), params.cols());
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
  if (weight_decay_ != 0.0) params *= 1.0 - lr_ * weight_decay_;
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

SampleSet make_sample_set(const ToyDiTModel<double>& model, int count, std::uint64_t seed) {
  SampleSet s;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t si = split_seed(seed, "sample" + std::to_string(i));
    s.conditions.push_back(make_condition<double>(model.config, si));
    s.noises.push_back(make_noise<double>(model.config, si));
    s.teacher.push_back(sample_dense(model, s.conditions.back(), s.noises.back()));
  }
  return s;
}

std::string log_csv_header() { return "iteration,stage,loss,budget_units,dp_total_cost,wall_ms\n"; }

std::string log_csv_row(const LogRow& r) {
  std::ostringstream out;
  out.precision(10);
  out << r.iteration << ',' << r.stage << ',' << r.loss << ',' << r.budget_units << ',' << r.dp_total_cost << ','
      << r.wall_ms << "\n";
  return out.str();
}

TrainContext::TrainContext(const ToyDiTModel<double>& m, const CandidateSet& cands, double cache_ratio,
                           const SelectorWeights& sel, const TrainConfig& cfg)
    : model(&m), candidates(cands), selector(sel), config(cfg) {
  config.validate();
  const auto& c = m.config;
  budget = Budget::from_ratio(cache_ratio, c.schedulable_steps() * c.sublayer_count(), cands.units());
  train = make_sample_set(m, config.train_samples, split_seed(config.seed, "train_set"));
  if (config.loss_kind == LossKind::FeatureProxy) proxy.emplace(c.model_dim, c.grid_shape(), kFeatureProxySeed);
}

SolveOptions TrainContext::solve_options() const {
  SolveOptions o;
  for (int l = 0; l < model->config.sublayer_count(); ++l) o.sub_layer_names.push_back(model->config.sublayer_name(l));
  return o;
}

LossValue TrainContext::loss(const Matrix<double>& teacher, const Matrix<double>& student) const {
  return distill_loss(config.loss_kind, teacher, student, model->config.grid_shape(), proxy ? &*proxy : nullptr);
}

TrainState init_train_state(const TrainContext& ctx) {
  const auto& c = ctx.model->config;
  const SparsitySchedule init = SparsitySchedule::uniform(c, ctx.candidates, ctx.budget);
  TrainState s{init_costs(c.schedulable_steps(), c.sublayer_count(), ctx.candidates.size(), ctx.config.seed, init),
               init_step_costs(c.schedulable_steps(), ctx.config.seed),
               Adam(ctx.config.stage1_layer_lr),
               Adam(ctx.config.stage1_step_lr),
               {},
               init,
               0,
               {}};
  s.schedule = solve_layer(ctx, s.layer_costs);
  return s;
}

CostGradient layer_cost_gradient(const TrainContext& ctx, const CostMatrix& costs, const std::vector<int>& batch) {
  CostGradient g;
  g.schedule = solve_layer(ctx, costs);
  const StraightThroughGates gates = gates_from_dp(costs, g.schedule);
  const StudentPlan plan = plan_for_schedule(ctx.model->config, g.schedule);
  const BatchResult r = run_batch(ctx, plan, batch);
  g.loss = r.loss;
  g.grad = gates.backward(r.gate_grad);
  return g;
}

namespace {

/// One pass of layer-cost descent shared by both stages.
void layer_iterations(const TrainContext& ctx, TrainState& state, int iterations, const std::string& stage) {
  const auto& c = ctx.model->config;
  for (int i = 0; i < iterations; ++i) {
    const auto start = std::chrono::steady_clock::now();
    if (i % ctx.config.dp_resolve_period == 0) state.schedule = solve_layer(ctx, state.layer_costs);
    BudgetAudit::record(state.schedule, ctx.budget.total_units);
    const StraightThroughGates gates = gates_from_dp(state.layer_costs, state.schedule);
    const StudentPlan plan = plan_for_schedule(c, state.schedule);
    const BatchResult r = run_batch(ctx, plan, batch_indices(ctx, state.iteration));
    const Eigen::MatrixXd grad = gates.backward(r.gate_grad);
    check_finite(r.loss, grad, stage, state.iteration);
    state.layer_optimizer.step(state.layer_costs.values, grad);
    emit(ctx, state, {state.iteration, stage, r.loss, state.schedule.achieved_units(), state.schedule.total_cost,
                      elapsed_ms(start)});
    ++state.iteration;
  }
}

}  // namespace

void train_stage1(const TrainContext& ctx, TrainState& state) {
  train_stage1_costs(ctx, state);
  apply_warm_start(ctx, state, ctx.config.delta);
}

void train_stage1_costs(const TrainContext& ctx, TrainState& state) {
  const auto& c = ctx.model->config;
  const int steps = c.schedulable_steps(), layers = c.sublayer_count();
  const int full_count = ctx.config.full_step_count > 0 ? std::min(ctx.config.full_step_count, steps)
                                                        : default_full_step_count(steps);
  state.layer_optimizer = Adam(ctx.config.stage1_layer_lr);
  layer_iterations(ctx, state, ctx.config.stage1_layer_iterations, "1-layer");

  // Step costs: per step, full retention everywhere vs a uniform mid-retention step.
  state.step_optimizer = Adam(ctx.config.stage1_step_lr);
  StudentPlan plan;
  plan.retained = {static_cast<int>(std::nearbyint(0.5 * c.token_count)), c.token_count};
  for (int i = 0; i < ctx.config.stage1_step_iterations; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const FullStepSolution full = solve_full_steps(state.step_costs, full_count);
    plan.gates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps) * layers, 2);
    plan.hard.assign(static_cast<std::size_t>(steps * layers), 0);
    for (int t = 0; t < steps; ++t)
      for (int l = 0; l < layers; ++l) {
        const int h = full.steps.count(t) ? 1 : 0;
        plan.gates(t * layers + l, h) = 1.0;
        plan.hard[static_cast<std::size_t>(t * layers + l)] = h;
      }
    const BatchResult r = run_batch(ctx, plan, batch_indices(ctx, state.iteration));
    Eigen::MatrixXd step_grad = Eigen::MatrixXd::Zero(steps, 2);
    for (int t = 0; t < steps; ++t)
      for (int l = 0; l < layers; ++l) step_grad.row(t) += r.gate_grad.row(t * layers + l);
    const Eigen::MatrixXd grad = softmax_backward(state.step_costs.relaxed_gates(), step_grad, state.step_costs.temperature);
    check_finite(r.loss, grad, "1-step", state.iteration);
    state.step_optimizer.step(state.step_costs.values, grad);
    emit(ctx, state, {state.iteration, "1-step", r.loss, 0, full.total_cost, elapsed_ms(start)});
    ++state.iteration;
  }

  state.full_steps = solve_full_steps(state.step_costs, full_count).steps;
}

void apply_warm_start(const TrainContext& ctx, TrainState& state, double delta) {
  warm_start(state.layer_costs, state.full_steps, delta);
  state.schedule = finalize_schedule(ctx, state.layer_costs);
}

void train_stage2(const TrainContext& ctx, TrainState& state) {
  state.layer_optimizer = Adam(ctx.config.stage2_lr);
  layer_iterations(ctx, state, ctx.config.stage2_iterations, "2");
  state.schedule = finalize_schedule(ctx, state.layer_costs);
}

SparsitySchedule finalize_schedule(const TrainContext& ctx, CostMatrix& costs) {
  costs.values = costs.values.cast<float>().cast<double>();
  return solve_layer(ctx, costs);
}

double evaluate_schedule(const ToyDiTModel<double>& model, const SelectorWeights& selector,
                         const SparsitySchedule& schedule, const SampleSet& samples, LossKind kind,
                         const FeatureProxy* proxy) {
  std::optional<FeatureProxy> own;
  if (kind == LossKind::FeatureProxy && proxy == nullptr) {
    own.emplace(model.config.model_dim, model.config.grid_shape(), kFeatureProxySeed);
    proxy = &*own;
  }
  double total = 0.0;
  for (int i = 0; i < samples.size(); ++i) {
    CacheExecutor<double> exec(model.config, schedule, selector);
    const auto run = exec.run(model, samples.conditions[static_cast<std::size_t>(i)], samples.noises[static_cast<std::size_t>(i)]);
    total += distill_loss(kind, samples.teacher[static_cast<std::size_t>(i)], run.x0, model.config.grid_shape(), proxy).value;
  }
  return total / samples.size();
}

double evaluate_ssim(const ToyDiTModel<double>& model, const SelectorWeights& selector, const SparsitySchedule& schedule,
                     const SampleSet& samples) {
  double total = 0.0;
  for (int i = 0; i < samples.size(); ++i) {
    CacheExecutor<double> exec(model.config, schedule, selector);
    const auto run = exec.run(model, samples.conditions[static_cast<std::size_t>(i)], samples.noises[static_cast<std::size_t>(i)]);
    total += ssim(samples.teacher[static_cast<std::size_t>(i)], run.x0, model.config.grid_shape());
  }
  return total / samples.size();
}

}  // namespace sparse_sched
