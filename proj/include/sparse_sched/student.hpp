// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "sparse_sched/losses.hpp"
#include "sparse_sched/sampler.hpp"
#include "sparse_sched/tape.hpp"
#include "sparse_sched/token_cache.hpp"

namespace sparse_sched {

/// Gated execution plan for the differentiable sampler. Every schedulable slot mixes
/// the fresh sub-layer output with its cache through per-token weights
/// a_i = sum_s gate_s [rank(i) < K_s]; `hard` is the candidate whose token set
/// drives cache bookkeeping (the one-hot position of the forward gates).
struct StudentPlan {
  std::vector<int> retained;  // K_s per candidate
  Eigen::MatrixXd gates;      // slots x candidates, slot = t * L_d + l
  std::vector<int> hard;      // per slot
  /// Token rankings per slot; when set they replace the selector (used to hold the
  /// discrete selections fixed under perturbation).
  const std::vector<std::vector<int>>* frozen_orders = nullptr;
};

struct StudentPass {
  Matrix<double> x0;
  double loss = 0.0;
  Eigen::MatrixXd gate_grad;  // d loss / d gates, slots x candidates
  std::vector<std::vector<int>> orders;
};

using LossFn = std::function<LossValue(const Matrix<double>& x0)>;

/// Plan that reproduces a schedule exactly (one-hot gates).
inline StudentPlan plan_for_schedule(const ToyDiTConfig& config, const SparsitySchedule& schedule) {
  StudentPlan p;
  const int cands = schedule.candidates.size();
  for (int s = 0; s < cands; ++s) p.retained.push_back(schedule.candidates.retained_tokens(s, config.token_count));
  p.gates = Eigen::MatrixXd::Zero(schedule.choice.size(), cands);
  for (int i = 0; i < static_cast<int>(schedule.choice.size()); ++i) {
    const int s = schedule.choice.data()[i];
    p.gates(i, s) = 1.0;
    p.hard.push_back(s);
  }
  return p;
}

/// Differentiable scheduled sample. With one-hot gates the forward matches the
/// cache executor on the same schedule; the backward yields d loss / d gates.
inline StudentPass student_pass(const ToyDiTModel<double>& model, const SelectorWeights& selector,
                                const Condition<double>& condition, const Matrix<double>& noise, const StudentPlan& plan,
                                const LossFn& loss, bool with_grad = true) {
  using Mat = Matrix<double>;
  using V = Tape<double>::Var;
  const auto& c = model.config;
  const int n = c.token_count, layers = c.sublayer_count();
  const int slots = c.schedulable_steps() * layers;
  const auto cands = static_cast<int>(plan.retained.size());
  require(plan.gates.rows() == slots && plan.gates.cols() == cands, "student_pass: gate matrix shape mismatch");
  require(static_cast<int>(plan.hard.size()) == slots, "student_pass: hard choice count mismatch");

  StudentPass out;
  out.gate_grad = Eigen::MatrixXd::Zero(slots, cands);
  out.orders.resize(static_cast<std::size_t>(slots));
  Eigen::MatrixXd* gate_grad = &out.gate_grad;

  Tape<double> tape;
  TokenCache<double> cache(c);
  std::vector<V> cache_vars(static_cast<std::size_t>(layers));
  const NoiseSchedule schedule = NoiseSchedule::make(c.num_steps);
  const ContextKV<double> context = precompute_context(model, condition);

  V x = tape.constant(noise);
  for (int t = 0; t < c.num_steps; ++t) {
    V h = ad::stem(tape, model, x, t, condition);
    for (int l = 0; l < layers; ++l) {
      const SubLayerId id = SubLayerId::at(c, t, l);
      const auto* ctx = id.kind == SubLayerKind::CrossAttn ? &context : nullptr;
      const Mat& stream = tape.value(h);
      auto fresh = ad::sublayer(tape, model, id, h, ctx);

      if (t == 0) {
        std::vector<int> all(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
        cache.update(l, all, tape.value(fresh.output), fresh.attention, stream);
        cache_vars[static_cast<std::size_t>(l)] = fresh.output;
        h = ad::add(tape, h, fresh.output);
        continue;
      }

      const int slot = (t - 1) * layers + l;
      std::vector<int>& order = out.orders[static_cast<std::size_t>(slot)];
      if (plan.frozen_orders) {
        order = plan.frozen_orders->at(static_cast<std::size_t>(slot));
      } else if (std::any_of(plan.retained.begin(), plan.retained.end(), [&](int k) { return k > 0 && k < n; })) {
        order = rank_tokens(cache.score(selector, l, stream).total);
      } else {
        order.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      }
      std::vector<int> rank(static_cast<std::size_t>(n));
      for (int r = 0; r < n; ++r) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;

      Eigen::VectorXd weight = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i)
        for (int s = 0; s < cands; ++s)
          if (rank[static_cast<std::size_t>(i)] < plan.retained[static_cast<std::size_t>(s)]) weight(i) += plan.gates(slot, s);

      const V prev = cache_vars[static_cast<std::size_t>(l)];
      const Mat& f = tape.value(fresh.output);
      const Mat& p = tape.value(prev);
      Mat mixed(n, c.model_dim);
      for (int i = 0; i < n; ++i) mixed.row(i) = weight(i) * f.row(i) + (1.0 - weight(i)) * p.row(i);

      const V fo = fresh.output;
      const V mix = tape.record(
          std::move(mixed), {fo, prev},
          [fo, prev, weight, rank, slot, gate_grad, retained = plan.retained](const Mat& g, Tape<double>& tp) {
            const Mat& fv = tp.value(fo);
            const Mat& pv = tp.value(prev);
            Eigen::VectorXd da(g.rows());
            for (Eigen::Index i = 0; i < g.rows(); ++i) da(i) = g.row(i).dot(fv.row(i) - pv.row(i));
            for (std::size_t s = 0; s < retained.size(); ++s)
              for (Eigen::Index i = 0; i < g.rows(); ++i)
                if (rank[static_cast<std::size_t>(i)] < retained[s]) (*gate_grad)(slot, static_cast<Eigen::Index>(s)) += da(i);
            tp.accumulate(fo, (weight.asDiagonal() * g).eval());
            tp.accumulate(prev, ((1.0 - weight.array()).matrix().asDiagonal() * g).eval());
          },
          true);

      const int k = plan.retained[static_cast<std::size_t>(plan.hard[static_cast<std::size_t>(slot)])];
      std::vector<int> rows(order.begin(), order.begin() + k);
      std::sort(rows.begin(), rows.end());
      Mat attention;
      if (fresh.attention.size() > 0 && !rows.empty()) attention = kernels::gather_rows(fresh.attention, rows);
      cache.update(l, rows, tape.value(mix), attention, stream);
      cache_vars[static_cast<std::size_t>(l)] = mix;
      h = ad::add(tape, h, mix);
    }
    const V eps = ad::head(tape, model, h);
    const auto [a, b] = schedule.ddim_coefficients(t);
    x = ad::combine(tape, x, a, eps, b);
  }

  out.x0 = tape.value(x);
  const LossValue lv = loss(out.x0);
  out.loss = lv.value;
  if (with_grad && tape.needs_grad(x)) tape.backward(x, lv.grad);
  return out;
}

}  // namespace sparse_sched
