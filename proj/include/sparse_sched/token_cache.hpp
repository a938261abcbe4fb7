// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparse_sched/model.hpp"
#include "sparse_sched/sampler.hpp"
#include "sparse_sched/schedule.hpp"
#include "sparse_sched/selector.hpp"

namespace sparse_sched {

/// Cached state of one sub-layer.
template <typename Scalar>
struct SubLayerCache {
  Matrix<Scalar> output;      // N x D pre-residual outputs
  std::vector<int> reuse;     // n_i: steps since token i was last computed
  Matrix<Scalar> attention;   // last computed attention rows (N x keys); empty for MLP
  Matrix<Scalar> last_input;  // stream rows at their last fresh computation
  bool initialized = false;
};

/// Per-sub-layer token cache. Rows that are not recomputed keep their stored output
/// and their reuse counter grows by one per step.
template <typename Scalar>
class TokenCache {
 public:
  explicit TokenCache(const ToyDiTConfig& config) : config_(config), layers_(static_cast<std::size_t>(config.sublayer_count())) {}

  const ToyDiTConfig& config() const { return config_; }
  SubLayerCache<Scalar>& at(int flat_index) { return layers_.at(static_cast<std::size_t>(flat_index)); }
  const SubLayerCache<Scalar>& at(int flat_index) const { return layers_.at(static_cast<std::size_t>(flat_index)); }

  /// Score the tokens of sub-layer `flat_index` from the block's stored attention maps.
  ScoreBreakdown score(const SelectorWeights& weights, int flat_index, const Matrix<Scalar>& stream,
                       MacCounter* counter = nullptr) const {
    const int kinds = config_.kinds_per_block();
    const int block = flat_index / kinds;
    const auto& self_layer = at(block * kinds);
    const Matrix<Scalar>* self_map = self_layer.attention.size() > 0 ? &self_layer.attention : nullptr;
    const Matrix<Scalar>* cross_map = nullptr;
    if (config_.has_cross_attention() && at(block * kinds + 1).attention.size() > 0) cross_map = &at(block * kinds + 1).attention;
    const auto& layer = at(flat_index);
    Eigen::VectorXd signal;
    if (weights.kind == ScoreKind::Similarity) {
      // Drift of each token's input since its last computation: 1 - cosine.
      signal.resize(config_.token_count);
      for (int i = 0; i < config_.token_count; ++i) {
        const double a = static_cast<double>(stream.row(i).norm()), b = static_cast<double>(layer.last_input.row(i).norm());
        const double dot = static_cast<double>(stream.row(i).dot(layer.last_input.row(i)));
        signal(i) = 1.0 - (a > 0 && b > 0 ? dot / (a * b) : 1.0);
      }
      if (counter) counter->selector += static_cast<std::int64_t>(config_.token_count) * config_.model_dim;
    } else if (weights.kind == ScoreKind::Norm) {
      // Smaller-norm tokens first.
      signal.resize(config_.token_count);
      for (int i = 0; i < config_.token_count; ++i) signal(i) = -static_cast<double>(stream.row(i).norm());
      if (counter) counter->selector += static_cast<std::int64_t>(config_.token_count) * config_.model_dim;
    }
    return score_tokens(weights, self_map, cross_map, layer.reuse, config_.grid_shape(),
                        weights.kind == ScoreKind::Attention ? nullptr : &signal, counter);
  }

  /// Record a pass in which `rows` were computed fresh and the merged output is `merged`.
  /// `attention` holds one row per computed token (in `rows` order).
  void update(int flat_index, const std::vector<int>& rows, const Matrix<Scalar>& merged, const Matrix<Scalar>& attention,
              const Matrix<Scalar>& stream) {
    auto& layer = at(flat_index);
    const auto n = static_cast<std::size_t>(config_.token_count);
    if (!layer.initialized) {
      if (rows.size() != n) throw StateError("token cache: first pass must compute every token");
      layer.reuse.assign(n, 0);
      layer.last_input = stream;
      if (attention.size() > 0) layer.attention = attention;
      layer.output = merged;
      layer.initialized = true;
      return;
    }
    for (auto& count : layer.reuse) ++count;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int i = rows[r];
      layer.reuse[static_cast<std::size_t>(i)] = 0;
      layer.last_input.row(i) = stream.row(i);
      if (attention.size() > 0) layer.attention.row(i) = attention.row(static_cast<Eigen::Index>(r));
    }
    layer.output = merged;
  }

 private:
  ToyDiTConfig config_;
  std::vector<SubLayerCache<Scalar>> layers_;
};

struct TraceEntry {
  int step = 0;
  int flat_index = 0;
  double rho = 1.0;
  std::vector<int> selected;
  std::int64_t macs = 0;
  std::int64_t selector_macs = 0;
};

/// Trace export: JSON array of {step, flat_index, rho, selected_indices, macs}.
std::string trace_to_json(const std::vector<TraceEntry>& trace);

template <typename Scalar>
struct ScheduledRun {
  Matrix<Scalar> x0;
  std::vector<TraceEntry> trace;
  MacCounter totals;  // includes stem/head and context projections
};

/// Runs one scheduled sample. Single-use: one executor per sample.
template <typename Scalar>
class CacheExecutor {
 public:
  CacheExecutor(const ToyDiTConfig& config, SparsitySchedule schedule, SelectorWeights selector = {})
      : cache_(config), schedule_(std::move(schedule)), selector_(selector) {
    schedule_.validate();
  }

  TokenCache<Scalar>& cache() { return cache_; }
  const SparsitySchedule& schedule() const { return schedule_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  const MacCounter& counter() const { return counter_; }

  Matrix<Scalar> execute_sublayer(const ToyDiTModel<Scalar>& model, const SubLayerId& id, const Matrix<Scalar>& stream,
                                  const ContextKV<Scalar>* context) {
    const auto& c = model.config;
    auto& layer = cache_.at(id.flat_index);
    const int candidate = schedule_.candidate_at(id.step, id.flat_index);
    const bool full = id.step == 0 || schedule_.candidates.is_full(candidate);
    TraceEntry entry{id.step, id.flat_index, full ? 1.0 : schedule_.candidates.fraction(candidate), {}, 0, 0};
    if (!full && !layer.initialized) throw StateError("execute_sublayer: partial retention on an uninitialized cache");

    MacCounter local;
    Matrix<Scalar> merged;
    if (full) {
      const TokenMask all(static_cast<std::size_t>(c.token_count), true);
      auto res = sublayer_forward(model, id, stream, context, all, &local);
      cache_.update(id.flat_index, res.rows, res.output, res.attention, stream);
      entry.selected = std::move(res.rows);
      merged = std::move(res.output);
    } else if (candidate == 0) {
      // Whole sub-layer skipped: no selector, no compute.
      cache_.update(id.flat_index, {}, layer.output, Matrix<Scalar>(), stream);
      merged = layer.output;
    } else {
      const int k = schedule_.candidates.retained_tokens(candidate, c.token_count);
      const auto scores = cache_.score(selector_, id.flat_index, stream, &local);
      const TokenMask mask = select_top_k(scores, k);
      auto res = sublayer_forward(model, id, stream, context, mask, &local);
      merged = layer.output;
      for (int i : res.rows) merged.row(i) = res.output.row(i);
      cache_.update(id.flat_index, res.rows, merged, res.attention, stream);
      entry.selected = std::move(res.rows);
    }
    entry.macs = local.model;
    entry.selector_macs = local.selector;
    counter_.model += local.model;
    counter_.selector += local.selector;
    trace_.push_back(std::move(entry));
    return merged;
  }

  ScheduledRun<Scalar> run(const ToyDiTModel<Scalar>& model, const Condition<Scalar>& condition,
                           const Matrix<Scalar>& noise) {
    const auto& c = model.config;
    require(!used_, "CacheExecutor: an executor runs exactly one sample");
    used_ = true;
    require(schedule_.num_steps == c.num_steps && schedule_.schedulable_steps() == c.schedulable_steps(),
            "run_scheduled_sample: schedule step count does not match the model");
    require(schedule_.sublayer_count() == c.sublayer_count(), "run_scheduled_sample: schedule sub-layer count mismatch");
    require(noise.rows() == c.token_count && noise.cols() == c.model_dim, "run_scheduled_sample: noise must be N x D");

    const NoiseSchedule noise_schedule = NoiseSchedule::make(c.num_steps);
    MacCounter context_macs;
    const ContextKV<Scalar> context = precompute_context(model, condition, &context_macs);
    counter_.model += context_macs.model;

    Matrix<Scalar> x = noise;
    for (int t = 0; t < c.num_steps; ++t) {
      Matrix<Scalar> h = stem(model, x, t, condition);
      for (int l = 0; l < c.sublayer_count(); ++l) {
        const SubLayerId id = SubLayerId::at(c, t, l);
        const bool cross = id.kind == SubLayerKind::CrossAttn;
        h += execute_sublayer(model, id, h, cross ? &context : nullptr);
        // Context projections are charged to the step-0 cross-attention slots.
        if (cross && t == 0) trace_.back().macs += context_kv_macs_per_block(c);
      }
      counter_.model += stem_head_macs(c);
      x = ddim_step(noise_schedule, t, x, head(model, h));
    }
    return {x, trace_, counter_};
  }

 private:
  TokenCache<Scalar> cache_;
  SparsitySchedule schedule_;
  SelectorWeights selector_;
  std::vector<TraceEntry> trace_;
  MacCounter counter_;
  bool used_ = false;
};

template <typename Scalar>
ScheduledRun<Scalar> run_scheduled_sample(CacheExecutor<Scalar>& executor, const ToyDiTModel<Scalar>& model,
                                          const Condition<Scalar>& condition, const Matrix<Scalar>& noise) {
  return executor.run(model, condition, noise);
}

/// Sample with an optional executor; without one every sub-layer is fully computed.
template <typename Scalar>
Matrix<Scalar> sample(const ToyDiTModel<Scalar>& model, const Condition<Scalar>& condition,
                      const Matrix<Scalar>& initial_noise, CacheExecutor<Scalar>* executor = nullptr) {
  if (executor == nullptr) return sample_dense(model, condition, initial_noise);
  return executor->run(model, condition, initial_noise).x0;
}

}  // namespace sparse_sched
