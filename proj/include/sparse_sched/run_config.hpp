// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "sparse_sched/config.hpp"
#include "sparse_sched/schedule.hpp"
#include "sparse_sched/selector.hpp"
#include "sparse_sched/trainer.hpp"

namespace sparse_sched {

struct PathConfig {
  std::string checkpoint = "out/costs";  // container prefix for the cost tensors
  std::string model = "out/model";      // container prefix for the model weights
  std::string schedule = "out/schedule.json";
  std::string report_dir = "out";
};

/// Complete configuration of a CLI run. JSON sections: model, candidates, budget,
/// selector, train, paths. Unknown keys are rejected.
struct RunConfig {
  ToyDiTConfig model;
  double interval = 0.25;
  double cache_ratio = 0.5;
  bool at_most = false;
  SelectorWeights selector;
  TrainConfig train;
  PathConfig paths;

  void validate() const;
  CandidateSet candidates() const { return CandidateSet(interval); }
  Budget budget() const {
    return Budget::from_ratio(cache_ratio, model.schedulable_steps() * model.sublayer_count(), candidates().units(), at_most);
  }
};

inline constexpr const char* kSeedEnv = "SPARSE_SCHED_SEED";

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);

/// Reads a config file and applies the SPARSE_SCHED_SEED override to model and train seeds.
RunConfig load_run_config(const std::string& path);

/// 16 hex digits identifying the canonical serialized config.
std::string config_hash(const RunConfig& config);

std::string to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& s);

}  // namespace sparse_sched
