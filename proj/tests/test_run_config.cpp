// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sparse_sched/run_config.hpp"

namespace sparse_sched {
namespace {

std::string temp_file(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / ("sparse_sched_" + name);
  std::ofstream(path) << text;
  return path.string();
}

TEST(RunConfig, DefaultsRoundTripLosslessly) {
  const RunConfig c;
  const std::string text = run_config_to_json(c);
  EXPECT_EQ(run_config_to_json(run_config_from_json(text)), text);
  EXPECT_EQ(config_hash(run_config_from_json(text)), config_hash(c));
}

TEST(RunConfig, EditedValuesSurvive) {
  RunConfig c;
  c.model.num_steps = 6;
  c.interval = 0.125;
  c.cache_ratio = 0.43;
  c.at_most = true;
  c.selector = SelectorWeights::class_conditional();
  c.selector.kind = ScoreKind::Norm;
  c.train.loss_kind = LossKind::SSIM;
  c.train.delta = 5.0;
  c.paths.report_dir = "elsewhere";
  const auto back = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(back), run_config_to_json(c));
  EXPECT_EQ(back.model.num_steps, 6);
  EXPECT_EQ(back.selector.kind, ScoreKind::Norm);
  EXPECT_TRUE(back.at_most);
  EXPECT_EQ(back.budget().total_units, c.budget().total_units);
  // Paths do not affect the hash; everything else does.
  RunConfig moved = c;
  moved.paths.schedule = "x.json";
  EXPECT_EQ(config_hash(moved), config_hash(c));
  RunConfig other = c;
  other.train.seed = 1;
  EXPECT_NE(config_hash(other), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(RunConfig, UnknownKeysRejected) {
  EXPECT_THROW(run_config_from_json(R"({"modle": {}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"train": {"lr": 1.0}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"budget": {"equality_mode": "roughly"}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"model": {"num_steps": "eight"}})"), ConfigError);
  EXPECT_THROW(run_config_from_json("{not json"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"candidates": {"interval": 0.3}})"), ConfigError);
  EXPECT_NO_THROW(run_config_from_json("{}"));
}

TEST(RunConfig, PartialDocumentsKeepDefaults) {
  const auto c = run_config_from_json(R"({"budget": {"cache_ratio": 0.3}})");
  EXPECT_EQ(c.cache_ratio, 0.3);
  EXPECT_EQ(c.model.token_count, RunConfig{}.model.token_count);
  EXPECT_EQ(c.train.stage1_layer_lr, 1.0);
}

TEST(RunConfig, MissingFileIsIoError) {
  EXPECT_THROW(load_run_config("/nonexistent/dir/config.json"), IoError);
}

TEST(RunConfig, SeedEnvironmentOverride) {
  const auto path = temp_file("seed.json", R"({"model": {"seed": 3}, "train": {"seed": 4}})");
  ::unsetenv(kSeedEnv);
  auto c = load_run_config(path);
  EXPECT_EQ(c.model.seed, 3u);
  EXPECT_EQ(c.train.seed, 4u);
  ::setenv(kSeedEnv, "17", 1);
  c = load_run_config(path);
  EXPECT_EQ(c.model.seed, 17u);
  EXPECT_EQ(c.train.seed, 17u);
  ::setenv(kSeedEnv, "x17", 1);
  EXPECT_THROW(load_run_config(path), ConfigError);
  ::unsetenv(kSeedEnv);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace sparse_sched
