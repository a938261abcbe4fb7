// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "sparse_sched/schedule.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sparse_sched_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    nlohmann::json cfg = {
        {"model", {{"num_blocks", 1}, {"token_count", 16}, {"model_dim", 8}, {"mlp_hidden", 16}, {"context_tokens", 4},
                   {"num_heads", 2}, {"num_steps", 5}}},
        {"selector", {{"neighborhood", 2}}},
        {"train", {{"stage1_layer_iterations", 3}, {"stage1_step_iterations", 3}, {"stage2_iterations", 3},
                   {"train_samples", 2}, {"eval_samples", 2}}},
        {"paths", {{"checkpoint", (dir_ / "costs").string()}, {"model", (dir_ / "model").string()},
                   {"schedule", (dir_ / "schedule.json").string()}, {"report_dir", dir_.string()}}}};
    std::ofstream(dir_ / "config.json") << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(SPARSE_SCHED_CLI) + " " + args + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string config() const { return "--config " + (dir_ / "config.json").string(); }

  fs::path dir_;
};

TEST_F(Cli, TrainEmitsArtifactsDeterministically) {
  ASSERT_EQ(run("train " + config() + " --stage all"), 0) << read_file(dir_ / "stderr.txt");
  for (const char* f : {"costs.json", "costs.bin", "schedule.json", "train_log.csv", "model.json", "model.bin"})
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  const std::string first = read_file(dir_ / "schedule.json");
  const auto schedule = sparse_sched::schedule_from_json(first);
  EXPECT_EQ(schedule.config_hash.size(), 16u);
  EXPECT_EQ(read_file(dir_ / "train_log.csv").rfind("# config_hash=" + schedule.config_hash, 0), 0u);
  ASSERT_EQ(run("train " + config() + " --stage all"), 0);
  EXPECT_EQ(read_file(dir_ / "schedule.json"), first);
  ASSERT_EQ(run("train " + config() + " --stage all --seed 5"), 0);
  EXPECT_NE(sparse_sched::schedule_from_json(read_file(dir_ / "schedule.json")).config_hash, schedule.config_hash);
}

TEST_F(Cli, SolveReproducesTrainedSchedule) {
  ASSERT_EQ(run("train " + config()), 0);
  ASSERT_EQ(run("solve --costs " + (dir_ / "costs").string() + " --out " + (dir_ / "solved.json").string()), 0);
  EXPECT_EQ(read_file(dir_ / "solved.json"), read_file(dir_ / "schedule.json"));
  EXPECT_NE(read_file(dir_ / "stdout.txt").find("zero_skip_count"), std::string::npos);
}

TEST_F(Cli, SolveExtremeRatios) {
  ASSERT_EQ(run("train " + config() + " --stage 1"), 0);
  ASSERT_EQ(run("solve --costs " + (dir_ / "costs").string() + " --ratio 0 --out " + (dir_ / "full.json").string()), 0);
  const auto full = sparse_sched::read_schedule((dir_ / "full.json").string());
  EXPECT_EQ(full.choice.minCoeff(), full.candidates.units());
  ASSERT_EQ(run("solve --costs " + (dir_ / "costs").string() + " --ratio 1 --out " + (dir_ / "zero.json").string()), 0);
  EXPECT_EQ(sparse_sched::read_schedule((dir_ / "zero.json").string()).choice.maxCoeff(), 0);
  EXPECT_EQ(run("solve --costs " + (dir_ / "costs").string() + " --ratio 1.5"), 3);
}

TEST_F(Cli, StageTwoNeedsStageOneCheckpoint) {
  EXPECT_EQ(run("train " + config() + " --stage 2"), 3);
  EXPECT_NE(read_file(dir_ / "stderr.txt").find("stage-1"), std::string::npos);
  ASSERT_EQ(run("train " + config() + " --stage 1"), 0);
  EXPECT_EQ(run("train " + config() + " --stage 2"), 0);
}

TEST_F(Cli, StagedTrainingMatchesSingleRun) {
  ASSERT_EQ(run("train " + config() + " --stage all"), 0);
  const std::string all = read_file(dir_ / "schedule.json");
  ASSERT_EQ(run("train " + config() + " --stage 1"), 0);
  ASSERT_EQ(run("train " + config() + " --stage 2"), 0);
  EXPECT_EQ(read_file(dir_ / "schedule.json"), all);
}

TEST_F(Cli, BenchFullBaselineIsExact) {
  ASSERT_EQ(run("bench " + config() + " --baseline full --samples 3 --jobs 2"), 0) << read_file(dir_ / "stderr.txt");
  std::stringstream csv(read_file(dir_ / "bench_full.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("# config_hash=", 0), 0u);
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_NE(line.find(",inf,1,"), std::string::npos) << line;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "1");
  }
  EXPECT_EQ(rows, 3);
  const std::string svg = read_file(dir_ / "heatmap_full.svg");
  const std::regex rect("<rect ");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), rect), std::sregex_iterator()), 4 * 3);
}

TEST_F(Cli, BenchRejectsMismatchedSchedule) {
  ASSERT_EQ(run("train " + config()), 0);
  fs::copy_file(dir_ / "schedule.json", dir_ / "trained.json");
  auto cfg = nlohmann::json::parse(read_file(dir_ / "config.json"));
  cfg["model"]["num_steps"] = 6;
  cfg["paths"]["model"] = (dir_ / "model6").string();
  std::ofstream(dir_ / "config.json") << cfg.dump(2);
  EXPECT_EQ(run("bench " + config() + " --schedule " + (dir_ / "trained.json").string()), 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("train --config " + (dir_ / "missing.json").string()), 4);
  std::ofstream(dir_ / "bad.json") << R"({"train": {"learning_rate": 1}})";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.json").string()), 2);
  EXPECT_EQ(run("bench " + config()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("config --out " + (dir_ / "default.json").string()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "default.json"));
}

TEST_F(Cli, AblateDeltaAxis) {
  ASSERT_EQ(run("ablate " + config() + " --axis delta --out " + (dir_ / "delta.csv").string()), 0)
      << read_file(dir_ / "stderr.txt");
  std::stringstream csv(read_file(dir_ / "delta.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 2 + 4);
}

}  // namespace
