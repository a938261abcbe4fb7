// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/run_config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sparse_sched {

using nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config: section '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + where + "." + key + "'");
}

template <typename T>
void read(const ordered_json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

std::uint64_t parse_seed(const char* text) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text, &end, 10);
  if (end == text || *end != '\0') throw ConfigError(std::string("config: ") + kSeedEnv + " must be an unsigned integer");
  return v;
}

}  // namespace

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::Attention: return "attention";
    case ScoreKind::Similarity: return "similarity";
    case ScoreKind::Norm: return "norm";
  }
  return "?";
}

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "attention") return ScoreKind::Attention;
  if (s == "similarity") return ScoreKind::Similarity;
  if (s == "norm") return ScoreKind::Norm;
  throw ConfigError("unknown score kind: " + s);
}

void RunConfig::validate() const {
  model.validate();
  (void)candidates();
  if (!(cache_ratio >= 0.0 && cache_ratio <= 1.0)) throw ConfigError("config: budget.cache_ratio must lie in [0, 1]");
  selector.validate(model.token_count);
  train.validate();
}

std::string run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["model"] = {{"num_blocks", c.model.num_blocks},       {"token_count", c.model.token_count},
                {"model_dim", c.model.model_dim},         {"mlp_hidden", c.model.mlp_hidden},
                {"context_tokens", c.model.context_tokens}, {"num_heads", c.model.num_heads},
                {"num_steps", c.model.num_steps},         {"num_classes", c.model.num_classes},
                {"seed", c.model.seed}};
  j["candidates"] = {{"interval", c.interval}};
  j["budget"] = {{"cache_ratio", c.cache_ratio}, {"equality_mode", c.at_most ? "at_most" : "exact"}};
  j["selector"] = {{"lambda1", c.selector.lambda1},         {"lambda2", c.selector.lambda2},
                   {"lambda3", c.selector.lambda3},         {"lambda4", c.selector.lambda4},
                   {"neighborhood", c.selector.neighborhood}, {"score_kind", to_string(c.selector.kind)},
                   {"entropy_sign", c.selector.entropy_sign}};
  const auto& t = c.train;
  j["train"] = {{"stage1_layer_lr", t.stage1_layer_lr},
                {"stage1_step_lr", t.stage1_step_lr},
                {"stage2_lr", t.stage2_lr},
                {"delta", t.delta},
                {"stage1_layer_iterations", t.stage1_layer_iterations},
                {"stage1_step_iterations", t.stage1_step_iterations},
                {"stage2_iterations", t.stage2_iterations},
                {"batch_size", t.batch_size},
                {"train_samples", t.train_samples},
                {"eval_samples", t.eval_samples},
                {"loss_kind", to_string(t.loss_kind)},
                {"dp_resolve_period", t.dp_resolve_period},
                {"full_step_count", t.full_step_count},
                {"seed", t.seed}};
  j["paths"] = {{"checkpoint", c.paths.checkpoint},
                {"model", c.paths.model},
                {"schedule", c.paths.schedule},
                {"report_dir", c.paths.report_dir}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j, {"model", "candidates", "budget", "selector", "train", "paths"}, "<root>");
  RunConfig c;
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"num_blocks", "token_count", "model_dim", "mlp_hidden", "context_tokens", "num_heads", "num_steps",
                       "num_classes", "seed"},
                   "model");
    read(m, "num_blocks", c.model.num_blocks, "model");
    read(m, "token_count", c.model.token_count, "model");
    read(m, "model_dim", c.model.model_dim, "model");
    read(m, "mlp_hidden", c.model.mlp_hidden, "model");
    read(m, "context_tokens", c.model.context_tokens, "model");
    read(m, "num_heads", c.model.num_heads, "model");
    read(m, "num_steps", c.model.num_steps, "model");
    read(m, "num_classes", c.model.num_classes, "model");
    read(m, "seed", c.model.seed, "model");
  }
  if (j.contains("candidates")) {
    reject_unknown(j["candidates"], {"interval"}, "candidates");
    read(j["candidates"], "interval", c.interval, "candidates");
  }
  if (j.contains("budget")) {
    const auto& b = j["budget"];
    reject_unknown(b, {"cache_ratio", "equality_mode"}, "budget");
    read(b, "cache_ratio", c.cache_ratio, "budget");
    std::string mode = "exact";
    read(b, "equality_mode", mode, "budget");
    if (mode != "exact" && mode != "at_most") throw ConfigError("config: budget.equality_mode must be exact or at_most");
    c.at_most = mode == "at_most";
  }
  if (j.contains("selector")) {
    const auto& s = j["selector"];
    reject_unknown(s, {"lambda1", "lambda2", "lambda3", "lambda4", "neighborhood", "score_kind", "entropy_sign"}, "selector");
    read(s, "lambda1", c.selector.lambda1, "selector");
    read(s, "lambda2", c.selector.lambda2, "selector");
    read(s, "lambda3", c.selector.lambda3, "selector");
    read(s, "lambda4", c.selector.lambda4, "selector");
    read(s, "neighborhood", c.selector.neighborhood, "selector");
    read(s, "entropy_sign", c.selector.entropy_sign, "selector");
    std::string kind = to_string(c.selector.kind);
    read(s, "score_kind", kind, "selector");
    c.selector.kind = score_kind_from_string(kind);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"stage1_layer_lr", "stage1_step_lr", "stage2_lr", "delta", "stage1_layer_iterations",
                       "stage1_step_iterations", "stage2_iterations", "batch_size", "train_samples", "eval_samples",
                       "loss_kind", "dp_resolve_period", "full_step_count", "seed"},
                   "train");
    auto& o = c.train;
    read(t, "stage1_layer_lr", o.stage1_layer_lr, "train");
    read(t, "stage1_step_lr", o.stage1_step_lr, "train");
    read(t, "stage2_lr", o.stage2_lr, "train");
    read(t, "delta", o.delta, "train");
    read(t, "stage1_layer_iterations", o.stage1_layer_iterations, "train");
    read(t, "stage1_step_iterations", o.stage1_step_iterations, "train");
    read(t, "stage2_iterations", o.stage2_iterations, "train");
    read(t, "batch_size", o.batch_size, "train");
    read(t, "train_samples", o.train_samples, "train");
    read(t, "eval_samples", o.eval_samples, "train");
    std::string loss = to_string(o.loss_kind);
    read(t, "loss_kind", loss, "train");
    o.loss_kind = loss_kind_from_string(loss);
    read(t, "dp_resolve_period", o.dp_resolve_period, "train");
    read(t, "full_step_count", o.full_step_count, "train");
    read(t, "seed", o.seed, "train");
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    reject_unknown(p, {"checkpoint", "model", "schedule", "report_dir"}, "paths");
    read(p, "checkpoint", c.paths.checkpoint, "paths");
    read(p, "model", c.paths.model, "paths");
    read(p, "schedule", c.paths.schedule, "paths");
    read(p, "report_dir", c.paths.report_dir, "paths");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c = run_config_from_json(buf.str());
  if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
    const std::uint64_t seed = parse_seed(env);
    c.model.seed = seed;
    c.train.seed = seed;
  }
  return c;
}

std::string config_hash(const RunConfig& config) {
  // Output locations do not change results, so they are left out.
  RunConfig canonical = config;
  canonical.paths = PathConfig{};
  const std::string text = run_config_to_json(canonical);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  return buf;
}

}  // namespace sparse_sched
