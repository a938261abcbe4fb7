// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "sparse_sched/types.hpp"

namespace sparse_sched {

enum class SubLayerKind { SelfAttn = 0, CrossAttn = 1, MLP = 2 };

inline const char* to_string(SubLayerKind kind) {
  switch (kind) {
    case SubLayerKind::SelfAttn: return "sa";
    case SubLayerKind::CrossAttn: return "ca";
    case SubLayerKind::MLP: return "mlp";
  }
  return "?";
}

/// Topology of the toy diffusion transformer.
struct ToyDiTConfig {
  int num_blocks = 4;
  int token_count = 64;
  int model_dim = 64;
  int mlp_hidden = 256;
  int context_tokens = 16;  // 0 disables cross-attention
  int num_heads = 4;
  int num_steps = 8;
  int num_classes = 10;  // class table, used only when context_tokens == 0
  std::uint64_t seed = 0;

  void validate() const {
    if (num_blocks <= 0 || token_count <= 0 || model_dim <= 0 || mlp_hidden <= 0 || num_heads <= 0)
      throw ConfigError("ToyDiTConfig: dimensions must be positive");
    if (context_tokens < 0) throw ConfigError("ToyDiTConfig: context_tokens must be non-negative");
    if (model_dim % num_heads != 0) throw ConfigError("ToyDiTConfig: model_dim must be divisible by num_heads");
    if (num_steps < 2) throw ConfigError("ToyDiTConfig: num_steps must be at least 2");
    if (context_tokens == 0 && num_classes <= 0) throw ConfigError("ToyDiTConfig: num_classes must be positive");
  }

  bool has_cross_attention() const { return context_tokens > 0; }
  int kinds_per_block() const { return has_cross_attention() ? 3 : 2; }
  int sublayer_count() const { return num_blocks * kinds_per_block(); }
  int head_dim() const { return model_dim / num_heads; }
  /// Steps after the always-full first step.
  int schedulable_steps() const { return num_steps - 1; }

  /// Token grid used by the spatial bonus and image metrics: the most square factorization.
  std::pair<int, int> grid_shape() const {
    int rows = 1;
    for (int r = 1; r * r <= token_count; ++r)
      if (token_count % r == 0) rows = r;
    return {rows, token_count / rows};
  }

  SubLayerKind kind_at(int flat_index) const {
    const int rank = flat_index % kinds_per_block();
    if (!has_cross_attention()) return rank == 0 ? SubLayerKind::SelfAttn : SubLayerKind::MLP;
    return static_cast<SubLayerKind>(rank);
  }

  std::string sublayer_name(int flat_index) const {
    return "block" + std::to_string(flat_index / kinds_per_block()) + "." + to_string(kind_at(flat_index));
  }

  bool operator==(const ToyDiTConfig&) const = default;
};

/// Address of one sub-layer evaluation: (step, block, kind) with its flat index.
struct SubLayerId {
  int step = 0;
  int block = 0;
  SubLayerKind kind = SubLayerKind::SelfAttn;
  int flat_index = 0;

  static SubLayerId at(const ToyDiTConfig& config, int step, int flat_index) {
    require(flat_index >= 0 && flat_index < config.sublayer_count(), "SubLayerId: flat_index out of range");
    require(step >= 0 && step < config.num_steps, "SubLayerId: step out of range");
    return {step, flat_index / config.kinds_per_block(), config.kind_at(flat_index), flat_index};
  }

  static SubLayerId of(const ToyDiTConfig& config, int step, int block, SubLayerKind kind) {
    require(block >= 0 && block < config.num_blocks, "SubLayerId: block out of range");
    require(kind != SubLayerKind::CrossAttn || config.has_cross_attention(),
            "SubLayerId: cross-attention disabled in this config");
    int rank = static_cast<int>(kind);
    if (!config.has_cross_attention() && kind == SubLayerKind::MLP) rank = 1;
    return at(config, step, block * config.kinds_per_block() + rank);
  }
};

}  // namespace sparse_sched
