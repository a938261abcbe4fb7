// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "sparse_sched/types.hpp"

namespace sparse_sched {

enum class ScoreKind { Attention, Similarity, Norm };

/// Weights of the composite token score. The primary signal depends on `kind`:
/// attention influence and cross-attention entropy for Attention, an externally
/// supplied per-token signal otherwise.
struct SelectorWeights {
  double lambda1 = 0.0;  // self-attention influence
  double lambda2 = 1.0;  // cross-attention entropy
  double lambda3 = 0.25 / 3.0;  // reuse count
  double lambda4 = 0.4;  // spatial bonus
  int neighborhood = 4;
  ScoreKind kind = ScoreKind::Attention;
  /// +1 scores high-entropy tokens first; -1 favours focused tokens.
  double entropy_sign = 1.0;

  static SelectorWeights text_to_image() { return {}; }
  static SelectorWeights class_conditional() { return {1.0, 0.0, 0.25 / 3.0, 0.6, 2, ScoreKind::Attention, 1.0}; }

  void validate(int token_count) const {
    for (double l : {lambda1, lambda2, lambda3, lambda4, entropy_sign})
      if (!std::isfinite(l)) throw ConfigError("SelectorWeights: lambdas must be finite");
    if (neighborhood <= 0 || neighborhood * neighborhood > token_count)
      throw ConfigError("SelectorWeights: neighborhood k must satisfy 0 < k*k <= N");
  }
};

struct ScoreBreakdown {
  Eigen::VectorXd s1, s2, s3, bonus, total;
};

namespace detail {

template <typename Derived>
void check_row_normalized(const Eigen::MatrixBase<Derived>& map, const char* what) {
  for (Eigen::Index i = 0; i < map.rows(); ++i) {
    const double sum = static_cast<double>(map.row(i).sum());
    if (std::abs(sum - 1.0) > 1e-4) throw ContractError(std::string(what) + ": attention rows must sum to 1");
  }
}

}  // namespace detail

/// Composite importance score per token.
///   s1 = attention received (column sum of the self-attention map)
///   s2 = entropy of the token's cross-attention row (natural log)
///   s3 = reuse count since the last fresh computation
/// The bonus adds lambda4 to the maximum of every non-overlapping k x k tile of the
/// token grid (first index wins ties). `signal` replaces s1/s2 for the Similarity and
/// Norm kinds and is reported in the s1 slot.
template <typename Scalar>
ScoreBreakdown score_tokens(const SelectorWeights& w, const Matrix<Scalar>* self_map, const Matrix<Scalar>* cross_map,
                            const std::vector<int>& reuse_counts, std::pair<int, int> grid,
                            const Eigen::VectorXd* signal = nullptr, MacCounter* counter = nullptr) {
  const auto n = static_cast<Eigen::Index>(reuse_counts.size());
  require(static_cast<Eigen::Index>(grid.first) * grid.second == n, "score_tokens: grid rows x cols must equal N");
  w.validate(static_cast<int>(n));
  ScoreBreakdown s;
  s.s1 = Eigen::VectorXd::Zero(n);
  s.s2 = Eigen::VectorXd::Zero(n);
  s.s3.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) s.s3(i) = reuse_counts[static_cast<std::size_t>(i)];

  Eigen::VectorXd base;
  if (w.kind == ScoreKind::Attention) {
    if (self_map) {
      require(self_map->rows() == n && self_map->cols() == n, "score_tokens: self-attention map must be N x N");
      detail::check_row_normalized(*self_map, "score_tokens");
      s.s1 = self_map->colwise().sum().transpose().template cast<double>();
      if (counter) counter->selector += n * n;
    }
    if (cross_map) {
      require(cross_map->rows() == n, "score_tokens: cross-attention map must have N rows");
      detail::check_row_normalized(*cross_map, "score_tokens");
      for (Eigen::Index i = 0; i < n; ++i) {
        double h = 0.0;
        for (Eigen::Index j = 0; j < cross_map->cols(); ++j) {
          const double o = static_cast<double>((*cross_map)(i, j));
          if (o > 0.0) h -= o * std::log(o);
        }
        s.s2(i) = w.entropy_sign * h;
      }
      if (counter) counter->selector += n * cross_map->cols();
    }
    base = w.lambda1 * s.s1 + w.lambda2 * s.s2 + w.lambda3 * s.s3;
  } else {
    require(signal != nullptr && signal->size() == n, "score_tokens: this score kind needs a per-token signal");
    s.s1 = *signal;
    base = s.s1 + w.lambda3 * s.s3;
  }
  if (counter) counter->selector += n;

  s.bonus = Eigen::VectorXd::Zero(n);
  const int rows = grid.first, cols = grid.second, k = w.neighborhood;
  for (int r0 = 0; r0 < rows; r0 += k) {
    for (int c0 = 0; c0 < cols; c0 += k) {
      Eigen::Index best = -1;
      for (int r = r0; r < std::min(rows, r0 + k); ++r)
        for (int c = c0; c < std::min(cols, c0 + k); ++c) {
          const Eigen::Index i = static_cast<Eigen::Index>(r) * cols + c;
          if (best < 0 || base(i) > base(best)) best = i;
        }
      s.bonus(best) = w.lambda4;
    }
  }
  s.total = base + s.bonus;
  return s;
}

/// Token indices by descending score, ties by ascending index.
inline std::vector<int> rank_tokens(const Eigen::VectorXd& total) {
  std::vector<int> order(static_cast<std::size_t>(total.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return total(a) > total(b); });
  return order;
}

inline TokenMask select_top_k(const ScoreBreakdown& scores, int k) {
  const auto n = static_cast<int>(scores.total.size());
  require(k >= 0 && k <= n, "select_top_k: K out of range");
  TokenMask mask(static_cast<std::size_t>(n), false);
  const auto order = rank_tokens(scores.total);
  for (int i = 0; i < k; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  return mask;
}

}  // namespace sparse_sched
