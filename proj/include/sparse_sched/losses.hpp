// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sparse_sched/metrics.hpp"
#include "sparse_sched/types.hpp"

namespace sparse_sched {

/// Seed of the frozen feature stack; fixed so losses compare across runs.
inline constexpr std::uint64_t kFeatureProxySeed = 0x5eed;

enum class LossKind { L2, SSIM, FeatureProxy };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::L2: return "l2";
    case LossKind::SSIM: return "ssim";
    case LossKind::FeatureProxy: return "feature_proxy";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "l2") return LossKind::L2;
  if (s == "ssim") return LossKind::SSIM;
  if (s == "feature_proxy") return LossKind::FeatureProxy;
  throw ConfigError("unknown loss kind: " + s);
}

struct LossValue {
  double value = 0.0;
  Matrix<double> grad;  // d value / d student
};

/// Frozen random 3x3 conv stack over the token grid (channels = model dim), used as a
/// perceptual-style feature distance. Loss is the mean squared feature difference,
/// averaged over the three layers.
class FeatureProxy {
 public:
  static constexpr int kWidth = 16;
  static constexpr int kLayers = 3;

  FeatureProxy(int channels, std::pair<int, int> grid, std::uint64_t seed) : grid_(grid) {
    Rng rng(split_seed(seed, "feature_proxy"));
    int in = channels;
    for (int l = 0; l < kLayers; ++l) {
      weights_.push_back(random_normal<double>(9 * in, kWidth, std::sqrt(2.0 / (9.0 * in)), rng));
      in = kWidth;
    }
  }

  /// Activations of every layer (post-ReLU except the last).
  std::vector<Matrix<double>> features(const Matrix<double>& x) const {
    std::vector<Matrix<double>> out;
    Matrix<double> cur = x;
    for (int l = 0; l < kLayers; ++l) {
      Matrix<double> z = im2col(cur) * weights_[static_cast<std::size_t>(l)];
      if (l + 1 < kLayers) z = z.cwiseMax(0.0);
      out.push_back(z);
      cur = out.back();
    }
    return out;
  }

  LossValue loss(const Matrix<double>& teacher, const Matrix<double>& student) const {
    const auto ft = features(teacher);
    const auto fs = features(student);
    LossValue r;
    Matrix<double> upstream;  // gradient w.r.t. the current layer's output
    for (int l = kLayers - 1; l >= 0; --l) {
      const auto& a = fs[static_cast<std::size_t>(l)];
      const Matrix<double> diff = a - ft[static_cast<std::size_t>(l)];
      const double scale = 1.0 / (static_cast<double>(diff.size()) * kLayers);
      r.value += diff.squaredNorm() * scale;
      Matrix<double> g = 2.0 * scale * diff;
      if (upstream.size() > 0) g += upstream;
      if (l + 1 < kLayers) g = (a.array() > 0.0).select(g, 0.0);
      const Matrix<double>& input = l == 0 ? student : fs[static_cast<std::size_t>(l - 1)];
      upstream = col2im(g * weights_[static_cast<std::size_t>(l)].transpose(), static_cast<int>(input.cols()));
    }
    r.grad = std::move(upstream);
    return r;
  }

 private:
  Matrix<double> im2col(const Matrix<double>& x) const {
    const int rows = grid_.first, cols = grid_.second;
    const auto ch = x.cols();
    Matrix<double> p = Matrix<double>::Zero(x.rows(), 9 * ch);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int k = 0; k < 9; ++k) {
          const int rr = r + k / 3 - 1, cc = c + k % 3 - 1;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
          p.block(r * cols + c, k * ch, 1, ch) = x.row(rr * cols + cc);
        }
    return p;
  }

  Matrix<double> col2im(const Matrix<double>& patches, int channels) const {
    const int rows = grid_.first, cols = grid_.second;
    Matrix<double> x = Matrix<double>::Zero(static_cast<Eigen::Index>(rows) * cols, channels);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int k = 0; k < 9; ++k) {
          const int rr = r + k / 3 - 1, cc = c + k % 3 - 1;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
          x.row(rr * cols + cc) += patches.block(r * cols + c, k * channels, 1, channels);
        }
    return x;
  }

  std::pair<int, int> grid_;
  std::vector<Matrix<double>> weights_;
};

/// Distillation loss between the teacher sample and the student sample.
inline LossValue distill_loss(LossKind kind, const Matrix<double>& teacher, const Matrix<double>& student,
                              std::pair<int, int> grid, const FeatureProxy* proxy = nullptr) {
  require(teacher.rows() == student.rows() && teacher.cols() == student.cols(), "distill_loss: shape mismatch");
  LossValue r;
  switch (kind) {
    case LossKind::L2: {
      const Matrix<double> diff = student - teacher;
      const double n = static_cast<double>(diff.size());
      r.value = diff.squaredNorm() / n;
      r.grad = (2.0 / n) * diff;
      break;
    }
    case LossKind::SSIM: {
      Matrix<double> g;
      r.value = 1.0 - ssim(teacher, student, grid, &g);
      r.grad = -g;
      break;
    }
    case LossKind::FeatureProxy:
      require(proxy != nullptr, "distill_loss: feature proxy not provided");
      r = proxy->loss(teacher, student);
      break;
  }
  return r;
}

}  // namespace sparse_sched
