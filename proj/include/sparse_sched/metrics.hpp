// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "sparse_sched/config.hpp"
#include "sparse_sched/model.hpp"
#include "sparse_sched/schedule.hpp"
#include "sparse_sched/token_cache.hpp"

namespace sparse_sched {

// ---------------------------------------------------------------------------
// MACs accounting. Only matrix products are counted.

/// MACs of one sub-layer evaluation with K freshly computed tokens. K = 0 skips the
/// sub-layer outright, including the self-attention key/value projections.
inline std::int64_t analytic_macs(const ToyDiTConfig& c, SubLayerKind kind, int retained) {
  require(retained >= 0 && retained <= c.token_count, "analytic_macs: K out of range");
  const std::int64_t k = retained, n = c.token_count, d = c.model_dim;
  if (k == 0) return 0;
  switch (kind) {
    case SubLayerKind::SelfAttn: return k * d * d + 2 * n * d * d + 2 * k * n * d + k * d * d;
    case SubLayerKind::CrossAttn: return k * d * d + 2 * k * c.context_tokens * d + k * d * d;
    case SubLayerKind::MLP: return k * (d * c.mlp_hidden + c.mlp_hidden * d);
  }
  return 0;
}

/// Analytic MACs of a traced slot, including the context projections charged at step 0.
inline std::int64_t slot_macs(const ToyDiTConfig& c, int step, int flat_index, int retained) {
  const SubLayerKind kind = c.kind_at(flat_index);
  std::int64_t m = analytic_macs(c, kind, retained);
  if (step == 0 && kind == SubLayerKind::CrossAttn) m += context_kv_macs_per_block(c);
  return m;
}

struct MacsEntry {
  int step = 0;
  int flat_index = 0;
  double rho = 1.0;
  int retained = 0;
  std::int64_t analytic = 0;
  std::int64_t instrumented = 0;
  std::int64_t selector = 0;
};

struct MacsReport {
  std::vector<MacsEntry> entries;
  std::int64_t analytic_total = 0;      // slots + stem/head
  std::int64_t instrumented_total = 0;  // slots + stem/head
  std::int64_t baseline_total = 0;      // all-full schedule
  std::int64_t selector_total = 0;
  std::int64_t fixed_total = 0;         // stem/head, identical for every schedule
  double speedup = 1.0;                 // baseline / (analytic + selector)

  bool ledger_consistent() const {
    for (const auto& e : entries)
      if (e.analytic != e.instrumented) return false;
    return analytic_total == instrumented_total;
  }
};

inline std::int64_t baseline_macs(const ToyDiTConfig& c) {
  std::int64_t total = 0;
  for (int t = 0; t < c.num_steps; ++t)
    for (int l = 0; l < c.sublayer_count(); ++l) total += slot_macs(c, t, l, c.token_count);
  return total + static_cast<std::int64_t>(c.num_steps) * stem_head_macs(c);
}

/// Analytic MACs of a schedule without running it.
inline std::int64_t schedule_macs(const ToyDiTConfig& c, const SparsitySchedule& s) {
  std::int64_t total = static_cast<std::int64_t>(c.num_steps) * stem_head_macs(c);
  for (int t = 0; t < c.num_steps; ++t)
    for (int l = 0; l < c.sublayer_count(); ++l)
      total += slot_macs(c, t, l, s.candidates.retained_tokens(s.candidate_at(t, l), c.token_count));
  return total;
}

inline MacsReport macs_report(const ToyDiTConfig& c, const std::vector<TraceEntry>& trace, std::int64_t instrumented_model_total) {
  MacsReport r;
  r.fixed_total = static_cast<std::int64_t>(c.num_steps) * stem_head_macs(c);
  r.analytic_total = r.fixed_total;
  std::int64_t traced = 0;
  for (const auto& e : trace) {
    MacsEntry m{e.step, e.flat_index, e.rho, static_cast<int>(e.selected.size()), 0, e.macs, e.selector_macs};
    m.analytic = slot_macs(c, e.step, e.flat_index, m.retained);
    r.analytic_total += m.analytic;
    r.selector_total += e.selector_macs;
    traced += e.macs;
    r.entries.push_back(m);
  }
  // Slot-level instrumentation must agree with the executor-wide counter.
  r.instrumented_total = instrumented_model_total;
  if (traced + r.fixed_total != instrumented_model_total) r.instrumented_total = -1;
  r.baseline_total = baseline_macs(c);
  r.speedup = static_cast<double>(r.baseline_total) / static_cast<double>(r.analytic_total + r.selector_total);
  return r;
}

template <typename Scalar>
MacsReport macs_report(const ToyDiTConfig& c, const ScheduledRun<Scalar>& run) {
  return macs_report(c, run.trace, run.totals.model);
}

// ---------------------------------------------------------------------------
// Image-style quality metrics over the token grid (each of the D channels is a
// rows x cols image).

struct Quality {
  double psnr = 0.0;  // +inf for identical inputs
  double ssim = 0.0;
};

template <typename Scalar>
double dynamic_range(const Matrix<Scalar>& reference) {
  const double range = static_cast<double>(reference.maxCoeff() - reference.minCoeff());
  return range > 0.0 ? range : 1.0;
}

template <typename Scalar>
double psnr(const Matrix<Scalar>& reference, const Matrix<Scalar>& candidate) {
  require(reference.rows() == candidate.rows() && reference.cols() == candidate.cols(), "psnr: shape mismatch");
  const double mse = (reference.template cast<double>() - candidate.template cast<double>()).squaredNorm() /
                     static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double range = dynamic_range(reference);
  return 10.0 * std::log10(range * range / mse);
}

inline constexpr int kSsimWindow = 8;

/// Mean SSIM with uniform windows of side min(8, rows, cols), stride 1, constants
/// (0.01 L)^2 and (0.03 L)^2 with L the reference dynamic range. When `grad` is set
/// it receives d(mean SSIM)/d(candidate).
template <typename Scalar>
double ssim(const Matrix<Scalar>& reference, const Matrix<Scalar>& candidate, std::pair<int, int> grid,
            Matrix<Scalar>* grad = nullptr) {
  require(reference.rows() == candidate.rows() && reference.cols() == candidate.cols(), "ssim: shape mismatch");
  const int rows = grid.first, cols = grid.second;
  require(static_cast<Eigen::Index>(rows) * cols == reference.rows(), "ssim: grid must cover the token rows");
  const int w = std::min({kSsimWindow, rows, cols});
  const double range = dynamic_range(reference);
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  const double n = static_cast<double>(w) * w;
  const int windows_r = rows - w + 1, windows_c = cols - w + 1;
  const double count = static_cast<double>(windows_r) * windows_c * static_cast<double>(reference.cols());
  if (grad) *grad = Matrix<Scalar>::Zero(candidate.rows(), candidate.cols());

  double total = 0.0;
  for (Eigen::Index ch = 0; ch < reference.cols(); ++ch) {
    for (int r0 = 0; r0 < windows_r; ++r0) {
      for (int c0 = 0; c0 < windows_c; ++c0) {
        double mx = 0, my = 0;
        for (int r = r0; r < r0 + w; ++r)
          for (int c = c0; c < c0 + w; ++c) {
            mx += static_cast<double>(reference(r * cols + c, ch));
            my += static_cast<double>(candidate(r * cols + c, ch));
          }
        mx /= n;
        my /= n;
        double vx = 0, vy = 0, cxy = 0;
        for (int r = r0; r < r0 + w; ++r)
          for (int c = c0; c < c0 + w; ++c) {
            const double dx = static_cast<double>(reference(r * cols + c, ch)) - mx;
            const double dy = static_cast<double>(candidate(r * cols + c, ch)) - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
          }
        vx /= n;
        vy /= n;
        cxy /= n;
        const double a1 = 2 * mx * my + c1, a2 = 2 * cxy + c2;
        const double b1 = mx * mx + my * my + c1, b2 = vx + vy + c2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad) {
          for (int r = r0; r < r0 + w; ++r)
            for (int c = c0; c < c0 + w; ++c) {
              const int i = r * cols + c;
              const double dx = static_cast<double>(reference(i, ch)) - mx;
              const double dy = static_cast<double>(candidate(i, ch)) - my;
              const double da1 = 2 * mx / n, da2 = 2 * dx / n, db1 = 2 * my / n, db2 = 2 * dy / n;
              const double ds = (da1 * a2 + a1 * da2) / (b1 * b2) - s * (db1 / b1 + db2 / b2);
              (*grad)(i, ch) += static_cast<Scalar>(ds / count);
            }
        }
      }
    }
  }
  return total / count;
}

template <typename Scalar>
Quality quality_metrics(const Matrix<Scalar>& reference, const Matrix<Scalar>& candidate, std::pair<int, int> grid) {
  return {psnr(reference, candidate), ssim(reference, candidate, grid)};
}

// ---------------------------------------------------------------------------
// Schedule statistics.

struct ScheduleStats {
  double mean_retention = 0.0;
  std::map<std::string, std::vector<int>> histogram;  // kind -> count per candidate
  int zero_skip_count = 0;
  Eigen::MatrixXd heatmap;  // T' x L_d retention fractions
};

ScheduleStats schedule_stats(const ToyDiTConfig& config, const SparsitySchedule& schedule);

/// Per-slot MACs CSV (header comment carries the config hash).
std::string macs_report_csv(const ToyDiTConfig& config, const MacsReport& report, const std::string& config_hash);

/// Self-contained SVG heatmap, one cell per (step, sub-layer), retention mapped
/// linearly from blue (0) to yellow (1).
std::string heatmap_svg(const SparsitySchedule& schedule, const std::string& config_hash);

}  // namespace sparse_sched
