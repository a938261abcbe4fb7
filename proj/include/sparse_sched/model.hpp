// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "sparse_sched/config.hpp"
#include "sparse_sched/types.hpp"

namespace sparse_sched {

template <typename Scalar>
struct BlockWeights {
  Matrix<Scalar> sa_norm, sa_q, sa_k, sa_v, sa_o;
  Matrix<Scalar> ca_norm, ca_q, ca_k, ca_v, ca_o;  // empty without cross-attention
  Matrix<Scalar> mlp_norm, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

/// Weights and topology of the toy diffusion transformer. Every array is a dense
/// row-major matrix whose shape follows from the config alone.
template <typename Scalar>
class ToyDiTModel {
 public:
  ToyDiTConfig config;
  Matrix<Scalar> embed;        // D x D, latent -> stream
  Matrix<Scalar> pos;          // N x D
  Matrix<Scalar> time_table;   // T x D
  Matrix<Scalar> class_table;  // C x D, only without cross-attention
  Matrix<Scalar> out_norm;     // 1 x D
  Matrix<Scalar> out;          // D x D, stream -> noise prediction
  std::vector<BlockWeights<Scalar>> blocks;

  /// Visit every named array in a fixed order.
  template <typename F>
  void for_each_array(F&& f) {
    visit_arrays(*this, f);
  }
  template <typename F>
  void for_each_array(F&& f) const {
    visit_arrays(*this, f);
  }

  template <typename Other>
  ToyDiTModel<Other> cast() const {
    ToyDiTModel<Other> result;
    result.config = config;
    result.blocks.resize(blocks.size());
    std::vector<const Matrix<Scalar>*> src;
    for_each_array([&](const std::string&, const Matrix<Scalar>& m) { src.push_back(&m); });
    std::size_t i = 0;
    result.for_each_array([&](const std::string&, Matrix<Other>& m) { m = src[i++]->template cast<Other>(); });
    return result;
  }

  /// FNV-1a over the raw bytes of every array.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for_each_array([&](const std::string& name, const Matrix<Scalar>& m) {
      h = fnv1a64(name.data(), name.size(), h);
      h = fnv1a64(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()), h);
    });
    return h;
  }

 private:
  template <typename Self, typename F>
  static void visit_arrays(Self& self, F& f) {
    f(std::string("embed"), self.embed);
    f(std::string("pos"), self.pos);
    f(std::string("time_table"), self.time_table);
    if (!self.config.has_cross_attention()) f(std::string("class_table"), self.class_table);
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      auto& w = self.blocks[b];
      const std::string p = "block" + std::to_string(b) + ".";
      f(p + "sa.norm", w.sa_norm);
      f(p + "sa.q", w.sa_q);
      f(p + "sa.k", w.sa_k);
      f(p + "sa.v", w.sa_v);
      f(p + "sa.o", w.sa_o);
      if (self.config.has_cross_attention()) {
        f(p + "ca.norm", w.ca_norm);
        f(p + "ca.q", w.ca_q);
        f(p + "ca.k", w.ca_k);
        f(p + "ca.v", w.ca_v);
        f(p + "ca.o", w.ca_o);
      }
      f(p + "mlp.norm", w.mlp_norm);
      f(p + "mlp.w1", w.mlp_w1);
      f(p + "mlp.b1", w.mlp_b1);
      f(p + "mlp.w2", w.mlp_w2);
      f(p + "mlp.b2", w.mlp_b2);
    }
    f(std::string("out_norm"), self.out_norm);
    f(std::string("out"), self.out);
  }
};

/// Deterministic weights from config.seed, scaled by 1/sqrt(fan_in).
template <typename Scalar = float>
ToyDiTModel<Scalar> init_model(const ToyDiTConfig& config) {
  config.validate();
  const int n = config.token_count, d = config.model_dim, h = config.mlp_hidden;
  Rng rng(split_seed(config.seed, "model"));
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_h = 1.0 / std::sqrt(static_cast<double>(h));

  ToyDiTModel<Scalar> m;
  m.config = config;
  m.embed = random_normal<Scalar>(d, d, inv_d, rng);
  m.pos = random_normal<Scalar>(n, d, 0.5, rng);
  m.time_table = random_normal<Scalar>(config.num_steps, d, 0.5, rng);
  if (!config.has_cross_attention()) m.class_table = random_normal<Scalar>(config.num_classes, d, 0.5, rng);
  m.blocks.resize(static_cast<std::size_t>(config.num_blocks));
  for (auto& b : m.blocks) {
    b.sa_norm = Matrix<Scalar>::Ones(1, d);
    b.sa_q = random_normal<Scalar>(d, d, inv_d, rng);
    b.sa_k = random_normal<Scalar>(d, d, inv_d, rng);
    b.sa_v = random_normal<Scalar>(d, d, inv_d, rng);
    b.sa_o = random_normal<Scalar>(d, d, inv_d, rng);
    if (config.has_cross_attention()) {
      b.ca_norm = Matrix<Scalar>::Ones(1, d);
      b.ca_q = random_normal<Scalar>(d, d, inv_d, rng);
      b.ca_k = random_normal<Scalar>(d, d, inv_d, rng);
      b.ca_v = random_normal<Scalar>(d, d, inv_d, rng);
      b.ca_o = random_normal<Scalar>(d, d, inv_d, rng);
    }
    b.mlp_norm = Matrix<Scalar>::Ones(1, d);
    b.mlp_w1 = random_normal<Scalar>(d, h, inv_d, rng);
    b.mlp_b1 = Matrix<Scalar>::Zero(1, h);
    b.mlp_w2 = random_normal<Scalar>(h, d, inv_h, rng);
    b.mlp_b2 = Matrix<Scalar>::Zero(1, d);
  }
  m.out_norm = Matrix<Scalar>::Ones(1, d);
  m.out = random_normal<Scalar>(d, d, inv_d, rng);
  return m;
}

/// Conditioning input: M context tokens, or a class index when M == 0.
template <typename Scalar>
struct Condition {
  Matrix<Scalar> context;
  int class_index = 0;

  template <typename Other>
  Condition<Other> cast() const {
    return {context.template cast<Other>(), class_index};
  }
};

template <typename Scalar = float>
Condition<Scalar> make_condition(const ToyDiTConfig& config, std::uint64_t seed) {
  Rng rng(split_seed(seed, "condition"));
  Condition<Scalar> c;
  if (config.has_cross_attention()) {
    c.context = random_normal<Scalar>(config.context_tokens, config.model_dim, 1.0, rng);
  } else {
    c.class_index = static_cast<int>(rng() % static_cast<std::uint64_t>(config.num_classes));
  }
  return c;
}

template <typename Scalar = float>
Matrix<Scalar> make_noise(const ToyDiTConfig& config, std::uint64_t seed) {
  Rng rng(split_seed(seed, "noise"));
  return random_normal<Scalar>(config.token_count, config.model_dim, 1.0, rng);
}

/// Cross-attention keys/values over the static context, one pair per block.
template <typename Scalar>
struct ContextKV {
  std::vector<Matrix<Scalar>> keys, values;
};

// ---------------------------------------------------------------------------
// Row-independent kernels. Every product is evaluated one token row at a time so
// a row's result does not depend on which other rows are computed alongside it.

namespace kernels {

inline constexpr double kNormEps = 1e-5;

template <typename Scalar>
void row_product(const Matrix<Scalar>& x, const Matrix<Scalar>& w, Matrix<Scalar>& out) {
  out.resize(x.rows(), w.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i).noalias() = x.row(i) * w;
}

template <typename Scalar>
Matrix<Scalar> row_product(const Matrix<Scalar>& x, const Matrix<Scalar>& w) {
  Matrix<Scalar> out;
  row_product(x, w, out);
  return out;
}

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain) {
  Matrix<Scalar> y(x.rows(), x.cols());
  const Scalar inv_cols = Scalar(1) / static_cast<Scalar>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() * inv_cols;
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().sum() * inv_cols;
    const Scalar inv_std = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kNormEps));
    y.row(i) = (centered * inv_std * gain.row(0).array()).matrix();
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> gather_rows(const Matrix<Scalar>& x, const std::vector<int>& rows) {
  Matrix<Scalar> g(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) g.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
  return g;
}

template <typename Scalar>
Scalar gelu(Scalar z) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return Scalar(0.5) * z * (Scalar(1) + std::tanh(static_cast<Scalar>(c) * (z + Scalar(0.044715) * z * z * z)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar z) {
  constexpr double c = 0.7978845608028654;
  const Scalar inner = static_cast<Scalar>(c) * (z + Scalar(0.044715) * z * z * z);
  const Scalar t = std::tanh(inner);
  const Scalar dinner = static_cast<Scalar>(c) * (Scalar(1) + Scalar(3 * 0.044715) * z * z);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * z * (Scalar(1) - t * t) * dinner;
}

/// Multi-head attention of query rows over a key/value set.
/// Outputs the concatenated head contexts, the per-head probabilities and the
/// head-averaged (row-normalized) attention map.
template <typename Scalar>
struct AttentionResult {
  Matrix<Scalar> context;             // rows x D
  std::vector<Matrix<Scalar>> probs;  // per head, rows x keys
  Matrix<Scalar> map;                 // rows x keys
};

template <typename Scalar>
AttentionResult<Scalar> attend(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                               int num_heads) {
  const Eigen::Index rows = q.rows(), keys = k.rows(), d = q.cols();
  const Eigen::Index dh = d / num_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  AttentionResult<Scalar> r;
  r.context.resize(rows, d);
  r.map = Matrix<Scalar>::Zero(rows, keys);
  r.probs.assign(static_cast<std::size_t>(num_heads), Matrix<Scalar>(rows, keys));
  for (int h = 0; h < num_heads; ++h) {
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    auto& p = r.probs[static_cast<std::size_t>(h)];
    for (Eigen::Index i = 0; i < rows; ++i) {
      RowVector<Scalar> s = (q.row(i).segment(h * dh, dh) * kh.transpose()) * scale;
      const Scalar mx = s.maxCoeff();
      s = (s.array() - mx).exp().matrix();
      s /= s.sum();
      p.row(i) = s;
      r.context.row(i).segment(h * dh, dh).noalias() = s * vh;
    }
    r.map += p;
  }
  r.map /= static_cast<Scalar>(num_heads);
  return r;
}

template <typename Scalar>
Matrix<Scalar> mlp(const Matrix<Scalar>& a, const BlockWeights<Scalar>& w, Matrix<Scalar>* pre_activation = nullptr) {
  Matrix<Scalar> z = row_product(a, w.mlp_w1);
  z.rowwise() += w.mlp_b1.row(0);
  Matrix<Scalar> g = z.unaryExpr([](Scalar x) { return gelu(x); });
  Matrix<Scalar> out = row_product(g, w.mlp_w2);
  out.rowwise() += w.mlp_b2.row(0);
  if (pre_activation) *pre_activation = std::move(z);
  return out;
}

}  // namespace kernels

/// Per-block cost of projecting the static context, charged once per sample.
inline std::int64_t context_kv_macs_per_block(const ToyDiTConfig& c) {
  return 2LL * c.context_tokens * c.model_dim * c.model_dim;
}

template <typename Scalar>
ContextKV<Scalar> precompute_context(const ToyDiTModel<Scalar>& model, const Condition<Scalar>& condition,
                                     MacCounter* counter = nullptr) {
  ContextKV<Scalar> kv;
  if (!model.config.has_cross_attention()) return kv;
  require(condition.context.rows() == model.config.context_tokens && condition.context.cols() == model.config.model_dim,
          "precompute_context: context must be M x D");
  for (const auto& b : model.blocks) {
    kv.keys.push_back(kernels::row_product(condition.context, b.ca_k));
    kv.values.push_back(kernels::row_product(condition.context, b.ca_v));
  }
  if (counter) counter->model += context_kv_macs_per_block(model.config) * model.config.num_blocks;
  return kv;
}

/// Stream entering block 0 at a step: embedded latent plus position, time and class terms.
template <typename Scalar>
Matrix<Scalar> stem(const ToyDiTModel<Scalar>& model, const Matrix<Scalar>& latent, int step,
                    const Condition<Scalar>& condition) {
  Matrix<Scalar> h = kernels::row_product(latent, model.embed);
  h += model.pos;
  h.rowwise() += model.time_table.row(step);
  if (!model.config.has_cross_attention()) h.rowwise() += model.class_table.row(condition.class_index);
  return h;
}

template <typename Scalar>
Matrix<Scalar> head(const ToyDiTModel<Scalar>& model, const Matrix<Scalar>& stream) {
  return kernels::row_product(kernels::layer_norm(stream, model.out_norm), model.out);
}

inline std::int64_t stem_head_macs(const ToyDiTConfig& c) {
  return 2LL * c.token_count * c.model_dim * c.model_dim;
}

template <typename Scalar>
struct SubLayerResult {
  Matrix<Scalar> output;     // N x D; rows outside the mask are zero
  std::vector<int> rows;     // computed token indices, ascending
  Matrix<Scalar> attention;  // rows x keys (empty for MLP)
};

inline std::vector<int> mask_rows(const TokenMask& mask) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(static_cast<int>(i));
  return rows;
}

/// Evaluate one sub-layer (pre-residual output) on the masked token rows.
/// Self-attention keys/values always come from the full stream; nothing at all is
/// computed (and no MACs are charged) when the mask is empty.
template <typename Scalar>
SubLayerResult<Scalar> sublayer_forward(const ToyDiTModel<Scalar>& model, const SubLayerId& id,
                                        const std::type_identity_t<Matrix<Scalar>>& stream,
                                        const std::type_identity_t<ContextKV<Scalar>>* context, const TokenMask& mask,
                                        MacCounter* counter = nullptr) {
  const auto& c = model.config;
  require(stream.rows() == c.token_count && stream.cols() == c.model_dim, "sublayer_forward: stream must be N x D");
  require(static_cast<int>(mask.size()) == c.token_count, "sublayer_forward: mask length must be N");
  require((id.kind == SubLayerKind::CrossAttn) == (context != nullptr && !context->keys.empty()),
          "sublayer_forward: context required exactly for cross-attention");
  const auto& w = model.blocks[static_cast<std::size_t>(id.block)];
  SubLayerResult<Scalar> r;
  r.rows = mask_rows(mask);
  r.output = Matrix<Scalar>::Zero(c.token_count, c.model_dim);
  const auto k_rows = static_cast<std::int64_t>(r.rows.size());
  if (k_rows == 0) return r;

  const std::int64_t n = c.token_count, d = c.model_dim;
  Matrix<Scalar> out;
  switch (id.kind) {
    case SubLayerKind::SelfAttn: {
      const Matrix<Scalar> a = kernels::layer_norm(stream, w.sa_norm);
      const Matrix<Scalar> keys = kernels::row_product(a, w.sa_k);
      const Matrix<Scalar> values = kernels::row_product(a, w.sa_v);
      const Matrix<Scalar> q = kernels::row_product(kernels::gather_rows(a, r.rows), w.sa_q);
      auto att = kernels::attend(q, keys, values, c.num_heads);
      out = kernels::row_product(att.context, w.sa_o);
      r.attention = std::move(att.map);
      if (counter) counter->model += 2 * n * d * d + 2 * k_rows * d * d + 2 * k_rows * n * d;
      break;
    }
    case SubLayerKind::CrossAttn: {
      const auto b = static_cast<std::size_t>(id.block);
      const Matrix<Scalar> a = kernels::layer_norm(kernels::gather_rows(stream, r.rows), w.ca_norm);
      const Matrix<Scalar> q = kernels::row_product(a, w.ca_q);
      auto att = kernels::attend(q, context->keys[b], context->values[b], c.num_heads);
      out = kernels::row_product(att.context, w.ca_o);
      r.attention = std::move(att.map);
      if (counter) counter->model += 2 * k_rows * d * d + 2 * k_rows * c.context_tokens * d;
      break;
    }
    case SubLayerKind::MLP: {
      const Matrix<Scalar> a = kernels::layer_norm(kernels::gather_rows(stream, r.rows), w.mlp_norm);
      out = kernels::mlp(a, w);
      if (counter) counter->model += 2 * k_rows * d * c.mlp_hidden;
      break;
    }
  }
  for (std::size_t i = 0; i < r.rows.size(); ++i) r.output.row(r.rows[i]) = out.row(static_cast<Eigen::Index>(i));
  return r;
}

}  // namespace sparse_sched
