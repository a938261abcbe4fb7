// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "sparse_sched/model.hpp"

namespace sparse_sched {

/// Minimal reverse-mode tape over dense matrices. Model weights are constants;
/// gradients flow only to values that depend on recorded gate parameters.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(const Mat& grad, Tape& tape)>;

  struct Var {
    int id = -1;
  };

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Record a node whose gradient is needed if any input needs one (or `force`).
  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward, bool force = false) {
    bool needs = force;
    for (Var v : inputs) needs = needs || nodes_[static_cast<std::size_t>(v.id)].needs_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  void accumulate(Var v, const Mat& g) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

  /// Propagate `seed` = dL/d(root) back through every recorded node.
  void backward(Var root, const Mat& seed) {
    accumulate(root, seed);
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0 || !n.backward) continue;
      const Mat g = std::move(n.grad);
      n.grad = Mat();
      n.backward(g, *this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Mat value, bool needs, Backward backward) {
    nodes_.push_back({std::move(value), Mat(), needs, std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;  // stable references across push_back
};

namespace ad {

template <typename Scalar>
using Var = typename Tape<Scalar>::Var;

/// d(input) of a parameter-free-shift layer norm y = gain * xhat.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& dy) {
  Matrix<Scalar> dx(x.rows(), x.cols());
  const Scalar d = static_cast<Scalar>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().sum() / d;
    const Scalar inv_std = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kernels::kNormEps));
    const auto xhat = (centered * inv_std).eval();
    const auto dxhat = (dy.row(i).array() * gain.row(0).array()).eval();
    dx.row(i) = (inv_std / d * (d * dxhat - dxhat.sum() - xhat * (dxhat * xhat).sum())).matrix();
  }
  return dx;
}

template <typename Scalar>
Var<Scalar> add(Tape<Scalar>& tape, Var<Scalar> a, Var<Scalar> b) {
  return tape.record(tape.value(a) + tape.value(b), {a, b}, [a, b](const Matrix<Scalar>& g, Tape<Scalar>& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// ca * a + cb * b
template <typename Scalar>
Var<Scalar> combine(Tape<Scalar>& tape, Var<Scalar> a, Scalar ca, Var<Scalar> b, Scalar cb) {
  return tape.record((ca * tape.value(a) + cb * tape.value(b)).eval(), {a, b},
                     [a, b, ca, cb](const Matrix<Scalar>& g, Tape<Scalar>& t) {
                       t.accumulate(a, (ca * g).eval());
                       t.accumulate(b, (cb * g).eval());
                     });
}

template <typename Scalar>
Var<Scalar> stem(Tape<Scalar>& tape, const ToyDiTModel<Scalar>& model, Var<Scalar> latent, int step,
                 const Condition<Scalar>& condition) {
  const Matrix<Scalar>* embed = &model.embed;
  return tape.record(sparse_sched::stem(model, tape.value(latent), step, condition), {latent},
                     [latent, embed](const Matrix<Scalar>& g, Tape<Scalar>& t) {
                       t.accumulate(latent, (g * embed->transpose()).eval());
                     });
}

template <typename Scalar>
Var<Scalar> head(Tape<Scalar>& tape, const ToyDiTModel<Scalar>& model, Var<Scalar> stream) {
  const ToyDiTModel<Scalar>* m = &model;
  return tape.record(sparse_sched::head(model, tape.value(stream)), {stream},
                     [stream, m](const Matrix<Scalar>& g, Tape<Scalar>& t) {
                       const Matrix<Scalar>& x = t.value(stream);
                       const Matrix<Scalar> da = g * m->out.transpose();
                       t.accumulate(stream, layer_norm_backward(x, m->out_norm, da));
                     });
}

template <typename Scalar>
struct FreshSubLayer {
  Var<Scalar> output;          // N x D, every token computed
  Matrix<Scalar> attention;    // N x keys head-averaged map (empty for MLP)
};

/// Dense (all-token) evaluation of one sub-layer with the same row kernels as
/// `sublayer_forward`, recorded with its backward.
template <typename Scalar>
FreshSubLayer<Scalar> sublayer(Tape<Scalar>& tape, const ToyDiTModel<Scalar>& model, const SubLayerId& id,
                               Var<Scalar> stream, const ContextKV<Scalar>* context) {
  using Mat = Matrix<Scalar>;
  const auto& c = model.config;
  const auto* w = &model.blocks[static_cast<std::size_t>(id.block)];
  const Mat& h = tape.value(stream);
  FreshSubLayer<Scalar> r;
  const int heads = c.num_heads;
  const Eigen::Index dh = c.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  switch (id.kind) {
    case SubLayerKind::SelfAttn: {
      Mat a = kernels::layer_norm(h, w->sa_norm);
      Mat keys = kernels::row_product(a, w->sa_k);
      Mat values = kernels::row_product(a, w->sa_v);
      Mat q = kernels::row_product(a, w->sa_q);
      auto att = kernels::attend(q, keys, values, heads);
      Mat out = kernels::row_product(att.context, w->sa_o);
      r.attention = att.map;
      r.output = tape.record(std::move(out), {stream},
                             [stream, w, q = std::move(q), keys = std::move(keys), values = std::move(values),
                              probs = std::move(att.probs), heads, dh, scale](const Mat& g, Tape<Scalar>& t) {
                               const Mat dctx = g * w->sa_o.transpose();
                               Mat dq(q.rows(), q.cols()), dk(keys.rows(), keys.cols()), dv(values.rows(), values.cols());
                               for (int hd = 0; hd < heads; ++hd) {
                                 const auto& p = probs[static_cast<std::size_t>(hd)];
                                 const Mat dc = dctx.middleCols(hd * dh, dh);
                                 const Mat dp = dc * values.middleCols(hd * dh, dh).transpose();
                                 dv.middleCols(hd * dh, dh) = p.transpose() * dc;
                                 Mat ds = (p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array()).matrix();
                                 ds *= scale;
                                 dq.middleCols(hd * dh, dh) = ds * keys.middleCols(hd * dh, dh);
                                 dk.middleCols(hd * dh, dh) = ds.transpose() * q.middleCols(hd * dh, dh);
                               }
                               const Mat da = dq * w->sa_q.transpose() + dk * w->sa_k.transpose() + dv * w->sa_v.transpose();
                               t.accumulate(stream, layer_norm_backward(t.value(stream), w->sa_norm, da));
                             });
      break;
    }
    case SubLayerKind::CrossAttn: {
      require(context != nullptr, "ad::sublayer: cross-attention needs context");
      const auto b = static_cast<std::size_t>(id.block);
      const Mat* kc = &context->keys[b];
      const Mat* vc = &context->values[b];
      Mat a = kernels::layer_norm(h, w->ca_norm);
      Mat q = kernels::row_product(a, w->ca_q);
      auto att = kernels::attend(q, *kc, *vc, heads);
      Mat out = kernels::row_product(att.context, w->ca_o);
      r.attention = att.map;
      r.output = tape.record(std::move(out), {stream},
                             [stream, w, kc, vc, probs = std::move(att.probs), heads, dh, scale](const Mat& g, Tape<Scalar>& t) {
                               const Mat dctx = g * w->ca_o.transpose();
                               Mat dq(dctx.rows(), dctx.cols());
                               for (int hd = 0; hd < heads; ++hd) {
                                 const auto& p = probs[static_cast<std::size_t>(hd)];
                                 const Mat dc = dctx.middleCols(hd * dh, dh);
                                 const Mat dp = dc * vc->middleCols(hd * dh, dh).transpose();
                                 Mat ds = (p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array()).matrix();
                                 ds *= scale;
                                 dq.middleCols(hd * dh, dh) = ds * kc->middleCols(hd * dh, dh);
                               }
                               const Mat da = dq * w->ca_q.transpose();
                               t.accumulate(stream, layer_norm_backward(t.value(stream), w->ca_norm, da));
                             });
      break;
    }
    case SubLayerKind::MLP: {
      Mat a = kernels::layer_norm(h, w->mlp_norm);
      Mat z;
      Mat out = kernels::mlp(a, *w, &z);
      r.output = tape.record(std::move(out), {stream}, [stream, w, z = std::move(z)](const Mat& g, Tape<Scalar>& t) {
        const Mat dgelu = g * w->mlp_w2.transpose();
        const Mat dz = (dgelu.array() * z.unaryExpr([](Scalar v) { return kernels::gelu_grad(v); }).array()).matrix();
        const Mat da = dz * w->mlp_w1.transpose();
        t.accumulate(stream, layer_norm_backward(t.value(stream), w->mlp_norm, da));
      });
      break;
    }
  }
  return r;
}

}  // namespace ad

}  // namespace sparse_sched
