// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sparse_sched/model.hpp"

namespace sparse_sched {

/// One named float32 array in a checkpoint.
struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

/// Named-array container: `<prefix>.json` manifest plus `<prefix>.bin` raw
/// little-endian float32 payload.
struct ArrayContainer {
  std::vector<NamedArray> arrays;
  std::map<std::string, std::string> metadata;

  const NamedArray& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_container(const std::string& prefix, const ArrayContainer& container);
ArrayContainer read_container(const std::string& prefix);

template <typename Scalar>
NamedArray to_named_array(const std::string& name, const Matrix<Scalar>& m) {
  NamedArray a{name, {m.rows(), m.cols()}, {}};
  a.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) a.values.push_back(static_cast<float>(m.data()[i]));
  return a;
}

template <typename Scalar>
void from_named_array(const NamedArray& a, Matrix<Scalar>& m) {
  if (a.shape.size() != 2 || a.shape[0] != m.rows() || a.shape[1] != m.cols())
    throw IoError("checkpoint: shape mismatch for array " + a.name);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(a.values[static_cast<std::size_t>(i)]);
}

ArrayContainer config_metadata(const ToyDiTConfig& config);
ToyDiTConfig config_from_metadata(const ArrayContainer& container);

inline ArrayContainer model_to_container(const ToyDiTModel<float>& model) {
  ArrayContainer c = config_metadata(model.config);
  model.for_each_array([&](const std::string& name, const MatrixXf& m) { c.arrays.push_back(to_named_array(name, m)); });
  return c;
}

/// Overwrite `model` (already shaped from its config) with the container's arrays.
inline void model_from_container(const ArrayContainer& c, ToyDiTModel<float>& model) {
  model.for_each_array([&](const std::string& name, MatrixXf& m) {
    if (!c.contains(name)) throw IoError("checkpoint: missing array " + name);
    from_named_array(c.at(name), m);
  });
}

/// Rebuild a model from a container written by model_to_container.
inline ToyDiTModel<float> model_from_container(const ArrayContainer& c) {
  ToyDiTModel<float> model = init_model<float>(config_from_metadata(c));
  model_from_container(c, model);
  return model;
}

}  // namespace sparse_sched
