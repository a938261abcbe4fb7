// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sparse_sched {

using nlohmann::ordered_json;

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

}  // namespace

const NamedArray& ArrayContainer::at(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw IoError("checkpoint: no array named " + name);
}

bool ArrayContainer::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_container(const std::string& prefix, const ArrayContainer& container) {
  const std::string bin_path = prefix + ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open for writing: " + bin_path);

  ordered_json manifest;
  manifest["format"] = "sparse_sched.arrays";
  manifest["version"] = 1;
  manifest["payload"] = std::filesystem::path(bin_path).filename().string();
  manifest["arrays"] = ordered_json::array();
  std::int64_t offset = 0;
  for (const auto& a : container.arrays) {
    if (element_count(a.shape) != static_cast<std::int64_t>(a.values.size()))
      throw ContractError("checkpoint: shape does not match value count for " + a.name);
    const std::int64_t length = static_cast<std::int64_t>(a.values.size() * sizeof(float));
    manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f32"}, {"offset", offset}, {"length", length}});
    for (float v : a.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      bits = to_little_endian(bits);
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += length;
  }
  manifest["metadata"] = ordered_json::object();
  for (const auto& [k, v] : container.metadata) manifest["metadata"][k] = v;
  if (!bin) throw IoError("write failed: " + bin_path);

  const std::string json_path = prefix + ".json";
  std::ofstream js(json_path, std::ios::binary);
  if (!js) throw IoError("cannot open for writing: " + json_path);
  js << manifest.dump(2) << "\n";
  if (!js) throw IoError("write failed: " + json_path);
}

ArrayContainer read_container(const std::string& prefix) {
  const std::string json_path = prefix + ".json";
  std::ifstream js(json_path, std::ios::binary);
  if (!js) throw IoError("cannot open: " + json_path);
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(js);
  } catch (const ordered_json::exception& e) {
    throw IoError("checkpoint manifest: " + std::string(e.what()));
  }

  ArrayContainer c;
  try {
    const auto payload = std::filesystem::path(json_path).parent_path() / manifest.at("payload").get<std::string>();
    std::ifstream bin(payload, std::ios::binary);
    if (!bin) throw IoError("cannot open: " + payload.string());
    std::stringstream raw;
    raw << bin.rdbuf();
    const std::string bytes = raw.str();

    for (const auto& entry : manifest.at("arrays")) {
      if (entry.at("dtype").get<std::string>() != "f32") throw IoError("checkpoint: only f32 arrays are supported");
      NamedArray a{entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<std::int64_t>>(), {}};
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto length = entry.at("length").get<std::int64_t>();
      if (length != element_count(a.shape) * static_cast<std::int64_t>(sizeof(float)) || offset < 0 ||
          offset + length > static_cast<std::int64_t>(bytes.size()))
        throw IoError("checkpoint: bad extent for array " + a.name);
      a.values.resize(static_cast<std::size_t>(length / 4));
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + offset + static_cast<std::int64_t>(4 * i), sizeof bits);
        bits = to_little_endian(bits);
        std::memcpy(&a.values[i], &bits, sizeof bits);
      }
      c.arrays.push_back(std::move(a));
    }
    if (manifest.contains("metadata"))
      for (const auto& [k, v] : manifest.at("metadata").items()) c.metadata[k] = v.get<std::string>();
  } catch (const ordered_json::exception& e) {
    throw IoError("checkpoint manifest: " + std::string(e.what()));
  }
  return c;
}

namespace {

constexpr const char* kConfigKeys[] = {"num_blocks", "token_count", "model_dim", "mlp_hidden", "context_tokens",
                                       "num_heads", "num_steps", "num_classes"};

int* config_field(ToyDiTConfig& c, const std::string& key) {
  if (key == "num_blocks") return &c.num_blocks;
  if (key == "token_count") return &c.token_count;
  if (key == "model_dim") return &c.model_dim;
  if (key == "mlp_hidden") return &c.mlp_hidden;
  if (key == "context_tokens") return &c.context_tokens;
  if (key == "num_heads") return &c.num_heads;
  if (key == "num_steps") return &c.num_steps;
  return &c.num_classes;
}

}  // namespace

ArrayContainer config_metadata(const ToyDiTConfig& config) {
  ArrayContainer c;
  ToyDiTConfig copy = config;
  for (const char* key : kConfigKeys) c.metadata[std::string("model.") + key] = std::to_string(*config_field(copy, key));
  c.metadata["model.seed"] = std::to_string(config.seed);
  return c;
}

ToyDiTConfig config_from_metadata(const ArrayContainer& container) {
  ToyDiTConfig c;
  try {
    for (const char* key : kConfigKeys) *config_field(c, key) = std::stoi(container.metadata.at(std::string("model.") + key));
    c.seed = std::stoull(container.metadata.at("model.seed"));
  } catch (const std::exception&) {
    throw IoError("checkpoint: model configuration metadata missing or malformed");
  }
  c.validate();
  return c;
}

}  // namespace sparse_sched
