// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/schedule.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sparse_sched {

using nlohmann::json;

SparsitySchedule SparsitySchedule::uniform(const ToyDiTConfig& config, const CandidateSet& candidates,
                                           const Budget& budget) {
  const int slots = config.schedulable_steps() * config.sublayer_count();
  require(budget.schedulable_slots == slots, "uniform schedule: budget slot count mismatch");
  require(budget.units_per_slot == candidates.units(), "uniform schedule: budget unit mismatch");
  SparsitySchedule s = filled(config, candidates, 0);
  const std::int64_t base = budget.total_units / slots;
  const std::int64_t extra = budget.total_units % slots;
  for (int i = 0; i < slots; ++i) {
    // Slots i with floor((i + 1) * extra / slots) > floor(i * extra / slots) take the remainder.
    const bool bump = (static_cast<std::int64_t>(i + 1) * extra) / slots > (static_cast<std::int64_t>(i) * extra) / slots;
    s.choice.data()[i] = static_cast<int>(base + (bump ? 1 : 0));
  }
  s.budget_units = budget.total_units;
  BudgetAudit::record(s, budget.total_units);
  return s;
}

namespace {

std::atomic<std::int64_t> audit_checked{0};
std::atomic<std::int64_t> audit_violations{0};

}  // namespace

void BudgetAudit::record(const SparsitySchedule& schedule, std::int64_t budget_units, bool at_most) {
  const std::int64_t got = schedule.achieved_units();
  ++audit_checked;
  if (at_most ? got > budget_units : got != budget_units) ++audit_violations;
}

std::int64_t BudgetAudit::checked() { return audit_checked.load(); }
std::int64_t BudgetAudit::violations() { return audit_violations.load(); }

namespace {

std::string scalar(const json& v) { return v.dump(); }

}  // namespace

std::string schedule_to_json(const SparsitySchedule& s) {
  s.validate();
  std::ostringstream out;
  out << "{\n";
  out << "  \"version\": 1,\n";
  out << "  \"T\": " << s.num_steps << ",\n";
  out << "  \"sub_layers\": " << json(s.sub_layers).dump() << ",\n";
  out << "  \"fractions\": " << json(s.candidates.fractions()).dump() << ",\n";
  out << "  \"schedule\": [";
  for (Eigen::Index r = 0; r < s.choice.rows(); ++r) {
    std::vector<int> row(s.choice.row(r).data(), s.choice.row(r).data() + s.choice.cols());
    out << (r == 0 ? "\n    " : ",\n    ") << json(row).dump();
  }
  out << (s.choice.rows() > 0 ? "\n  ],\n" : "],\n");
  out << "  \"budget_units\": " << s.budget_units << ",\n";
  out << "  \"total_cost\": " << scalar(json(s.total_cost)) << ",\n";
  out << "  \"config_hash\": " << scalar(json(s.config_hash)) << "\n";
  out << "}\n";
  return out.str();
}

SparsitySchedule schedule_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("schedule: malformed JSON: ") + e.what());
  }
  try {
    if (doc.at("version").get<int>() != 1) throw IoError("schedule: unsupported version");
    const auto fractions = doc.at("fractions").get<std::vector<double>>();
    if (fractions.size() < 2) throw IoError("schedule: need at least two fractions");
    SparsitySchedule s{CandidateSet(fractions[1] - fractions[0]), doc.at("T").get<int>(),
                       doc.at("sub_layers").get<std::vector<std::string>>(), {}, 0, 0.0, {}};
    if (static_cast<int>(fractions.size()) != s.candidates.size()) throw IoError("schedule: fraction grid mismatch");
    const auto rows = doc.at("schedule").get<std::vector<std::vector<int>>>();
    s.choice.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(s.sub_layers.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != s.sub_layers.size()) throw IoError("schedule: ragged schedule row");
      for (std::size_t l = 0; l < rows[r].size(); ++l)
        s.choice(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) = rows[r][l];
    }
    s.budget_units = doc.at("budget_units").get<std::int64_t>();
    s.total_cost = doc.at("total_cost").get<double>();
    if (doc.contains("config_hash")) s.config_hash = doc.at("config_hash").get<std::string>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("schedule: ") + e.what());
  } catch (const ContractError& e) {
    throw IoError(std::string("schedule: ") + e.what());
  }
}

void write_schedule(const std::string& path, const SparsitySchedule& schedule) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << schedule_to_json(schedule);
  if (!f) throw IoError("write failed: " + path);
}

SparsitySchedule read_schedule(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return schedule_from_json(ss.str());
}

}  // namespace sparse_sched
