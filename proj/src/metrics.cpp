// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparse_sched/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace sparse_sched {

std::string trace_to_json(const std::vector<TraceEntry>& trace) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : trace)
    arr.push_back({{"step", e.step}, {"flat_index", e.flat_index}, {"rho", e.rho}, {"selected_indices", e.selected},
                   {"macs", e.macs}});
  return arr.dump() + "\n";
}

ScheduleStats schedule_stats(const ToyDiTConfig& config, const SparsitySchedule& schedule) {
  schedule.validate();
  require(schedule.sublayer_count() == config.sublayer_count(), "schedule_stats: sub-layer count mismatch");
  ScheduleStats st;
  st.heatmap.resize(schedule.schedulable_steps(), schedule.sublayer_count());
  double sum = 0.0;
  for (int t = 0; t < schedule.schedulable_steps(); ++t) {
    for (int l = 0; l < schedule.sublayer_count(); ++l) {
      const int s = schedule.choice(t, l);
      st.heatmap(t, l) = schedule.candidates.fraction(s);
      sum += s;
      if (s == 0) ++st.zero_skip_count;
      auto& hist = st.histogram[to_string(config.kind_at(l))];
      hist.resize(static_cast<std::size_t>(schedule.candidates.size()), 0);
      ++hist[static_cast<std::size_t>(s)];
    }
  }
  // Exact unit ratio rather than a sum of rounded fractions.
  st.mean_retention = schedule.choice.size() > 0
                          ? sum / (static_cast<double>(schedule.choice.size()) * schedule.candidates.units())
                          : 0.0;
  return st;
}

std::string macs_report_csv(const ToyDiTConfig& config, const MacsReport& report, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << "\n";
  out << "step,flat_index,sub_layer,rho,retained,analytic_macs,instrumented_macs,selector_macs\n";
  for (const auto& e : report.entries) {
    out << e.step << ',' << e.flat_index << ',' << config.sublayer_name(e.flat_index) << ',' << e.rho << ','
        << e.retained << ',' << e.analytic << ',' << e.instrumented << ',' << e.selector << "\n";
  }
  return out.str();
}

namespace {

std::string ramp_color(double v) {
  // blue (0) -> yellow (1)
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255.0 * v));
  const int g = static_cast<int>(std::lround(255.0 * v));
  const int b = static_cast<int>(std::lround(255.0 * (1.0 - v)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string heatmap_svg(const SparsitySchedule& schedule, const std::string& config_hash) {
  constexpr int cell = 16, margin = 40;
  const int cols = schedule.sublayer_count(), rows = schedule.schedulable_steps();
  const int width = margin + cols * cell + 8, height = margin + rows * cell + 8;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
      << width << ' ' << height << "\">\n";
  svg << "<!-- config_hash=" << config_hash << " -->\n";
  svg << "<desc>retention fraction per (step, sub-layer); blue = 0, yellow = 1</desc>\n";
  svg << "<text x=\"" << margin << "\" y=\"14\" font-size=\"10\">sub-layer</text>\n";
  svg << "<text x=\"2\" y=\"" << margin - 4 << "\" font-size=\"10\">step</text>\n";
  svg << "<g id=\"cells\">\n";
  for (int t = 0; t < rows; ++t)
    for (int l = 0; l < cols; ++l) {
      const double v = schedule.candidates.fraction(schedule.choice(t, l));
      svg << "<rect x=\"" << margin + l * cell << "\" y=\"" << margin + t * cell << "\" width=\"" << cell << "\" height=\""
          << cell << "\" fill=\"" << ramp_color(v) << "\"><title>step " << t + 1 << ", "
          << schedule.sub_layers[static_cast<std::size_t>(l)] << ": " << v << "</title></rect>\n";
    }
  svg << "</g>\n";
  for (int t = 0; t < rows; ++t)
    svg << "<text x=\"4\" y=\"" << margin + t * cell + 12 << "\" font-size=\"9\">" << t + 1 << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace sparse_sched
