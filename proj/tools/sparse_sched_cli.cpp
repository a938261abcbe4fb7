// Copyright (C) 2026 The sparse_sched Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include "sparse_sched/checkpoint.hpp"
#include "sparse_sched/metrics.hpp"
#include "sparse_sched/run_config.hpp"
#include "sparse_sched/trainer.hpp"

namespace fs = std::filesystem;
using namespace sparse_sched;

namespace {

constexpr int kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitContract = 3, kExitIo = 4;

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  if (seed) {
    c.model.seed = *seed;
    c.train.seed = *seed;
  }
  c.validate();
  return c;
}

ToyDiTModel<float> load_or_init_model(const RunConfig& cfg) {
  if (fs::exists(cfg.paths.model + ".json")) {
    ToyDiTModel<float> m = model_from_container(read_container(cfg.paths.model));
    if (!(m.config == cfg.model)) throw ContractError("model checkpoint " + cfg.paths.model + " does not match config");
    return m;
  }
  return init_model<float>(cfg.model);
}

// ---------------------------------------------------------------------------
// Cost checkpoint.

ArrayContainer costs_to_container(const RunConfig& cfg, const TrainState& state, int stage) {
  ArrayContainer c = config_metadata(cfg.model);
  c.arrays.push_back(to_named_array("cost_layer", Matrix<double>(state.layer_costs.values)));
  c.arrays.push_back(to_named_array("cost_step", Matrix<double>(state.step_costs.values)));
  c.metadata["candidates.interval"] = exact(cfg.interval);
  c.metadata["budget.cache_ratio"] = exact(cfg.cache_ratio);
  c.metadata["config_hash"] = config_hash(cfg);
  c.metadata["stage"] = std::to_string(stage);
  std::string steps;
  for (int t : state.full_steps) steps += (steps.empty() ? "" : ",") + std::to_string(t);
  c.metadata["full_steps"] = steps;
  return c;
}

struct LoadedCosts {
  ToyDiTConfig model;
  CandidateSet candidates;
  double cache_ratio = 0.0;
  std::string hash;
  int stage = 0;
  CostMatrix layer;
  StepCostMatrix step;
  std::set<int> full_steps;
};

std::string meta(const ArrayContainer& c, const std::string& key) {
  const auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw IoError("cost checkpoint: missing metadata " + key);
  return it->second;
}

LoadedCosts load_costs(const std::string& prefix) {
  const ArrayContainer c = read_container(prefix);
  LoadedCosts r{config_from_metadata(c), CandidateSet(std::stod(meta(c, "candidates.interval"))),
                std::stod(meta(c, "budget.cache_ratio")), meta(c, "config_hash"), std::stoi(meta(c, "stage")), {}, {}, {}};
  r.layer = CostMatrix(r.model.schedulable_steps(), r.model.sublayer_count(), r.candidates.size());
  Matrix<double> layer(r.layer.values.rows(), r.layer.values.cols());
  from_named_array(c.at("cost_layer"), layer);
  r.layer.values = layer;
  r.step = StepCostMatrix(r.model.schedulable_steps());
  Matrix<double> step(r.step.values.rows(), 2);
  from_named_array(c.at("cost_step"), step);
  r.step.values = step;
  std::stringstream steps(meta(c, "full_steps"));
  for (std::string item; std::getline(steps, item, ',');) r.full_steps.insert(std::stoi(item));
  return r;
}

SolveOptions names_for(const ToyDiTConfig& c) {
  SolveOptions o;
  for (int l = 0; l < c.sublayer_count(); ++l) o.sub_layer_names.push_back(c.sublayer_name(l));
  return o;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string stage = "all";
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
  const RunConfig cfg = load_config(args.config, args.seed);
  const std::string hash = config_hash(cfg);
  // Training owns the model checkpoint: the weights always follow the config seed.
  const ToyDiTModel<float> model = init_model<float>(cfg.model);
  const ToyDiTModel<double> model_d = model.cast<double>();

  TrainContext ctx(model_d, cfg.candidates(), cfg.cache_ratio, cfg.selector, cfg.train);
  const std::string log_path = join_path(cfg.paths.report_dir, "train_log.csv");
  std::string log = "# config_hash=" + hash + "\n" + log_csv_header();
  ctx.on_log = [&](const LogRow& row) { log += log_csv_row(row); };

  TrainState state = init_train_state(ctx);
  const bool run1 = args.stage == "1" || args.stage == "all";
  const bool run2 = args.stage == "2" || args.stage == "all";
  if (run1) {
    train_stage1(ctx, state);
    std::cerr << "stage 1: full steps {";
    for (int t : state.full_steps) std::cerr << ' ' << t;
    std::cerr << " }\n";
  } else {
    if (!fs::exists(cfg.paths.checkpoint + ".json"))
      throw StateError("stage 2 needs a stage-1 cost checkpoint at " + cfg.paths.checkpoint + " (run --stage 1 first)");
    LoadedCosts prev = load_costs(cfg.paths.checkpoint);
    if (prev.hash != hash) throw StateError("cost checkpoint was written for a different config (hash " + prev.hash + ")");
    if (prev.stage != 1) throw StateError("cost checkpoint is not a stage-1 checkpoint");
    state.layer_costs.values = prev.layer.values;
    state.step_costs.values = prev.step.values;
    state.full_steps = prev.full_steps;
  }
  if (run2) train_stage2(ctx, state);

  SparsitySchedule schedule = state.schedule;
  schedule.config_hash = hash;
  BudgetAudit::record(schedule, ctx.budget.total_units);

  ArrayContainer model_c = model_to_container(model);
  model_c.metadata["config_hash"] = hash;
  ensure_parent(cfg.paths.model);
  write_container(cfg.paths.model, model_c);
  ensure_parent(cfg.paths.checkpoint);
  write_container(cfg.paths.checkpoint, costs_to_container(cfg, state, run2 ? 2 : 1));
  ensure_parent(cfg.paths.schedule);
  write_schedule(cfg.paths.schedule, schedule);
  write_text(log_path, log);

  std::cout << "schedule: " << cfg.paths.schedule << "\ncosts: " << cfg.paths.checkpoint << "\nlog: " << log_path
            << "\nbudget_units: " << schedule.achieved_units() << " / " << ctx.budget.total_units
            << "\ntotal_cost: " << fmt(schedule.total_cost) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
  std::string costs;
  std::optional<double> ratio;
  std::string out;
  bool at_most = false;
};

int cmd_solve(const SolveArgs& args) {
  const LoadedCosts costs = load_costs(args.costs);
  const double ratio = args.ratio.value_or(costs.cache_ratio);
  const Budget budget = Budget::from_ratio(ratio, costs.layer.slots(), costs.candidates.units(), args.at_most);
  SparsitySchedule s = solve(costs.layer, budget, names_for(costs.model));
  s.candidates = costs.candidates;
  s.config_hash = costs.hash;
  const ScheduleStats stats = schedule_stats(costs.model, s);

  std::ostream& summary = args.out.empty() ? std::cerr : std::cout;
  summary << "budget_units: " << s.achieved_units() << " / " << budget.total_units << "\ntotal_cost: " << fmt(s.total_cost)
          << "\nzero_skip_count: " << stats.zero_skip_count << "\nmean_retention: " << fmt(stats.mean_retention) << "\n";
  if (args.out.empty()) {
    std::cout << schedule_to_json(s);
  } else {
    ensure_parent(args.out);
    write_schedule(args.out, s);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string config;
  std::string schedule;
  std::string baseline;
  int samples = 4;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
};

SparsitySchedule baseline_schedule(const RunConfig& cfg, const std::string& name) {
  const CandidateSet cands = cfg.candidates();
  if (name == "full") return SparsitySchedule::filled(cfg.model, cands, cands.units());
  if (name == "uniform") return SparsitySchedule::uniform(cfg.model, cands, cfg.budget());
  if (name == "skip-steps") {
    // Every other step fully recomputed, the rest served from cache.
    SparsitySchedule s = SparsitySchedule::filled(cfg.model, cands, 0);
    for (int r = 0; r < s.schedulable_steps(); ++r)
      if ((r + 1) % 2 == 0) s.choice.row(r).setConstant(cands.units());
    s.budget_units = s.achieved_units();
    return s;
  }
  throw ConfigError("unknown baseline: " + name);
}

struct BenchRow {
  double psnr = 0.0;
  double ssim = 0.0;
  MacsReport macs;
};

int cmd_bench(const BenchArgs& args) {
  if (args.schedule.empty() == args.baseline.empty()) throw ConfigError("bench: give exactly one of --schedule or --baseline");
  if (args.samples < 1 || args.jobs < 1) throw ConfigError("bench: --samples and --jobs must be >= 1");
  const RunConfig cfg = load_config(args.config, args.seed);
  const std::string hash = config_hash(cfg);
  const ToyDiTModel<float> model = load_or_init_model(cfg);
  const SparsitySchedule schedule = args.schedule.empty() ? baseline_schedule(cfg, args.baseline) : read_schedule(args.schedule);
  if (schedule.num_steps != cfg.model.num_steps || schedule.sublayer_count() != cfg.model.sublayer_count())
    throw ContractError("bench: schedule shape (T = " + std::to_string(schedule.num_steps) +
                        ") does not match the model (T = " + std::to_string(cfg.model.num_steps) + ")");
  const std::string label = args.schedule.empty() ? args.baseline : fs::path(args.schedule).stem().string();

  std::vector<BenchRow> rows(static_cast<std::size_t>(args.samples));
  auto work = [&](int begin) {
    for (int i = begin; i < args.samples; i += args.jobs) {
      const std::uint64_t seed = split_seed(cfg.train.seed, "bench" + std::to_string(i));
      const auto cond = make_condition<float>(cfg.model, seed);
      const auto noise = make_noise<float>(cfg.model, seed);
      const auto teacher = sample_dense(model, cond, noise);
      CacheExecutor<float> exec(cfg.model, schedule, cfg.selector);
      const auto run = exec.run(model, cond, noise);
      auto& row = rows[static_cast<std::size_t>(i)];
      row.psnr = psnr(teacher, run.x0);
      row.ssim = ssim(teacher, run.x0, cfg.model.grid_shape());
      row.macs = macs_report(cfg.model, run);
      if (!row.macs.ledger_consistent()) throw ContractError("bench: instrumented MACs disagree with the analytic model");
    }
  };
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(args.jobs));
  for (int j = 0; j < args.jobs; ++j)
    pool.emplace_back([&, j] {
      try {
        work(j);
      } catch (...) {
        errors[static_cast<std::size_t>(j)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::ostringstream csv;
  csv << "# config_hash=" << hash << " schedule=" << label << "\n";
  csv << "sample,psnr,ssim,macs,baseline_macs,selector_macs,speedup\n";
  std::vector<double> ssims;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv << i << ',' << fmt(r.psnr) << ',' << fmt(r.ssim) << ',' << r.macs.analytic_total << ',' << r.macs.baseline_total
        << ',' << r.macs.selector_total << ',' << fmt(r.macs.speedup) << "\n";
    ssims.push_back(r.ssim);
  }
  std::sort(ssims.begin(), ssims.end());
  const double median = ssims.size() % 2 ? ssims[ssims.size() / 2]
                                         : 0.5 * (ssims[ssims.size() / 2 - 1] + ssims[ssims.size() / 2]);
  const std::string csv_path = join_path(cfg.paths.report_dir, "bench_" + label + ".csv");
  const std::string svg_path = join_path(cfg.paths.report_dir, "heatmap_" + label + ".svg");
  const std::string macs_path = join_path(cfg.paths.report_dir, "macs_" + label + ".csv");
  write_text(csv_path, csv.str());
  write_text(svg_path, heatmap_svg(schedule, hash));
  write_text(macs_path, macs_report_csv(cfg.model, rows.front().macs, hash));
  std::cout << "median_ssim: " << fmt(median) << "\nspeedup: " << fmt(rows.front().macs.speedup) << "\nreport: " << csv_path
            << "\nheatmap: " << svg_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string config;
  std::string axis;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_ablate(const AblateArgs& args) {
  const RunConfig base = load_config(args.config, args.seed);
  std::vector<std::pair<std::string, RunConfig>> settings;
  if (args.axis == "interval") {
    for (double v : {0.1, 0.125, 0.25, 0.5, 1.0}) {
      RunConfig c = base;
      c.interval = v;
      settings.emplace_back(fmt(v), c);
    }
  } else if (args.axis == "delta") {
    for (double v : {0.0, 5.0, 10.0, 20.0}) {
      RunConfig c = base;
      c.train.delta = v;
      settings.emplace_back(fmt(v), c);
    }
  } else if (args.axis == "loss") {
    for (LossKind k : {LossKind::L2, LossKind::SSIM, LossKind::FeatureProxy}) {
      RunConfig c = base;
      c.train.loss_kind = k;
      settings.emplace_back(to_string(k), c);
    }
  } else if (args.axis == "score") {
    for (ScoreKind k : {ScoreKind::Attention, ScoreKind::Similarity, ScoreKind::Norm}) {
      RunConfig c = base;
      c.selector.kind = k;
      settings.emplace_back(to_string(k), c);
    }
  } else {
    throw ConfigError("ablate: unknown axis " + args.axis);
  }

  const ToyDiTModel<float> model = load_or_init_model(base);
  const ToyDiTModel<double> model_d = model.cast<double>();
  const SampleSet eval = make_sample_set(model_d, base.train.eval_samples, split_seed(base.train.seed, "eval_set"));
  std::optional<FeatureProxy> proxy;
  if (base.train.loss_kind == LossKind::FeatureProxy)
    proxy.emplace(base.model.model_dim, base.model.grid_shape(), kFeatureProxySeed);

  std::ostringstream csv;
  csv << "# config_hash=" << config_hash(base) << " axis=" << args.axis << " eval_loss=" << to_string(base.train.loss_kind)
      << "\n";
  csv << args.axis << ",eval_loss,ssim,speedup,budget_units\n";
  for (const auto& [name, cfg] : settings) {
    const TrainContext ctx(model_d, cfg.candidates(), cfg.cache_ratio, cfg.selector, cfg.train);
    TrainState state = init_train_state(ctx);
    train_stage1(ctx, state);
    train_stage2(ctx, state);
    const SparsitySchedule& s = state.schedule;
    if (s.achieved_units() != ctx.budget.total_units)
      throw BudgetError("ablate: schedule for " + name + " misses the budget");
    BudgetAudit::record(s, ctx.budget.total_units);
    const double loss = evaluate_schedule(model_d, cfg.selector, s, eval, base.train.loss_kind, proxy ? &*proxy : nullptr);
    const double q = evaluate_ssim(model_d, cfg.selector, s, eval);
    CacheExecutor<double> exec(cfg.model, s, cfg.selector);
    const auto report = macs_report(cfg.model, exec.run(model_d, eval.conditions[0], eval.noises[0]));
    csv << name << ',' << fmt(loss) << ',' << fmt(q) << ',' << fmt(report.speedup) << ',' << s.achieved_units() << "\n";
    std::cerr << args.axis << "=" << name << " loss=" << fmt(loss) << " ssim=" << fmt(q) << "\n";
  }
  const std::string out = args.out.empty() ? join_path(base.paths.report_dir, "ablate_" + args.axis + ".csv") : args.out;
  write_text(out, csv.str());
  std::cout << "sweep: " << out << "\n";
  return kExitOk;
}

int cmd_config(const std::string& out) {
  const std::string text = run_config_to_json(RunConfig{});
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return kExitOk;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BudgetError& e) {
    std::cerr << "budget error: " << e.what() << "\n";
    return kExitContract;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return kExitContract;
  } catch (const StateError& e) {
    std::cerr << "precondition error: " << e.what() << "\n";
    return kExitContract;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitOther;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned token-cache sparsity schedules for a toy diffusion transformer"};
  app.require_subcommand(1);
  int code = kExitOk;

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Two-stage cost training; writes costs, schedule, log and model");
  train_cmd->add_option("--config", train.config, "Run config JSON")->required();
  train_cmd->add_option("--stage", train.stage, "Stages to run")->check(CLI::IsMember({"1", "2", "all"}));
  train_cmd->add_option("--seed", train.seed, "Override model and train seeds");
  train_cmd->callback([&] { code = guarded([&] { return cmd_train(train); }); });

  SolveArgs solve_args;
  auto* solve_cmd = app.add_subcommand("solve", "Solve a cost checkpoint into a schedule");
  solve_cmd->add_option("--costs", solve_args.costs, "Cost checkpoint prefix")->required();
  solve_cmd->add_option("--ratio", solve_args.ratio, "Cache ratio R (defaults to the training ratio)");
  solve_cmd->add_option("--out", solve_args.out, "Schedule JSON path (stdout when omitted)");
  solve_cmd->add_flag("--at-most", solve_args.at_most, "Allow using fewer units than the budget");
  solve_cmd->callback([&] { code = guarded([&] { return cmd_solve(solve_args); }); });

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Compare a schedule against the full-compute teacher");
  bench_cmd->add_option("--config", bench.config, "Run config JSON");
  auto* sched_opt = bench_cmd->add_option("--schedule", bench.schedule, "Schedule JSON");
  bench_cmd->add_option("--baseline", bench.baseline, "Built-in baseline")
      ->check(CLI::IsMember({"full", "uniform", "skip-steps"}))
      ->excludes(sched_opt);
  bench_cmd->add_option("--samples", bench.samples, "Number of samples");
  bench_cmd->add_option("--jobs", bench.jobs, "Parallel samples");
  bench_cmd->add_option("--seed", bench.seed, "Override model and train seeds");
  bench_cmd->callback([&] { code = guarded([&] { return cmd_bench(bench); }); });

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate one schedule per setting of an axis");
  ablate_cmd->add_option("--config", ablate.config, "Run config JSON");
  ablate_cmd->add_option("--axis", ablate.axis, "Sweep axis")
      ->required()
      ->check(CLI::IsMember({"interval", "delta", "loss", "score"}));
  ablate_cmd->add_option("--out", ablate.out, "Sweep CSV path");
  ablate_cmd->add_option("--seed", ablate.seed, "Override model and train seeds");
  ablate_cmd->callback([&] { code = guarded([&] { return cmd_ablate(ablate); }); });

  std::string config_out;
  auto* config_cmd = app.add_subcommand("config", "Print or write the default run config");
  config_cmd->add_option("--out", config_out, "Destination path");
  config_cmd->callback([&] { code = guarded([&] { return cmd_config(config_out); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  return code;
}
