// Copyright 2026 The Sidetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sidetune/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <vector>

#include "sidetune/config.hpp"
#include "sidetune/error.hpp"
#include "sidetune/gradsuite.hpp"
#include "sidetune/harness.hpp"
#include "sidetune/plot.hpp"

#ifndef SIDETUNE_VERSION
#define SIDETUNE_VERSION "unknown"
#endif

namespace sidetune {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRigidityNote =
    "rigidity = ln(validation loss when trained in sequence / validation loss when trained first "
    "with the same seed and budget)";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Writes through a sibling temporary so readers never see a torn file.
void write_file(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw fs::filesystem_error("cannot open for writing", tmp, std::make_error_code(std::errc::io_error));
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw fs::filesystem_error("write failed", tmp, std::make_error_code(std::errc::io_error));
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw fs::filesystem_error("cannot read", path, std::make_error_code(std::errc::no_such_file_or_directory));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentConfig load_with_overrides(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? parse_experiment(json{{"schema_version", kSchemaVersion}})
                                          : load_experiment(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.seeds = {*o.seed};
  }
  if (o.out) cfg.output_dir = *o.out;
  if (o.jobs) {
    if (*o.jobs == 0) throw ConfigError("--jobs must be positive");
    cfg.jobs = *o.jobs;
  }
  return cfg;
}

fs::path prepare_out_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

json alphas_json(const std::vector<double>& alphas) {
  json a = json::array();
  for (double v : alphas) a.push_back(v);
  return a;
}

// ---------------------------------------------------------------------------
// run

int cmd_run(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = load_with_overrides(o);
  cfg.seeds = {cfg.seed};
  const ExperimentPlan plan(cfg);
  const MethodSpec method = plan.run_method();
  const std::size_t steps = plan.run_steps_per_task();
  const fs::path dir = prepare_out_dir(cfg);

  json manifest;
  manifest["tool"] = "sidetune";
  manifest["version"] = SIDETUNE_VERSION;
  manifest["command"] = "run";
  manifest["config"] = to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["run_seed"] = cfg.seed + method.seed_offset;
  manifest["method"] = method.name;
  manifest["strategy"] = to_string(method.config.kind);
  manifest["steps_per_task"] = steps;
  manifest["rigidity_note"] = kRigidityNote;
  json files = json::object();
  json timings = json::object();
  json progress = json::object();

  auto finish = [&](const std::string& status, const std::string& error) {
    manifest["status"] = status;
    if (!error.empty()) manifest["error"] = error;
    files["manifest"] = "manifest.json";
    manifest["files"] = files;
    timings["total_s"] = seconds_since(t0);
    manifest["timings"] = timings;
    manifest["progress"] = progress;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  };

  try {
    auto t = Clock::now();
    const Experiment experiment = plan.build(cfg.seed);
    timings["build_s"] = seconds_since(t);
    std::unique_ptr<Strategy> strategy = make_strategy(method.config, experiment.base);
    strategy->set_step_observer([&](std::size_t task_id, std::uint64_t step) {
      progress["task"] = task_id;
      progress["step"] = step;
    });
    MethodRun run;
    run.method = method.name;
    run.seed = cfg.seed;
    t = Clock::now();
    err << "run: " << method.name << " on " << experiment.sequence.size() << " tasks, " << steps
        << " steps each, seed " << cfg.seed << "\n";
    run.run = run_sequence(*strategy, experiment.sequence, steps, cfg.seed + method.seed_offset);
    run.run.strategy = method.name;
    run.forgetting = compute_forgetting(run.run.grid);
    timings["train_s"] = seconds_since(t);
    manifest["params"] = {{"trainable", run.run.trainable_params}, {"total", run.run.total_params}};
    manifest["final_alphas"] = alphas_json(run.run.final_alphas);
    manifest["forgetting"] = run.forgetting;

    if (cfg.checkpoints) {
      write_checkpoint(dir / "checkpoint.stnt", strategy->checkpoint());
      files["checkpoint"] = "checkpoint.stnt";
    }
    const std::vector<ResultRow> grid_rows = result_rows(run);
    write_file(dir / "results.csv", format_results_csv(grid_rows));
    files["results"] = "results.csv";

    if (cfg.rigidity) {
      t = Clock::now();
      err << "run: rigidity controls\n";
      const StrategyFactory factory = [&] { return make_strategy(method.config, experiment.base); };
      const auto controls =
          trained_first_controls(factory, experiment.sequence, steps, cfg.seed + method.seed_offset);
      run.rigidity = compute_rigidity(in_sequence_points(run.run), controls);
      manifest["rigidity"] = run.rigidity;
      timings["rigidity_s"] = seconds_since(t);
      write_file(dir / "results.csv", format_results_csv(result_rows(run)));
    }
    finish("complete", "");
    out << "wrote " << (dir / "results.csv").string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    finish("partial", e.what());
    throw;
  }
}

// ---------------------------------------------------------------------------
// compare

int cmd_compare(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_with_overrides(o);
  const ExperimentPlan plan(cfg);
  const std::vector<MethodSpec> methods = plan.compare_methods();
  const fs::path dir = prepare_out_dir(cfg);

  CompareOptions options;
  options.seeds = cfg.seeds;
  options.steps_per_task = cfg.steps_per_task;
  options.rigidity = cfg.rigidity;
  options.jobs = cfg.jobs;
  std::mutex log_mutex;
  options.on_run = [&](const MethodRun& r) {
    std::lock_guard lock(log_mutex);
    err << "compare: finished " << r.method << " seed " << r.seed << "\n";
  };
  err << "compare: " << methods.size() << " methods x " << cfg.seeds.size() << " seeds, " << cfg.jobs
      << " jobs\n";
  const CompareReport report = compare_methods(methods, plan.builder(), options);

  std::vector<ResultRow> rows;
  for (const MethodRun& r : report.runs) {
    std::vector<ResultRow> more = result_rows(r);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  write_file(dir / "results.csv", format_results_csv(rows));

  std::string summary = "method,avg_rank,mean_forgetting,mean_rigidity,trainable_params\n";
  for (std::size_t m = 0; m < report.methods.size(); ++m) {
    summary += report.methods[m] + "," + num(report.avg_rank[m]) + "," + num(report.mean_forgetting[m]) + "," +
               num(report.mean_rigidity[m]) + "," + std::to_string(report.trainable_params[m]) + "\n";
  }
  write_file(dir / "compare.csv", summary);

  json manifest;
  manifest["tool"] = "sidetune";
  manifest["version"] = SIDETUNE_VERSION;
  manifest["command"] = "compare";
  manifest["config"] = to_json(cfg);
  manifest["seeds"] = cfg.seeds;
  manifest["status"] = "complete";
  manifest["rigidity_note"] = kRigidityNote;
  manifest["rank_note"] = "ranks use final-stage metrics over every (seed, task) pair; lower is better; ties share the mean rank";
  json per_method = json::array();
  for (std::size_t m = 0; m < report.methods.size(); ++m) {
    json entry{{"name", report.methods[m]},
               {"avg_rank", report.avg_rank[m]},
               {"mean_forgetting", report.mean_forgetting[m]},
               {"trainable_params", report.trainable_params[m]}};
    if (!std::isnan(report.mean_rigidity[m])) entry["mean_rigidity"] = report.mean_rigidity[m];
    json alphas = json::array();
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      alphas.push_back(alphas_json(report.runs[m * cfg.seeds.size() + s].run.final_alphas));
    }
    entry["final_alphas"] = std::move(alphas);
    per_method.push_back(std::move(entry));
  }
  manifest["methods"] = std::move(per_method);
  manifest["files"] = {{"results", "results.csv"}, {"summary", "compare.csv"}, {"manifest", "manifest.json"}};
  manifest["timings"] = {{"total_s", seconds_since(t0)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  out << std::left << std::setw(20) << "method" << std::right << std::setw(10) << "avg_rank" << std::setw(12)
      << "forgetting" << std::setw(12) << "rigidity" << std::setw(12) << "trainable" << "\n";
  for (std::size_t m = 0; m < report.methods.size(); ++m) {
    out << std::left << std::setw(20) << report.methods[m] << std::right << std::fixed << std::setprecision(3)
        << std::setw(10) << report.avg_rank[m] << std::setw(12) << report.mean_forgetting[m] << std::setw(12)
        << report.mean_rigidity[m] << std::setw(12) << report.trainable_params[m] << "\n";
  }
  out.unsetf(std::ios::floatfield);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plot

int cmd_plot(const std::string& csv, const std::optional<std::string>& out_opt, const std::string& title,
             std::ostream& out) {
  const fs::path input(csv);
  const std::string text = read_file(input);
  const std::vector<ResultRow> rows = parse_results_csv(text);
  fs::path target = out_opt ? fs::path(*out_opt) : input.parent_path() / "results.svg";
  if (target.extension() != ".svg") {
    fs::create_directories(target);
    target /= "results.svg";
  } else if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  write_file(target, render_results_svg(rows, title.empty() ? input.filename().string() : title));
  out << "wrote " << target.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-data

IdxArray to_idx(const Tensor& t, IdxType type) {
  IdxArray a;
  a.type = type;
  a.dims.assign(t.shape().begin(), t.shape().end());
  a.values.assign(t.data().begin(), t.data().end());
  return a;
}

int cmd_gen_data(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const ExperimentPlan plan(cfg);
  const SequenceSpec sequence = plan.build_sequence(cfg.seed);
  const fs::path dir = prepare_out_dir(cfg);
  json index;
  index["family"] = to_string(sequence.family);
  index["seed"] = cfg.seed;
  index["note"] = "inputs are f64 and already standardized; targets are class ids or f64 regression targets";
  json tasks = json::array();
  for (const TaskSpec& task : sequence.tasks) {
    const std::string stem = "task" + std::to_string(task.task_id);
    const IdxType label_type = task.kind == TaskKind::regression ? IdxType::f64
                               : task.outputs <= 256          ? IdxType::u8
                                                              : IdxType::i32;
    json entry{{"task_id", task.task_id},
               {"name", task.name},
               {"kind", to_string(task.kind)},
               {"outputs", task.outputs},
               {"input_shape", task.input_shape}};
    for (const auto& [split, data] : {std::pair{"train", &task.train}, std::pair{"val", &task.val}}) {
      const std::string inputs = stem + "-" + split + "-inputs.idx";
      const std::string targets = stem + "-" + split + "-targets.idx";
      write_idx(dir / inputs, to_idx(data->inputs, IdxType::f64));
      write_idx(dir / targets, to_idx(data->targets, label_type));
      entry[std::string(split) + "_inputs"] = inputs;
      entry[std::string(split) + "_targets"] = targets;
    }
    if (!task.permutation.empty()) entry["permutation"] = task.permutation;
    if (!task.source_classes.empty()) entry["source_classes"] = task.source_classes;
    tasks.push_back(std::move(entry));
  }
  index["tasks"] = std::move(tasks);
  write_file(dir / "sequence.json", index.dump(2) + "\n");
  out << "wrote " << sequence.size() << " tasks to " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// grad-check

int cmd_grad_check(std::uint64_t first_seed, std::size_t seeds, double tolerance, std::ostream& out) {
  const auto t0 = Clock::now();
  const GradSuiteReport report = run_grad_suite(seeds, first_seed, tolerance);
  std::vector<std::string> names = grad_suite_cases();
  for (const std::string& name : names) {
    double worst = 0.0;
    std::size_t checked = 0;
    bool pass = true;
    std::string where;
    for (const GradCaseResult& r : report.results) {
      if (r.name != name) continue;
      checked += r.report.checked;
      pass = pass && r.report.pass;
      if (r.report.max_rel_error >= worst) {
        worst = r.report.max_rel_error;
        where = r.report.worst + " seed " + std::to_string(r.seed);
      }
    }
    char line[256];
    std::snprintf(line, sizeof line, "%-26s %-4s max_rel_err=%.3e elements=%zu worst=%s\n", name.c_str(),
                  pass ? "ok" : "FAIL", worst, checked, where.c_str());
    out << line;
  }
  char line[160];
  std::snprintf(line, sizeof line, "grad-check %s: %zu cases x %zu seeds, max_rel_err=%.3e (tolerance %.1e), %.2fs\n",
                report.pass ? "passed" : "FAILED", names.size(), report.seeds, report.max_rel_error, tolerance,
                seconds_since(t0));
  out << line;
  return report.pass ? kExitOk : kExitNumeric;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "experiment JSON file");
  if (config_required) c->required();
  cmd->add_option("--seed", o.seed, "seed; overrides the config's seed and seeds");
  cmd->add_option("--out", o.out, "output directory; overrides output_dir");
  cmd->add_option("--jobs", o.jobs, "parallel runs; overrides jobs");
}

}  // namespace

int exit_code_for(const std::exception& e) noexcept {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::config:
      case ErrorKind::spec:
      case ErrorKind::scheme:
      case ErrorKind::key:
      case ErrorKind::dimension:
        return kExitConfig;
      case ErrorKind::task:
      case ErrorKind::format:
        return kExitData;
      case ErrorKind::numeric:
        return kExitNumeric;
      case ErrorKind::contract:
        return kExitFailure;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e) != nullptr) return kExitData;
  return kExitFailure;
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Side-tuning continual-learning lab"};
  app.name("sidetune");
  app.set_version_flag("--version", SIDETUNE_VERSION);
  app.require_subcommand(1);

  CommonOptions run_opts, compare_opts, gen_opts;
  auto* run = app.add_subcommand("run", "train one strategy over a task sequence");
  add_common(run, run_opts, true);
  auto* compare = app.add_subcommand("compare", "rank several strategies on a shared sequence");
  add_common(compare, compare_opts, true);
  auto* gen = app.add_subcommand("gen-data", "export a synthetic sequence as IDX files");
  add_common(gen, gen_opts, false);

  std::string plot_csv;
  std::optional<std::string> plot_out;
  std::string plot_title;
  auto* plot = app.add_subcommand("plot", "render a results CSV as SVG");
  plot->add_option("results", plot_csv, "results.csv from run or compare")->required();
  plot->add_option("--out", plot_out, "SVG path, or a directory to hold results.svg");
  plot->add_option("--title", plot_title, "plot title");

  std::uint64_t gc_seed = 0;
  std::size_t gc_seeds = 20;
  double gc_tol = 1e-5;
  auto* gc = app.add_subcommand("grad-check", "compare every backward pass with finite differences");
  gc->add_option("--seed", gc_seed, "first seed");
  gc->add_option("--seeds", gc_seeds, "number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", gc_tol, "maximum relative error")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << SIDETUNE_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "sidetune: " << e.what() << "\nrun 'sidetune --help' for usage\n";
    return kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_opts, out, err);
    if (compare->parsed()) return cmd_compare(compare_opts, out, err);
    if (gen->parsed()) return cmd_gen_data(gen_opts, out);
    if (plot->parsed()) return cmd_plot(plot_csv, plot_out, plot_title, out);
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_seeds, gc_tol, out);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    const auto* lib = dynamic_cast<const Error*>(&e);
    err << "sidetune: " << (lib ? to_string(lib->kind()) : "error") << " error: " << e.what() << "\n";
    return code;
  }
  return kExitFailure;
}

}  // namespace sidetune
