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

#include "sidetune/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "sidetune/error.hpp"
#include "sidetune/ops.hpp"

namespace sidetune {

const char* to_string(MetricKind kind) {
  return kind == MetricKind::error_rate ? "error_rate" : "loss";
}

MetricKind grid_metric(TaskKind kind) {
  return kind == TaskKind::classification ? MetricKind::error_rate : MetricKind::loss;
}

// ---------------------------------------------------------------------------
// EvalGrid

EvalGrid::EvalGrid(std::size_t tasks, MetricKind kind)
    : tasks_(tasks), kind_(kind), cells_(tasks * tasks) {}

void EvalGrid::set(std::size_t stage, std::size_t task, const Metric& metric) {
  if (stage >= tasks_ || task > stage) {
    throw ContractError("eval grid: cell (" + std::to_string(stage) + ", " + std::to_string(task) +
                        ") outside the lower triangle of " + std::to_string(tasks_) + " tasks");
  }
  if (!std::isfinite(metric.loss) || (metric.error_rate && !std::isfinite(*metric.error_rate))) {
    throw NumericError("eval grid: non-finite metric at (" + std::to_string(stage) + ", " +
                       std::to_string(task) + ")");
  }
  if (kind_ == MetricKind::error_rate && !metric.error_rate) {
    throw ContractError("eval grid: error-rate grid given a metric without error rate");
  }
  cells_[stage * tasks_ + task] = metric;
}

bool EvalGrid::has(std::size_t stage, std::size_t task) const {
  return stage < tasks_ && task < tasks_ && cells_[stage * tasks_ + task].has_value();
}

const Metric& EvalGrid::at(std::size_t stage, std::size_t task) const {
  if (!has(stage, task)) {
    throw ContractError("eval grid: cell (" + std::to_string(stage) + ", " + std::to_string(task) +
                        ") is not populated");
  }
  return *cells_[stage * tasks_ + task];
}

double EvalGrid::value(std::size_t stage, std::size_t task) const {
  const Metric& m = at(stage, task);
  return kind_ == MetricKind::error_rate ? *m.error_rate : m.loss;
}

bool EvalGrid::populated() const {
  if (tasks_ == 0) return false;
  for (std::size_t i = 0; i < tasks_; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (!has(i, j)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Runs and metrics

Rng task_rng(std::uint64_t seed, std::size_t task_id) {
  return Rng(seed).fork("task").fork(static_cast<std::uint64_t>(task_id));
}

namespace {

bool reports_alpha(const Strategy& s) {
  return (s.kind() == StrategyKind::sidetune || s.kind() == StrategyKind::pnn_lite) &&
         s.config().merge.kind == MergeKind::alpha_blend;
}

}  // namespace

SequenceRun run_sequence(Strategy& strategy, const SequenceSpec& sequence,
                         std::size_t steps_per_task, std::uint64_t seed) {
  sequence.validate();
  SequenceRun run;
  run.strategy = to_string(strategy.kind());
  run.seed = seed;
  run.steps_per_task = steps_per_task;
  run.grid = EvalGrid(sequence.size(), grid_metric(sequence.tasks.front().kind));
  run.base_checksum_initial = strategy.base().params().checksum();
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    const TaskSpec& task = sequence.tasks[i];
    run.logs.push_back(strategy.train_task(task, steps_per_task, task_rng(seed, task.task_id)));
    for (std::size_t j = 0; j <= i; ++j) {
      run.grid.set(i, j, strategy.evaluate(sequence.tasks[j], Split::val));
    }
    run.base_checksums.push_back(strategy.base().params().checksum());
  }
  if (reports_alpha(strategy)) run.final_alphas = strategy.report_alpha();
  run.trainable_params = strategy.param_count(true);
  run.total_params = strategy.param_count(false);
  return run;
}

std::vector<double> compute_forgetting(const EvalGrid& grid) {
  if (!grid.populated()) throw ContractError("forgetting: grid is not populated");
  const std::size_t last = grid.tasks() - 1;
  std::vector<double> out(grid.tasks());
  for (std::size_t j = 0; j < grid.tasks(); ++j) out[j] = grid.value(last, j) - grid.value(j, j);
  return out;
}

std::vector<double> compute_rigidity(std::span<const RigidityPoint> in_sequence,
                                     std::span<const RigidityPoint> trained_first) {
  if (in_sequence.size() != trained_first.size()) {
    throw ContractError("rigidity: " + std::to_string(in_sequence.size()) + " in-sequence losses vs " +
                        std::to_string(trained_first.size()) + " controls");
  }
  std::vector<double> out;
  out.reserve(in_sequence.size());
  for (std::size_t i = 0; i < in_sequence.size(); ++i) {
    const RigidityPoint& a = in_sequence[i];
    const RigidityPoint& f = trained_first[i];
    if (a.steps != f.steps || a.seed != f.seed) {
      throw ContractError("rigidity: task " + std::to_string(i + 1) +
                          " control used a different budget or seed");
    }
    if (!(a.loss > 0.0) || !(f.loss > 0.0)) {
      throw ContractError("rigidity: task " + std::to_string(i + 1) +
                          " has a nonpositive loss; the log-ratio is undefined");
    }
    out.push_back(std::log(a.loss / f.loss));
  }
  return out;
}

std::vector<RigidityPoint> in_sequence_points(const SequenceRun& run) {
  std::vector<RigidityPoint> out;
  for (std::size_t i = 0; i < run.grid.tasks(); ++i) {
    out.push_back({run.grid.at(i, i).loss, run.steps_per_task, run.seed});
  }
  return out;
}

std::vector<RigidityPoint> trained_first_controls(const StrategyFactory& factory,
                                                  const SequenceSpec& sequence,
                                                  std::size_t steps_per_task, std::uint64_t seed) {
  std::vector<RigidityPoint> out;
  for (const TaskSpec& task : sequence.tasks) {
    SequenceSpec single;
    single.family = sequence.family;
    single.seed = sequence.seed;
    single.tasks.push_back(task);
    std::unique_ptr<Strategy> strategy = factory();
    SequenceRun run = run_sequence(*strategy, single, steps_per_task, seed);
    out.push_back({run.grid.at(0, 0).loss, steps_per_task, seed});
  }
  return out;
}

std::vector<std::vector<double>> compute_ranks(
    const std::vector<std::vector<std::optional<double>>>& table) {
  if (table.empty()) throw ContractError("rank: no methods");
  const std::size_t tasks = table.front().size();
  for (std::size_t m = 0; m < table.size(); ++m) {
    if (table[m].size() != tasks) throw ContractError("rank: ragged method x task table");
    for (std::size_t t = 0; t < tasks; ++t) {
      if (!table[m][t]) {
        throw ContractError("rank: method " + std::to_string(m) + " is missing task " +
                            std::to_string(t));
      }
    }
  }
  std::vector<std::vector<double>> ranks(table.size(), std::vector<double>(tasks));
  std::vector<std::size_t> order(table.size());
  for (std::size_t t = 0; t < tasks; ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return *table[a][t] < *table[b][t]; });
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && *table[order[j + 1]][t] == *table[order[i]][t]) ++j;
      const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) ranks[order[k]][t] = rank;
      i = j + 1;
    }
  }
  return ranks;
}

std::vector<double> compute_avg_rank(const std::vector<std::vector<std::optional<double>>>& table) {
  const auto ranks = compute_ranks(table);
  std::vector<double> out;
  for (const auto& row : ranks) {
    if (row.empty()) throw ContractError("rank: no tasks");
    out.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

MethodRun run_method(const MethodSpec& method, const ExperimentBuilder& builder,
                     std::uint64_t seed, std::size_t steps_per_task, bool rigidity) {
  const Experiment experiment = builder(seed);
  const std::uint64_t run_seed = seed + method.seed_offset;
  std::unique_ptr<Strategy> strategy = make_strategy(method.config, experiment.base);
  MethodRun out;
  out.method = method.name;
  out.seed = seed;
  out.run = run_sequence(*strategy, experiment.sequence, steps_per_task, run_seed);
  out.run.strategy = method.name;
  out.forgetting = compute_forgetting(out.run.grid);
  if (rigidity) {
    const StrategyFactory factory = [&] { return make_strategy(method.config, experiment.base); };
    const auto controls =
        trained_first_controls(factory, experiment.sequence, steps_per_task, run_seed);
    out.rigidity = compute_rigidity(in_sequence_points(out.run), controls);
  }
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

CompareReport compare_methods(const std::vector<MethodSpec>& methods,
                              const ExperimentBuilder& builder, const CompareOptions& options) {
  if (methods.empty()) throw ConfigError("compare: no methods");
  if (options.seeds.empty()) throw ConfigError("compare: no seeds");
  const std::size_t seeds = options.seeds.size();
  const std::size_t total = methods.size() * seeds;
  std::vector<std::optional<MethodRun>> results(total);
  std::vector<std::exception_ptr> errors(total);

  auto work = [&](std::size_t k) {
    try {
      results[k] = run_method(methods[k / seeds], builder, options.seeds[k % seeds],
                              options.steps_per_task, options.rigidity);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  CompareReport report;
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, total));
  if (jobs == 1) {
    for (std::size_t k = 0; k < total; ++k) {
      work(k);
      if (errors[k]) std::rethrow_exception(errors[k]);
      if (options.on_run) options.on_run(*results[k]);
    }
  } else {
    std::mutex mutex;
    std::condition_variable done_cv;
    std::vector<bool> done(total, false);
    std::size_t next = 0;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (;;) {
          std::size_t k;
          {
            std::lock_guard lock(mutex);
            if (next == total) return;
            k = next++;
          }
          work(k);
          {
            std::lock_guard lock(mutex);
            done[k] = true;
          }
          done_cv.notify_all();
        }
      });
    }
    std::exception_ptr first_error;
    for (std::size_t k = 0; k < total; ++k) {
      {
        std::unique_lock lock(mutex);
        done_cv.wait(lock, [&] { return done[k]; });
      }
      if (errors[k]) {
        if (!first_error) first_error = errors[k];
        continue;
      }
      if (!first_error && options.on_run) options.on_run(*results[k]);
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  for (const auto& m : methods) report.methods.push_back(m.name);
  for (auto& r : results) report.runs.push_back(std::move(*r));

  std::vector<std::vector<std::optional<double>>> table(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> forgetting;
    std::vector<double> rigidity;
    for (std::size_t s = 0; s < seeds; ++s) {
      const MethodRun& run = report.runs[m * seeds + s];
      const EvalGrid& grid = run.run.grid;
      for (std::size_t j = 0; j < grid.tasks(); ++j) table[m].push_back(grid.value(grid.tasks() - 1, j));
      forgetting.insert(forgetting.end(), run.forgetting.begin(), run.forgetting.end());
      rigidity.insert(rigidity.end(), run.rigidity.begin(), run.rigidity.end());
    }
    report.mean_forgetting.push_back(mean_of(forgetting));
    report.mean_rigidity.push_back(mean_of(rigidity));
    report.trainable_params.push_back(report.runs[m * seeds].run.trainable_params);
  }
  report.avg_rank = compute_avg_rank(table);
  return report;
}

AblationReport ablation_run(const Network& base, const SequenceSpec& sequence,
                            const StrategyConfig& sidetune, std::size_t steps_per_task,
                            std::uint64_t seed) {
  StrategyConfig base_only = sidetune;
  base_only.kind = StrategyKind::features;
  StrategyConfig side_only = sidetune;
  side_only.kind = StrategyKind::scratch;
  side_only.fresh_net = sidetune.side.layers.empty() ? base.spec() : sidetune.side;
  StrategyConfig full = sidetune;
  full.kind = StrategyKind::sidetune;

  AblationReport report;
  std::vector<std::vector<std::optional<double>>> table;
  for (const StrategyConfig* config : {&base_only, &side_only, &full}) {
    std::unique_ptr<Strategy> strategy = make_strategy(*config, base);
    const SequenceRun run = run_sequence(*strategy, sequence, steps_per_task, seed);
    std::vector<double> row;
    std::vector<std::optional<double>> cells;
    for (std::size_t j = 0; j < run.grid.tasks(); ++j) {
      row.push_back(run.grid.value(j, j));
      cells.emplace_back(row.back());
    }
    report.table.push_back(std::move(row));
    table.push_back(std::move(cells));
  }
  report.ranks = compute_ranks(table);
  report.avg_rank = compute_avg_rank(table);
  return report;
}

Network pretrain_base(const NetworkSpec& spec, const TaskSpec& task, std::size_t steps,
                      const OptimizerConfig& optimizer, std::size_t batch_size, Rng rng) {
  Rng net_rng = rng.fork("net");
  Network net(spec, net_rng);
  Rng head_rng = rng.fork("head");
  Network head(NetworkSpec::mlp(spec.name + ".pretrain_head", NetworkRole::readout,
                                net.output_width(), {}, task.outputs),
               head_rng);
  std::vector<Parameter*> params = net.params().trainable();
  for (Parameter* p : head.params().trainable()) params.push_back(p);
  Optimizer opt(optimizer, params);
  Rng batch_rng = rng.fork("batches");
  const std::size_t n = task.train.size();
  const std::size_t batch = std::min(batch_size, n);
  std::vector<std::size_t> order;
  std::size_t pos = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> rows;
    while (rows.size() < batch) {
      if (pos == order.size()) {
        order = batch_rng.permutation(n);
        pos = 0;
      }
      rows.push_back(order[pos++]);
    }
    const Tensor x = task.train.inputs.gather_rows(rows);
    const Tensor y = task.train.targets.gather_rows(rows);
    Tape tape;
    Var f = net.forward(tape, tape.constant_ref(x));
    if (f.shape().size() > 2) f = ops::flatten(f);
    Var out = head.forward(tape, f);
    Var loss = task.kind == TaskKind::classification ? ops::softmax_cross_entropy(out, y)
                                                     : ops::mse_loss(out, y);
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  opt.zero_grad();
  net.freeze();
  return net;
}

// ---------------------------------------------------------------------------
// Results files

std::vector<ResultRow> result_rows(const MethodRun& run) {
  std::vector<ResultRow> rows;
  const EvalGrid& grid = run.run.grid;
  const std::string run_id = run.method + "-s" + std::to_string(run.seed);
  for (std::size_t i = 0; i < grid.tasks(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      rows.push_back({run_id, run.method, i + 1, j + 1, to_string(grid.kind()), grid.value(i, j),
                      run.seed, run.run.steps_per_task});
    }
  }
  for (std::size_t i = 0; i < run.rigidity.size(); ++i) {
    rows.push_back({run_id, run.method, i + 1, i + 1, std::string(kRigidityKind), run.rigidity[i],
                    run.seed, run.run.steps_per_task});
  }
  return rows;
}

namespace {

void check_field(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(",\n\r\"") != std::string::npos) {
    throw ContractError(std::string("results csv: ") + what + " '" + s +
                        "' must be non-empty without commas, quotes or newlines");
  }
}

}  // namespace

std::string format_results_csv(std::span<const ResultRow> rows) {
  std::string out(kResultsHeader);
  out += '\n';
  char value[64];
  for (const ResultRow& r : rows) {
    check_field(r.run_id, "run_id");
    check_field(r.strategy, "strategy");
    check_field(r.metric_kind, "metric_kind");
    std::snprintf(value, sizeof value, "%.17g", r.value);
    out += r.run_id + ',' + r.strategy + ',' + std::to_string(r.task_trained) + ',' +
           std::to_string(r.task_evaled) + ',' + r.metric_kind + ',' + value + ',' +
           std::to_string(r.seed) + ',' + std::to_string(r.step_budget) + '\n';
  }
  return out;
}

namespace {

template <typename T>
T parse_unsigned(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw FormatError("results csv line " + std::to_string(line) + ": bad " + what + " '" +
                      std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::vector<ResultRow> parse_results_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kResultsHeader) {
        throw FormatError("results csv line 1: expected header '" + std::string(kResultsHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 8) {
      throw FormatError("results csv line " + std::to_string(line_no) + ": expected 8 fields, got " +
                        std::to_string(fields.size()));
    }
    ResultRow r;
    r.run_id = fields[0];
    r.strategy = fields[1];
    r.task_trained = parse_unsigned<std::size_t>(fields[2], line_no, "task_trained");
    r.task_evaled = parse_unsigned<std::size_t>(fields[3], line_no, "task_evaled");
    r.metric_kind = fields[4];
    const auto [ptr, ec] = std::from_chars(fields[5].data(), fields[5].data() + fields[5].size(), r.value);
    if (ec != std::errc{} || ptr != fields[5].data() + fields[5].size()) {
      throw FormatError("results csv line " + std::to_string(line_no) + ": bad value '" +
                        std::string(fields[5]) + "'");
    }
    r.seed = parse_unsigned<std::uint64_t>(fields[6], line_no, "seed");
    r.step_budget = parse_unsigned<std::size_t>(fields[7], line_no, "step_budget");
    if (r.run_id.empty() || r.strategy.empty() || r.metric_kind.empty()) {
      throw FormatError("results csv line " + std::to_string(line_no) + ": empty text field");
    }
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw FormatError("results csv line 1: missing header");
  return rows;
}

}  // namespace sidetune
