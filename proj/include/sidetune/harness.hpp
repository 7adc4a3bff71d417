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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sidetune/nets.hpp"
#include "sidetune/strategies.hpp"
#include "sidetune/tasks.hpp"

namespace sidetune {

enum class MetricKind { loss, error_rate };
const char* to_string(MetricKind kind);
/// Error rate for classification, loss for regression.
MetricKind grid_metric(TaskKind kind);

/// E[i][j]: metric of task j after training stage i (0-based), for j <= i.
class EvalGrid {
 public:
  EvalGrid() = default;
  EvalGrid(std::size_t tasks, MetricKind kind);

  std::size_t tasks() const noexcept { return tasks_; }
  MetricKind kind() const noexcept { return kind_; }

  /// ContractError outside the lower triangle, NumericError on non-finite
  /// values.
  void set(std::size_t stage, std::size_t task, const Metric& metric);
  bool has(std::size_t stage, std::size_t task) const;
  const Metric& at(std::size_t stage, std::size_t task) const;
  /// The grid's metric kind at a cell.
  double value(std::size_t stage, std::size_t task) const;
  bool populated() const;

 private:
  std::size_t tasks_ = 0;
  MetricKind kind_ = MetricKind::loss;
  std::vector<std::optional<Metric>> cells_;
};

/// Per-task training stream derived from the run seed and task id only, so a
/// task sees the same initialization and batches at any sequence position.
Rng task_rng(std::uint64_t seed, std::size_t task_id);

struct SequenceRun {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t steps_per_task = 0;
  EvalGrid grid;
  std::vector<TrainLog> logs;
  /// Empty unless the strategy blends with alpha.
  std::vector<double> final_alphas;
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;
  /// Frozen base checksum before training and after every stage.
  std::uint64_t base_checksum_initial = 0;
  std::vector<std::uint64_t> base_checksums;
};

/// Trains the tasks in order, evaluating every task j <= i on its validation
/// split after stage i.
SequenceRun run_sequence(Strategy& strategy, const SequenceSpec& sequence,
                         std::size_t steps_per_task, std::uint64_t seed);

/// forgetting_j = E[m][j] - E[j][j].
std::vector<double> compute_forgetting(const EvalGrid& grid);

struct RigidityPoint {
  double loss = 0.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

/// rigidity_i = ln(L_in_sequence_i / L_trained_first_i).
std::vector<double> compute_rigidity(std::span<const RigidityPoint> in_sequence,
                                     std::span<const RigidityPoint> trained_first);

/// Diagonal validation losses E[i][i] of a run.
std::vector<RigidityPoint> in_sequence_points(const SequenceRun& run);

/// Each task run alone, as a one-task sequence through a fresh strategy, with
/// the same seed and budget.
std::vector<RigidityPoint> trained_first_controls(const StrategyFactory& factory,
                                                  const SequenceSpec& sequence,
                                                  std::size_t steps_per_task, std::uint64_t seed);

/// table[method][task] (lower is better); nullopt cells raise ContractError.
/// Ties share the average of their ranks.
std::vector<double> compute_avg_rank(const std::vector<std::vector<std::optional<double>>>& table);
/// Per-task ranks, same layout as the table.
std::vector<std::vector<double>> compute_ranks(
    const std::vector<std::vector<std::optional<double>>>& table);

// ---------------------------------------------------------------------------
// Experiments

struct Experiment {
  SequenceSpec sequence;
  Network base;
};

/// Builds the task sequence and frozen base for one seed.
using ExperimentBuilder = std::function<Experiment(std::uint64_t seed)>;

struct MethodSpec {
  std::string name;
  StrategyConfig config;
  /// Added to every run seed; lets identical configs differ only in seed.
  std::uint64_t seed_offset = 0;
};

struct MethodRun {
  std::string method;
  std::uint64_t seed = 0;
  SequenceRun run;
  std::vector<double> forgetting;
  /// Empty unless rigidity controls were requested.
  std::vector<double> rigidity;
};

struct CompareOptions {
  std::vector<std::uint64_t> seeds{0};
  std::size_t steps_per_task = 200;
  bool rigidity = false;
  std::size_t jobs = 1;
  /// Called from the coordinating thread as each run completes, in order.
  std::function<void(const MethodRun&)> on_run;
};

struct CompareReport {
  std::vector<std::string> methods;
  /// Method-major: runs[m * seeds + s].
  std::vector<MethodRun> runs;
  /// Ranked on final-stage metrics over every (seed, task) pair.
  std::vector<double> avg_rank;
  std::vector<double> mean_forgetting;
  /// NaN when rigidity was not requested.
  std::vector<double> mean_rigidity;
  std::vector<std::size_t> trainable_params;
};

/// Runs every (method, seed) pair, in parallel when jobs > 1. Results do not
/// depend on the job count.
CompareReport compare_methods(const std::vector<MethodSpec>& methods,
                              const ExperimentBuilder& builder, const CompareOptions& options);

/// Runs one method on one seed, with rigidity controls when requested.
MethodRun run_method(const MethodSpec& method, const ExperimentBuilder& builder,
                     std::uint64_t seed, std::size_t steps_per_task, bool rigidity);

struct AblationReport {
  std::vector<std::string> methods{"base-only", "side-only", "side-tune"};
  /// [method][task] diagonal metric E[j][j].
  std::vector<std::vector<double>> table;
  std::vector<std::vector<double>> ranks;
  std::vector<double> avg_rank;
};

/// base-only = features on the base; side-only = scratch with the side
/// architecture; side-tune = the given configuration. Shared seed and budget.
AblationReport ablation_run(const Network& base, const SequenceSpec& sequence,
                            const StrategyConfig& sidetune, std::size_t steps_per_task,
                            std::uint64_t seed);

/// Trains `spec` with a temporary linear head on a task, then freezes it.
Network pretrain_base(const NetworkSpec& spec, const TaskSpec& task, std::size_t steps,
                      const OptimizerConfig& optimizer, std::size_t batch_size, Rng rng);

// ---------------------------------------------------------------------------
// Results files

struct ResultRow {
  std::string run_id;
  std::string strategy;
  std::size_t task_trained = 0;
  std::size_t task_evaled = 0;
  std::string metric_kind;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::size_t step_budget = 0;
};

inline constexpr std::string_view kResultsHeader =
    "run_id,strategy,task_trained,task_evaled,metric_kind,value,seed,step_budget";
/// metric_kind of rigidity rows; the value is a natural-log loss ratio.
inline constexpr std::string_view kRigidityKind = "rigidity_ln_ratio";

/// Grid cells (1-based task ids), then rigidity rows on the diagonal.
std::vector<ResultRow> result_rows(const MethodRun& run);
std::string format_results_csv(std::span<const ResultRow> rows);
/// FormatError naming the 1-based line on malformed input.
std::vector<ResultRow> parse_results_csv(std::string_view text);

}  // namespace sidetune
