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
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sidetune/merge.hpp"
#include "sidetune/nets.hpp"
#include "sidetune/optim.hpp"
#include "sidetune/rng.hpp"
#include "sidetune/tasks.hpp"

namespace sidetune {

enum class StrategyKind { sidetune, finetune, features, scratch, ewc, psp, pnn_lite, independent };

const char* to_string(StrategyKind kind);
/// Additive kinds only add parameters per task and never overwrite old ones.
bool is_additive(StrategyKind kind);
/// Kinds that keep the frozen base in their forward pass.
bool uses_base(StrategyKind kind);

enum class RegressionLoss { mse, l1 };

/// Unit of the step counter fed to alpha curricula.
enum class AlphaClock { steps, epochs };

struct EwcConfig {
  double lambda = 1.0;
  /// Decay of the running Fisher; 1 accumulates.
  double gamma = 1.0;
  std::size_t fisher_samples = 512;
  /// Examples per squared gradient; 1 gives the per-example empirical Fisher,
  /// fisher_samples squares one gradient of the loss over the whole sample.
  std::size_t fisher_batch = 512;
};

struct StrategyConfig {
  StrategyKind kind = StrategyKind::sidetune;
  /// Side network, or the PNN column. Its output must match the base output.
  NetworkSpec side;
  MergeConfig merge;
  AlphaClock alpha_clock = AlphaClock::steps;
  InitScheme init;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  RegressionLoss regression_loss = RegressionLoss::mse;
  EwcConfig ewc;
  /// PNN-lite only: start lateral adapters at zero instead of Xavier.
  bool zero_init_laterals = false;
  /// scratch and independent: architecture of the fresh network. Defaults to
  /// the base architecture when empty.
  std::optional<NetworkSpec> fresh_net;
};

struct TrainLog {
  std::size_t task_id = 0;
  std::vector<double> losses;
  std::optional<double> final_alpha;
  std::uint64_t steps = 0;
};

struct Metric {
  double loss = 0.0;
  /// Classification only: 1 - accuracy.
  std::optional<double> error_rate;
};

enum class Split { train, val };

/// Diagonal +-1 context keys, one vector per parameterized layer, sized to
/// the layer's input features (linear) or input channels (conv2d).
using PspKey = std::vector<std::vector<double>>;

PspKey psp_random_key(const NetworkSpec& spec, Rng& rng);
/// Multiplies each layer's input dimension of the weights by its key. An
/// involution: applying the same key twice restores the weights exactly.
void psp_apply_key(Network& net, const PspKey& key);

/// Online EWC state for a set of parameters.
struct EwcState {
  std::vector<Tensor> fisher;
  std::vector<Tensor> anchor;
  std::size_t consolidations = 0;
};

/// lambda / 2 * sum_i F_i (theta_i - anchor_i)^2 recorded on the tape.
Var ewc_penalty(Tape& tape, const EwcState& state, std::span<Parameter* const> params,
                double lambda);

/// Side column with one lateral adapter per hidden layer of the base: the
/// input of the column's (k+1)-th parameterized layer is its own k-th hidden
/// activation plus adapters[k](base_hidden[k]).
Var pnn_lateral_forward(Tape& tape, std::span<const Var> base_hidden, Network& column,
                        std::span<Network> adapters, const Var& x);

/// An adaptation method. One instance trains a sequence of tasks and keeps
/// one readout per task.
class Strategy {
 public:
  using StepObserver = std::function<void(std::size_t task_id, std::uint64_t step)>;

  virtual ~Strategy();
  Strategy(const Strategy&) = delete;
  Strategy& operator=(const Strategy&) = delete;

  StrategyKind kind() const noexcept { return config_.kind; }
  const StrategyConfig& config() const noexcept { return config_; }

  /// Trains a new task. All randomness (initialization, batch order) is drawn
  /// from forks of `rng`, so the same task and rng always start identically.
  /// The task is registered before the first step, so the step observer can
  /// inspect its modules; a failed run unregisters it.
  TrainLog train_task(const TaskSpec& task, std::size_t steps, Rng rng);

  /// Deterministic evaluation. Unknown tasks raise ContractError unless
  /// `zero_shot`, which evaluates an untrained head seeded from the task.
  Metric evaluate(const TaskSpec& task, Split split, bool zero_shot = false);

  bool has_task(std::size_t task_id) const { return tasks_.count(task_id) != 0; }
  std::vector<std::size_t> task_ids() const;

  /// Final blend weight per task, in task-id order. ContractError unless the
  /// strategy blends with alpha.
  std::vector<double> report_alpha() const;

  /// EWC only: fold the current task's Fisher into the running estimate and
  /// re-anchor. Called by train_task; ContractError before any task.
  virtual void consolidate();

  /// The frozen prior network as supplied.
  const Network& base() const noexcept { return base_; }
  /// Shared trainable network for substitutive kinds, else nullptr.
  virtual Network* shared_network() noexcept { return nullptr; }
  /// Per-task side network / column / independent net, else nullptr.
  Network* task_network(std::size_t task_id);
  const InitLog& init_log(std::size_t task_id);
  Network& readout(std::size_t task_id);
  MergeOperator* merge(std::size_t task_id);
  std::span<Network> lateral_adapters(std::size_t task_id);

  /// Scalar count over everything the strategy uses. The frozen base counts
  /// only for kinds that use it, and only when trainable_only is false;
  /// readouts are dropped when include_readouts is false.
  std::size_t param_count(bool trainable_only, bool include_readouts = true) const;

  void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

  /// Header record "#strategy=<kind>" followed by every stored tensor.
  std::vector<CheckpointEntry> checkpoint() const;

 protected:
  struct TaskState {
    std::size_t task_id = 0;
    TaskKind kind = TaskKind::classification;
    std::size_t outputs = 0;
    /// Per-example width of the features fed to the readout.
    std::size_t feature_width = 0;
    std::unique_ptr<Network> net;
    std::unique_ptr<MergeOperator> merge;
    std::unique_ptr<Network> readout;
    std::vector<Network> adapters;
    PspKey key;
    InitLog init_log;
    std::uint64_t steps = 0;
    /// Training examples, for the epoch clock.
    std::size_t train_size = 0;
  };

  Strategy(StrategyConfig config, const Network& base);

  /// Builds the per-task modules other than the readout. `training` is false
  /// for zero-shot heads, which must not touch shared state.
  virtual void prepare(TaskState& state, const TaskSpec& task, Rng& rng, bool training) = 0;
  /// Features fed to the readout.
  virtual Var features(TaskState& state, Tape& tape, const Var& x, std::uint64_t step) = 0;
  /// Non-readout parameters trained for this task.
  virtual std::vector<Parameter*> trainable(TaskState& state) = 0;
  virtual Var extra_loss(Tape&) { return {}; }
  virtual void enter_task(TaskState&) {}
  virtual void leave_task(TaskState&) {}
  virtual void after_training(TaskState&, const TaskSpec&, Rng&) {}
  virtual std::size_t shared_param_count() const { return 0; }
  virtual void append_checkpoint(std::vector<CheckpointEntry>&) const {}

  /// Curriculum clock after `step` optimizer steps.
  std::uint64_t clock(const TaskState& state, std::uint64_t step) const;
  Var task_loss(const TaskState& state, const Var& out, const Tensor& targets) const;
  Metric evaluate_state(TaskState& state, const Dataset& data);
  TaskState& state(std::size_t task_id);
  const std::map<std::size_t, std::unique_ptr<TaskState>>& states() const { return tasks_; }

  StrategyConfig config_;
  Network base_;

 private:
  std::unique_ptr<TaskState> make_state(const TaskSpec& task, Rng& rng, bool training);

  std::map<std::size_t, std::unique_ptr<TaskState>> tasks_;
  StepObserver observer_;
};

/// `base` is copied and frozen; the caller's network is left untouched.
std::unique_ptr<Strategy> make_strategy(const StrategyConfig& config, const Network& base);

using StrategyFactory = std::function<std::unique_ptr<Strategy>()>;

/// Counts scalars as count_params does, over a whole strategy.
std::size_t count_params(const Strategy& strategy, bool trainable_only);

// ---------------------------------------------------------------------------
// Boosting: members fit the residual of the ensemble on one task.

struct BoostConfig {
  NetworkSpec member;
  /// Fixed weight on the base; members share 1 - alpha uniformly by summing.
  double alpha = 0.5;
  InitScheme init{InitKind::low_energy, {}};
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  RegressionLoss regression_loss = RegressionLoss::mse;
};

struct BoostResult {
  /// Full training-split loss after each member.
  std::vector<double> member_losses;
  /// False where a member did not lower the loss and was reset to zero output.
  std::vector<bool> accepted;
  /// Loss of the ensemble before the first member trained.
  double initial_loss = 0.0;
};

/// Representation alpha * B(x) + (1 - alpha) * sum_i S_i(x); member j trains
/// with members < j frozen, jointly with the shared readout. A member that
/// ends with a higher training loss than the ensemble without it is reset.
class BoostStack {
 public:
  BoostStack(const Network& base, BoostConfig config);

  BoostResult fit(const TaskSpec& task, std::size_t num_members, std::size_t steps_each, Rng rng);
  Metric evaluate(const TaskSpec& task, Split split);

  std::size_t size() const noexcept { return members_.size(); }
  Network& member(std::size_t i) { return *members_.at(i); }
  Network* readout() noexcept { return readout_.get(); }
  std::size_t trainable_param_count() const;

 private:
  /// Readout logits; `training` is the member being fit, if any.
  Var output(Tape& tape, const Var& x, Network* training);
  Metric evaluate_data(const Dataset& data);

  Network base_;
  BoostConfig config_;
  std::vector<std::unique_ptr<Network>> members_;
  std::unique_ptr<MergeOperator> merge_;
  std::unique_ptr<Network> readout_;
  TaskKind kind_ = TaskKind::classification;
};

struct DeepVsStack {
  double stack_loss = 0.0;
  double deep_loss = 0.0;
  std::size_t stack_params = 0;
  std::size_t deep_params = 0;
  std::vector<double> stack_member_losses;
};

/// One deep side network trained for members * steps_each steps against a
/// stack of `members` shallow ones, both reporting final training loss.
DeepVsStack compare_deep_vs_stack(const Network& base, const TaskSpec& task,
                                  const BoostConfig& shallow, const NetworkSpec& deep,
                                  std::size_t members, std::size_t steps_each, Rng rng);

}  // namespace sidetune
