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

#include "sidetune/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "sidetune/error.hpp"
#include "sidetune/ops.hpp"

namespace sidetune {

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::sidetune: return "sidetune";
    case StrategyKind::finetune: return "finetune";
    case StrategyKind::features: return "features";
    case StrategyKind::scratch: return "scratch";
    case StrategyKind::ewc: return "ewc";
    case StrategyKind::psp: return "psp";
    case StrategyKind::pnn_lite: return "pnn_lite";
    case StrategyKind::independent: return "independent";
  }
  return "unknown";
}

bool is_additive(StrategyKind kind) {
  return kind == StrategyKind::sidetune || kind == StrategyKind::features ||
         kind == StrategyKind::pnn_lite || kind == StrategyKind::independent;
}

bool uses_base(StrategyKind kind) {
  return kind == StrategyKind::sidetune || kind == StrategyKind::features ||
         kind == StrategyKind::pnn_lite;
}

namespace {

constexpr std::size_t kEvalChunk = 256;

Var as_rows(const Var& v) { return v.shape().size() > 2 ? ops::flatten(v) : v; }

Var loss_for(TaskKind kind, RegressionLoss regression, const Var& out, const Tensor& targets) {
  if (kind == TaskKind::classification) return ops::softmax_cross_entropy(out, targets);
  if (out.shape() != targets.shape()) {
    throw DimensionError("regression output " + to_string(out.shape()) + " vs targets " +
                         to_string(targets.shape()));
  }
  return regression == RegressionLoss::l1 ? ops::l1_loss(out, targets)
                                          : ops::mse_loss(out, targets);
}

std::size_t count_errors(const Tensor& logits, const Tensor& labels) {
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.size() / n;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (static_cast<double>(best) != labels[i]) ++errors;
  }
  return errors;
}

using ForwardFn = std::function<Var(Tape&, const Var&)>;

Metric evaluate_dataset(TaskKind kind, RegressionLoss regression, const Dataset& data,
                        const ForwardFn& forward) {
  const std::size_t n = data.size();
  if (n == 0) throw TaskError("evaluate: empty split");
  double loss_sum = 0.0;
  std::size_t errors = 0;
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, n - begin);
    const Tensor x = data.inputs.slice_rows(begin, count);
    const Tensor y = data.targets.slice_rows(begin, count);
    Tape tape;
    Var out = forward(tape, tape.constant_ref(x));
    loss_sum += loss_for(kind, regression, out, y).value().item() * static_cast<double>(count);
    if (kind == TaskKind::classification) errors += count_errors(out.value(), y);
  }
  Metric metric;
  metric.loss = loss_sum / static_cast<double>(n);
  if (kind == TaskKind::classification) {
    metric.error_rate = static_cast<double>(errors) / static_cast<double>(n);
  }
  return metric;
}

/// Epoch-wise shuffled minibatches.
class Batcher {
 public:
  Batcher(std::size_t n, std::size_t batch, Rng rng)
      : n_(n), batch_(std::min(batch, n)), rng_(rng) {
    if (n == 0 || batch == 0) throw ContractError("batcher: empty dataset or zero batch size");
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> rows;
    rows.reserve(batch_);
    while (rows.size() < batch_) {
      if (pos_ == order_.size()) {
        order_ = rng_.permutation(n_);
        pos_ = 0;
      }
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

InputSampler row_sampler(const Tensor& inputs) {
  return [&inputs](Rng& rng, std::size_t batch) {
    std::vector<std::size_t> rows(batch);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(inputs.dim(0)));
    return inputs.gather_rows(rows);
  };
}

NetworkSpec renamed(NetworkSpec spec, std::string name, NetworkRole role) {
  spec.name = std::move(name);
  spec.role = role;
  return spec;
}

std::string task_prefix(std::size_t id) { return "task" + std::to_string(id); }

Network readout_for(std::size_t width, std::size_t outputs, std::string name, Rng rng) {
  return Network(NetworkSpec::mlp(std::move(name), NetworkRole::readout, width, {}, outputs), rng);
}

void append(std::vector<CheckpointEntry>& out, std::vector<CheckpointEntry> more) {
  for (auto& e : more) out.push_back(std::move(e));
}

/// Output shape after each layer prefix.
std::vector<Shape> layer_shapes(const NetworkSpec& spec) {
  std::vector<Shape> shapes;
  NetworkSpec prefix = spec;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    prefix.layers.assign(spec.layers.begin(), spec.layers.begin() + static_cast<std::ptrdiff_t>(i + 1));
    shapes.push_back(prefix.output_shape());
  }
  return shapes;
}

}  // namespace

// ---------------------------------------------------------------------------
// PSP keys

PspKey psp_random_key(const NetworkSpec& spec, Rng& rng) {
  PspKey key;
  for (const auto& layer : spec.layers) {
    if (!layer.has_params()) continue;
    std::vector<double> k(layer.in);
    for (auto& v : k) v = (rng.next_u64() >> 63) != 0 ? 1.0 : -1.0;
    key.push_back(std::move(k));
  }
  return key;
}

void psp_apply_key(Network& net, const PspKey& key) {
  const auto& layers = net.spec().layers;
  const std::size_t param_layers = static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.has_params(); }));
  if (key.size() != param_layers) {
    throw KeyError("psp key has " + std::to_string(key.size()) + " layers, network '" +
                   net.spec().name + "' has " + std::to_string(param_layers));
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    if (!layer.has_params()) continue;
    const std::vector<double>& sign = key[k];
    if (sign.size() != layer.in) {
      throw KeyError("psp key layer " + std::to_string(k) + " has length " +
                     std::to_string(sign.size()) + ", expected " + std::to_string(layer.in));
    }
    Parameter& w = net.params().at(net.spec().name + "." + std::to_string(i) + ".weight");
    double* data = w.value.raw();
    if (layer.kind == LayerKind::linear) {
      const std::size_t out = layer.out;
      for (std::size_t r = 0; r < layer.in; ++r) {
        for (std::size_t c = 0; c < out; ++c) data[r * out + c] *= sign[r];
      }
    } else {
      const std::size_t area = layer.kernel * layer.kernel;
      for (std::size_t o = 0; o < layer.out; ++o) {
        for (std::size_t c = 0; c < layer.in; ++c) {
          double* slice = data + (o * layer.in + c) * area;
          for (std::size_t j = 0; j < area; ++j) slice[j] *= sign[c];
        }
      }
    }
    ++k;
  }
}

// ---------------------------------------------------------------------------
// EWC penalty and PNN laterals

Var ewc_penalty(Tape& tape, const EwcState& state, std::span<Parameter* const> params,
                double lambda) {
  if (state.consolidations == 0) throw ContractError("ewc penalty: nothing consolidated yet");
  if (state.fisher.size() != params.size() || state.anchor.size() != params.size()) {
    throw ContractError("ewc penalty: state covers " + std::to_string(state.fisher.size()) +
                        " tensors, got " + std::to_string(params.size()) + " parameters");
  }
  Var total;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var diff = ops::sub(tape.param(*params[i]), tape.constant_ref(state.anchor[i]));
    Var term = ops::sum(ops::mul(ops::mul(diff, diff), tape.constant_ref(state.fisher[i])));
    total = total.valid() ? ops::add(total, term) : term;
  }
  if (!total.valid()) return tape.constant(Tensor::scalar(0.0));
  return ops::scale(total, 0.5 * lambda);
}

Var pnn_lateral_forward(Tape& tape, std::span<const Var> base_hidden, Network& column,
                        std::span<Network> adapters, const Var& x) {
  if (adapters.size() > base_hidden.size()) {
    throw DimensionError("pnn: " + std::to_string(adapters.size()) + " adapters but only " +
                         std::to_string(base_hidden.size()) + " base taps");
  }
  Var h = x;
  std::size_t param_layer = 0;
  for (std::size_t i = 0; i < column.layer_count(); ++i) {
    if (column.spec().layers[i].has_params()) {
      if (param_layer > 0 && param_layer - 1 < adapters.size()) {
        const std::size_t k = param_layer - 1;
        h = ops::add(h, adapters[k].forward(tape, base_hidden[k]));
      }
      ++param_layer;
    }
    h = column.apply_layer(tape, i, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Strategy

Strategy::Strategy(StrategyConfig config, const Network& base)
    : config_(std::move(config)), base_(base) {
  base_.freeze();
  if (config_.batch_size == 0) throw ConfigError("strategy: batch_size must be positive");
}

Strategy::~Strategy() = default;

std::vector<std::size_t> Strategy::task_ids() const {
  std::vector<std::size_t> ids;
  for (const auto& [id, st] : tasks_) ids.push_back(id);
  return ids;
}

Strategy::TaskState& Strategy::state(std::size_t task_id) {
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) {
    throw ContractError(std::string(to_string(kind())) + ": task " + std::to_string(task_id) +
                        " has not been trained");
  }
  return *it->second;
}

std::unique_ptr<Strategy::TaskState> Strategy::make_state(const TaskSpec& task, Rng& rng,
                                                          bool training) {
  if (task.input_shape != base_.spec().input_shape) {
    throw TaskError("task " + std::to_string(task.task_id) + " input shape " +
                    to_string(task.input_shape) + " does not match the base input " +
                    to_string(base_.spec().input_shape));
  }
  if (task.outputs == 0) throw TaskError("task " + std::to_string(task.task_id) + " has no outputs");
  auto st = std::make_unique<TaskState>();
  st->task_id = task.task_id;
  st->kind = task.kind;
  st->outputs = task.outputs;
  st->train_size = task.train.size();
  prepare(*st, task, rng, training);
  st->readout = std::make_unique<Network>(readout_for(
      st->feature_width, task.outputs, task_prefix(task.task_id) + ".readout", rng.fork("readout")));
  return st;
}

std::uint64_t Strategy::clock(const TaskState& st, std::uint64_t step) const {
  if (config_.alpha_clock == AlphaClock::steps || st.train_size == 0) return step;
  return step * std::min<std::uint64_t>(config_.batch_size, st.train_size) / st.train_size;
}

Var Strategy::task_loss(const TaskState& st, const Var& out, const Tensor& targets) const {
  return loss_for(st.kind, config_.regression_loss, out, targets);
}

TrainLog Strategy::train_task(const TaskSpec& task, std::size_t steps, Rng rng) {
  if (has_task(task.task_id)) {
    throw ContractError(std::string(to_string(kind())) + ": task " +
                        std::to_string(task.task_id) + " was already trained");
  }
  if (task.train.size() == 0) throw TaskError("task " + std::to_string(task.task_id) + ": empty train split");
  std::unique_ptr<TaskState> st = make_state(task, rng, true);

  std::vector<Parameter*> params = trainable(*st);
  for (Parameter* p : st->readout->params().trainable()) params.push_back(p);
  Optimizer opt(config_.optimizer, params);
  Batcher batcher(task.train.size(), config_.batch_size, rng.fork("batches"));

  TrainLog log;
  log.task_id = task.task_id;
  log.losses.reserve(steps);
  // Registered up front so step observers can reach the task's modules.
  TaskState& stored = *st;
  tasks_.emplace(task.task_id, std::move(st));
  enter_task(stored);
  try {
    for (std::size_t step = 0; step < steps; ++step) {
      const std::vector<std::size_t> rows = batcher.next();
      const Tensor x = task.train.inputs.gather_rows(rows);
      const Tensor y = task.train.targets.gather_rows(rows);
      Tape tape;
      Var f = as_rows(features(stored, tape, tape.constant_ref(x), clock(stored, step)));
      Var loss = task_loss(stored, stored.readout->forward(tape, f), y);
      log.losses.push_back(loss.value().item());
      if (Var extra = extra_loss(tape); extra.valid()) loss = ops::add(loss, extra);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      stored.steps = step + 1;
      if (observer_) observer_(task.task_id, stored.steps);
    }
  } catch (...) {
    leave_task(stored);
    tasks_.erase(task.task_id);
    throw;
  }
  leave_task(stored);
  opt.zero_grad();
  log.steps = stored.steps;
  if (stored.merge && stored.merge->kind() == MergeKind::alpha_blend) {
    log.final_alpha = stored.merge->alpha(clock(stored, stored.steps));
  }
  after_training(stored, task, rng);
  return log;
}

Metric Strategy::evaluate_state(TaskState& st, const Dataset& data) {
  enter_task(st);
  Metric metric;
  try {
    metric = evaluate_dataset(st.kind, config_.regression_loss, data, [&](Tape& tape, const Var& x) {
      return st.readout->forward(tape, as_rows(features(st, tape, x, clock(st, st.steps))));
    });
  } catch (...) {
    leave_task(st);
    throw;
  }
  leave_task(st);
  return metric;
}

Metric Strategy::evaluate(const TaskSpec& task, Split split, bool zero_shot) {
  const Dataset& data = split == Split::train ? task.train : task.val;
  auto it = tasks_.find(task.task_id);
  if (it != tasks_.end()) return evaluate_state(*it->second, data);
  if (!zero_shot) state(task.task_id);  // throws
  Rng rng = Rng(task.seed).fork("zero_shot");
  std::unique_ptr<TaskState> st = make_state(task, rng, false);
  return evaluate_state(*st, data);
}

std::vector<double> Strategy::report_alpha() const {
  std::vector<double> alphas;
  for (const auto& [id, st] : tasks_) {
    if (!st->merge || st->merge->kind() != MergeKind::alpha_blend) {
      throw ContractError(std::string(to_string(kind())) + ": task " + std::to_string(id) +
                          " has no alpha blend to report");
    }
    alphas.push_back(st->merge->alpha(clock(*st, st->steps)));
  }
  return alphas;
}

void Strategy::consolidate() {
  throw ContractError(std::string(to_string(kind())) + ": consolidation is only defined for ewc");
}

Network* Strategy::task_network(std::size_t task_id) { return state(task_id).net.get(); }

const InitLog& Strategy::init_log(std::size_t task_id) { return state(task_id).init_log; }

Network& Strategy::readout(std::size_t task_id) { return *state(task_id).readout; }

MergeOperator* Strategy::merge(std::size_t task_id) { return state(task_id).merge.get(); }

std::span<Network> Strategy::lateral_adapters(std::size_t task_id) {
  return state(task_id).adapters;
}

std::size_t Strategy::param_count(bool trainable_only, bool include_readouts) const {
  std::size_t total = shared_param_count();
  if (!trainable_only && uses_base(kind())) total += count_params(base_, false);
  for (const auto& [id, st] : tasks_) {
    if (st->net) total += count_params(*st->net, trainable_only);
    if (st->merge) total += st->merge->param_count(trainable_only);
    for (const Network& a : st->adapters) total += count_params(a, trainable_only);
    if (include_readouts) total += count_params(*st->readout, trainable_only);
  }
  return total;
}

std::size_t count_params(const Strategy& strategy, bool trainable_only) {
  return strategy.param_count(trainable_only, true);
}

std::vector<CheckpointEntry> Strategy::checkpoint() const {
  std::vector<CheckpointEntry> out;
  out.push_back({std::string("#strategy=") + to_string(kind()), Tensor::scalar(1.0)});
  append(out, checkpoint_entries(base_.params(), "base/"));
  append_checkpoint(out);
  for (const auto& [id, st] : tasks_) {
    const std::string prefix = task_prefix(id) + "/";
    if (st->net) append(out, checkpoint_entries(st->net->params(), prefix + "net/"));
    if (st->merge) append(out, st->merge->checkpoint(prefix + "merge/"));
    for (std::size_t k = 0; k < st->adapters.size(); ++k) {
      append(out, checkpoint_entries(st->adapters[k].params(),
                                     prefix + "lateral" + std::to_string(k) + "/"));
    }
    append(out, checkpoint_entries(st->readout->params(), prefix + "readout/"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kinds

namespace {

Var base_features(Network& base, Tape& tape, const Var& x) { return as_rows(base.forward(tape, x)); }

class SideTune final : public Strategy {
 public:
  SideTune(StrategyConfig config, const Network& base) : Strategy(std::move(config), base) {}

 protected:
  void prepare(TaskState& st, const TaskSpec& task, Rng& rng, bool) override {
    const std::string prefix = task_prefix(task.task_id);
    const NetworkSpec& side = config_.side.layers.empty() ? base_.spec() : config_.side;
    Rng side_rng = rng.fork("side");
    st.net = std::make_unique<Network>(renamed(side, prefix + ".side", NetworkRole::side),
                                       side_rng);
    if (st.net->output_shape() != base_.output_shape()) {
      throw SpecError("side output " + to_string(st.net->output_shape()) +
                      " does not match base output " + to_string(base_.output_shape()));
    }
    const InputSampler sampler = row_sampler(task.train.inputs);
    Rng init_rng = rng.fork("side_init");
    st.init_log = init_side(*st.net, base_, config_.init, &sampler, init_rng);
    st.feature_width = base_.output_width();
    Rng merge_rng = rng.fork("merge");
    st.merge = std::make_unique<MergeOperator>(config_.merge, st.feature_width, prefix + ".merge",
                                               merge_rng);
  }

  Var features(TaskState& st, Tape& tape, const Var& x, std::uint64_t step) override {
    Var b = base_features(base_, tape, x);
    Var s = as_rows(st.net->forward(tape, x));
    return st.merge->forward(tape, b, s, step);
  }

  std::vector<Parameter*> trainable(TaskState& st) override {
    std::vector<Parameter*> params = st.net->params().trainable();
    for (Parameter* p : st.merge->trainable()) params.push_back(p);
    return params;
  }
};

class Features final : public Strategy {
 public:
  Features(StrategyConfig config, const Network& base) : Strategy(std::move(config), base) {}

 protected:
  void prepare(TaskState& st, const TaskSpec&, Rng&, bool) override {
    st.feature_width = base_.output_width();
  }
  Var features(TaskState&, Tape& tape, const Var& x, std::uint64_t) override {
    return base_features(base_, tape, x);
  }
  std::vector<Parameter*> trainable(TaskState&) override { return {}; }
};

/// One trainable network shared by every task.
class SharedNet : public Strategy {
 public:
  SharedNet(StrategyConfig config, const Network& base) : Strategy(std::move(config), base) {}

  Network* shared_network() noexcept override { return shared_ ? &*shared_ : nullptr; }

 protected:
  void adopt_base_copy() {
    shared_ = base_;
    for (Parameter& p : shared_->params()) p.frozen = false;
  }

  void prepare(TaskState& st, const TaskSpec&, Rng&, bool) override {
    st.feature_width = shared_->output_width();
  }
  Var features(TaskState& st, Tape& tape, const Var& x, std::uint64_t) override {
    Network& net = st.net ? *st.net : *shared_;
    return as_rows(net.forward(tape, x));
  }
  std::vector<Parameter*> trainable(TaskState&) override { return shared_->params().trainable(); }
  std::size_t shared_param_count() const override {
    return shared_ ? count_params(*shared_, false) : 0;
  }
  void append_checkpoint(std::vector<CheckpointEntry>& out) const override {
    if (shared_) append(out, checkpoint_entries(shared_->params(), "shared/"));
  }

  std::optional<Network> shared_;
};

class FineTune final : public SharedNet {
 public:
  FineTune(StrategyConfig config, const Network& base) : SharedNet(std::move(config), base) {
    adopt_base_copy();
  }
};

class Scratch final : public SharedNet {
 public:
  Scratch(StrategyConfig config, const Network& base) : SharedNet(std::move(config), base) {}

 protected:
  void prepare(TaskState& st, const TaskSpec&, Rng& rng, bool training) override {
    const NetworkSpec spec =
        renamed(config_.fresh_net.value_or(base_.spec()), "scratch", NetworkRole::side);
    Rng net_rng = rng.fork("scratch");
    if (shared_) {
      st.feature_width = shared_->output_width();
    } else if (training) {
      shared_.emplace(spec, net_rng);
      st.feature_width = shared_->output_width();
    } else {
      st.net = std::make_unique<Network>(spec, net_rng);
      st.feature_width = st.net->output_width();
    }
  }
};

class Ewc final : public SharedNet {
 public:
  Ewc(StrategyConfig config, const Network& base) : SharedNet(std::move(config), base) {
    adopt_base_copy();
    if (config_.ewc.lambda < 0.0 || config_.ewc.gamma < 0.0 || config_.ewc.fisher_samples == 0 ||
        config_.ewc.fisher_batch == 0) {
      throw ConfigError("ewc: lambda and gamma must be >= 0, fisher_samples and fisher_batch > 0");
    }
  }

  void consolidate() override {
    if (!last_) throw ContractError("ewc: consolidation requested before any task was trained");
    TaskState& st = state(last_->task_id);
    std::vector<Parameter*> params = shared_->params().all();
    std::vector<Tensor> fisher;
    for (Parameter* p : params) fisher.emplace_back(p->value.shape(), 0.0);

    const std::size_t n = last_->train.size();
    const std::size_t samples = config_.ewc.fisher_samples;
    const std::size_t chunk = std::min(config_.ewc.fisher_batch, samples);
    Rng rng = Rng(last_->seed).fork("fisher");
    const std::vector<std::size_t> order = rng.permutation(n);
    std::size_t chunks = 0;
    for (std::size_t begin = 0; begin < samples; begin += chunk) {
      std::vector<std::size_t> rows;
      for (std::size_t k = begin; k < std::min(begin + chunk, samples); ++k) rows.push_back(order[k % n]);
      const Tensor x = last_->train.inputs.gather_rows(rows);
      const Tensor y = last_->train.targets.gather_rows(rows);
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var out = st.readout->forward(tape, as_rows(shared_->forward(tape, tape.constant_ref(x))));
      tape.backward(task_loss(st, out, y));
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double* g = params[i]->grad.raw();
        double* f = fisher[i].raw();
        for (std::size_t j = 0; j < fisher[i].size(); ++j) f[j] += g[j] * g[j];
      }
      ++chunks;
    }
    for (Parameter* p : params) p->zero_grad();
    st.readout->params().zero_grad();
    const double inv = 1.0 / static_cast<double>(chunks);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* f = fisher[i].raw();
      if (ewc_.consolidations == 0) {
        for (std::size_t j = 0; j < fisher[i].size(); ++j) f[j] *= inv;
      } else {
        const double* old = ewc_.fisher[i].raw();
        for (std::size_t j = 0; j < fisher[i].size(); ++j) {
          f[j] = config_.ewc.gamma * old[j] + f[j] * inv;
        }
      }
    }
    ewc_.fisher = std::move(fisher);
    ewc_.anchor.clear();
    for (Parameter* p : params) ewc_.anchor.push_back(p->value);
    ++ewc_.consolidations;
  }

  const EwcState& ewc_state() const noexcept { return ewc_; }

 protected:
  Var extra_loss(Tape& tape) override {
    if (ewc_.consolidations == 0 || config_.ewc.lambda == 0.0) return {};
    std::vector<Parameter*> params = shared_->params().all();
    return ewc_penalty(tape, ewc_, params, config_.ewc.lambda);
  }

  void after_training(TaskState&, const TaskSpec& task, Rng&) override {
    last_.emplace();
    last_->task_id = task.task_id;
    last_->seed = task.seed;
    last_->train = task.train;
    consolidate();
  }

  void append_checkpoint(std::vector<CheckpointEntry>& out) const override {
    SharedNet::append_checkpoint(out);
    for (std::size_t i = 0; i < ewc_.fisher.size(); ++i) {
      out.push_back({"ewc/fisher" + std::to_string(i), ewc_.fisher[i]});
      out.push_back({"ewc/anchor" + std::to_string(i), ewc_.anchor[i]});
    }
  }

 private:
  struct LastTask {
    std::size_t task_id = 0;
    std::uint64_t seed = 0;
    Dataset train;
  };
  std::optional<LastTask> last_;
  EwcState ewc_;
};

class Psp final : public SharedNet {
 public:
  Psp(StrategyConfig config, const Network& base) : SharedNet(std::move(config), base) {
    adopt_base_copy();
  }

 protected:
  void prepare(TaskState& st, const TaskSpec&, Rng& rng, bool) override {
    Rng key_rng = rng.fork("psp_key");
    st.key = psp_random_key(shared_->spec(), key_rng);
    st.feature_width = shared_->output_width();
  }
  void enter_task(TaskState& st) override { psp_apply_key(*shared_, st.key); }
  void leave_task(TaskState& st) override { psp_apply_key(*shared_, st.key); }
};

class PnnLite final : public Strategy {
 public:
  PnnLite(StrategyConfig config, const Network& base) : Strategy(std::move(config), base) {
    for (const auto& layer : base_.spec().layers) {
      if (layer.kind == LayerKind::conv2d || layer.kind == LayerKind::avgpool2d) {
        throw SpecError("pnn_lite: lateral connections need a fully connected base");
      }
    }
  }

 protected:
  void prepare(TaskState& st, const TaskSpec& task, Rng& rng, bool) override {
    const std::string prefix = task_prefix(task.task_id);
    const NetworkSpec& column = config_.side.layers.empty() ? base_.spec() : config_.side;
    for (const auto& layer : column.layers) {
      if (layer.kind == LayerKind::conv2d || layer.kind == LayerKind::avgpool2d) {
        throw SpecError("pnn_lite: the column must be fully connected");
      }
    }
    Rng column_rng = rng.fork("side");
    st.net = std::make_unique<Network>(renamed(column, prefix + ".column", NetworkRole::side),
                                       column_rng);
    if (st.net->output_shape() != base_.output_shape()) {
      throw SpecError("pnn_lite column output " + to_string(st.net->output_shape()) +
                      " does not match base output " + to_string(base_.output_shape()));
    }
    const InputSampler sampler = row_sampler(task.train.inputs);
    Rng init_rng = rng.fork("side_init");
    st.init_log = init_side(*st.net, base_, config_.init, &sampler, init_rng);

    // Base tap widths, and the input width of each column layer after the first.
    std::vector<std::size_t> tap_widths;
    const std::vector<Shape> base_shapes = layer_shapes(base_.spec());
    for (std::size_t i = 0; i < base_.spec().layers.size(); ++i) {
      if (base_.spec().layers[i].is_activation()) tap_widths.push_back(numel(base_shapes[i]));
    }
    std::vector<std::size_t> column_inputs;
    bool first = true;
    for (const auto& layer : column.layers) {
      if (!layer.has_params()) continue;
      if (!first) column_inputs.push_back(layer.in);
      first = false;
    }
    const std::size_t laterals = std::min(tap_widths.size(), column_inputs.size());
    Rng lateral_rng = rng.fork("laterals");
    for (std::size_t k = 0; k < laterals; ++k) {
      Rng r = lateral_rng.fork(k);
      Network adapter(NetworkSpec{prefix + ".lateral" + std::to_string(k), NetworkRole::merge_internal,
                                  {tap_widths[k]}, {LayerSpec::linear(tap_widths[k], column_inputs[k], false)}},
                      r);
      if (config_.zero_init_laterals) adapter.zero_final_layer();
      st.adapters.push_back(std::move(adapter));
    }
    st.feature_width = base_.output_width();
    Rng merge_rng = rng.fork("merge");
    st.merge = std::make_unique<MergeOperator>(config_.merge, st.feature_width, prefix + ".merge",
                                               merge_rng);
  }

  Var features(TaskState& st, Tape& tape, const Var& x, std::uint64_t step) override {
    Network::Trace trace = base_.forward_trace(tape, x);
    std::vector<Var> taps;
    for (const Var& h : trace.hidden) taps.push_back(as_rows(h));
    Var s = as_rows(pnn_lateral_forward(tape, taps, *st.net, st.adapters, as_rows(x)));
    return st.merge->forward(tape, as_rows(trace.output), s, step);
  }

  std::vector<Parameter*> trainable(TaskState& st) override {
    std::vector<Parameter*> params = st.net->params().trainable();
    for (Network& a : st.adapters) {
      for (Parameter* p : a.params().trainable()) params.push_back(p);
    }
    for (Parameter* p : st.merge->trainable()) params.push_back(p);
    return params;
  }
};

class Independent final : public Strategy {
 public:
  Independent(StrategyConfig config, const Network& base) : Strategy(std::move(config), base) {}

 protected:
  void prepare(TaskState& st, const TaskSpec& task, Rng& rng, bool) override {
    Rng net_rng = rng.fork("net");
    st.net = std::make_unique<Network>(
        renamed(config_.fresh_net.value_or(base_.spec()), task_prefix(task.task_id) + ".net",
                NetworkRole::side),
        net_rng);
    st.feature_width = st.net->output_width();
  }
  Var features(TaskState& st, Tape& tape, const Var& x, std::uint64_t) override {
    return as_rows(st.net->forward(tape, x));
  }
  std::vector<Parameter*> trainable(TaskState& st) override { return st.net->params().trainable(); }
};

}  // namespace

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& config, const Network& base) {
  config.merge.alpha.schedule.validate();
  switch (config.kind) {
    case StrategyKind::sidetune: return std::make_unique<SideTune>(config, base);
    case StrategyKind::finetune: return std::make_unique<FineTune>(config, base);
    case StrategyKind::features: return std::make_unique<Features>(config, base);
    case StrategyKind::scratch: return std::make_unique<Scratch>(config, base);
    case StrategyKind::ewc: return std::make_unique<Ewc>(config, base);
    case StrategyKind::psp: return std::make_unique<Psp>(config, base);
    case StrategyKind::pnn_lite: return std::make_unique<PnnLite>(config, base);
    case StrategyKind::independent: return std::make_unique<Independent>(config, base);
  }
  throw ConfigError("unknown strategy kind");
}

// ---------------------------------------------------------------------------
// Boosting

BoostStack::BoostStack(const Network& base, BoostConfig config)
    : base_(base), config_(std::move(config)) {
  base_.freeze();
  if (config_.alpha < 0.0 || config_.alpha > 1.0) {
    throw ConfigError("boost: alpha must lie in [0, 1], got " + std::to_string(config_.alpha));
  }
  if (config_.batch_size == 0) throw ConfigError("boost: batch_size must be positive");
}

Var BoostStack::output(Tape& tape, const Var& x, Network* training) {
  Var b = as_rows(base_.forward(tape, x));
  Var s;
  auto add_member = [&](Network& m) {
    Var out = as_rows(m.forward(tape, x));
    s = s.valid() ? ops::add(s, out) : out;
  };
  for (auto& m : members_) add_member(*m);
  if (training != nullptr) add_member(*training);
  if (!s.valid()) s = tape.constant(Tensor(b.shape(), 0.0));
  return readout_->forward(tape, merge_->forward(tape, b, s, 0));
}

Metric BoostStack::evaluate_data(const Dataset& data) {
  return evaluate_dataset(kind_, config_.regression_loss, data,
                          [&](Tape& tape, const Var& x) { return output(tape, x, nullptr); });
}

BoostResult BoostStack::fit(const TaskSpec& task, std::size_t num_members, std::size_t steps_each,
                            Rng rng) {
  if (!members_.empty()) throw ContractError("boost: stack was already fit");
  if (task.input_shape != base_.spec().input_shape) {
    throw TaskError("boost: task input shape " + to_string(task.input_shape) +
                    " does not match the base input " + to_string(base_.spec().input_shape));
  }
  kind_ = task.kind;
  const std::string prefix = task_prefix(task.task_id);
  const std::size_t width = base_.output_width();
  readout_ = std::make_unique<Network>(
      readout_for(width, task.outputs, prefix + ".readout", rng.fork("readout")));
  MergeConfig merge_config;
  merge_config.kind = MergeKind::alpha_blend;
  merge_config.alpha.mode = AlphaMode::scheduled;
  merge_config.alpha.schedule = AlphaCurriculum::constant(config_.alpha);
  Rng merge_rng = rng.fork("merge");
  merge_ = std::make_unique<MergeOperator>(merge_config, width, prefix + ".merge", merge_rng);

  BoostResult result;
  result.initial_loss = evaluate_data(task.train).loss;
  double previous = result.initial_loss;
  const InputSampler sampler = row_sampler(task.train.inputs);

  for (std::size_t j = 1; j <= num_members; ++j) {
    const Rng member_rng = j == 1 ? rng : rng.fork("member").fork(j);
    Rng side_rng = member_rng.fork("side");
    auto member = std::make_unique<Network>(
        renamed(config_.member, prefix + ".member" + std::to_string(j), NetworkRole::side), side_rng);
    if (member->output_shape() != base_.output_shape()) {
      throw SpecError("boost member output " + to_string(member->output_shape()) +
                      " does not match base output " + to_string(base_.output_shape()));
    }
    Rng init_rng = member_rng.fork("side_init");
    init_side(*member, base_, config_.init, &sampler, init_rng);

    std::vector<Tensor> readout_snapshot;
    for (const Parameter& p : readout_->params()) readout_snapshot.push_back(p.value);

    std::vector<Parameter*> params = member->params().trainable();
    for (Parameter* p : readout_->params().trainable()) params.push_back(p);
    Optimizer opt(config_.optimizer, params);
    Batcher batcher(task.train.size(), config_.batch_size, member_rng.fork("batches"));
    for (std::size_t step = 0; step < steps_each; ++step) {
      const std::vector<std::size_t> rows = batcher.next();
      const Tensor x = task.train.inputs.gather_rows(rows);
      const Tensor y = task.train.targets.gather_rows(rows);
      Tape tape;
      Var loss = loss_for(kind_, config_.regression_loss,
                          output(tape, tape.constant_ref(x), member.get()), y);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
    opt.zero_grad();
    member->freeze();
    members_.push_back(std::move(member));

    double loss = evaluate_data(task.train).loss;
    bool accepted = true;
    if (!(loss <= previous)) {
      members_.back()->zero_final_layer();
      std::size_t i = 0;
      for (Parameter& p : readout_->params()) p.value = readout_snapshot[i++];
      loss = evaluate_data(task.train).loss;
      accepted = false;
    }
    result.member_losses.push_back(loss);
    result.accepted.push_back(accepted);
    previous = loss;
  }
  return result;
}

Metric BoostStack::evaluate(const TaskSpec& task, Split split) {
  if (!readout_) throw ContractError("boost: evaluate before fit");
  return evaluate_data(split == Split::train ? task.train : task.val);
}

std::size_t BoostStack::trainable_param_count() const {
  std::size_t total = readout_ ? count_params(*readout_, false) : 0;
  for (const auto& m : members_) total += count_params(*m, false);
  return total;
}

DeepVsStack compare_deep_vs_stack(const Network& base, const TaskSpec& task,
                                  const BoostConfig& shallow, const NetworkSpec& deep,
                                  std::size_t members, std::size_t steps_each, Rng rng) {
  DeepVsStack out;
  BoostStack stack(base, shallow);
  BoostResult sr = stack.fit(task, members, steps_each, rng);
  out.stack_member_losses = sr.member_losses;
  out.stack_loss = sr.member_losses.empty() ? sr.initial_loss : sr.member_losses.back();
  out.stack_params = stack.trainable_param_count();

  BoostConfig deep_config = shallow;
  deep_config.member = deep;
  BoostStack single(base, deep_config);
  BoostResult dr = single.fit(task, 1, members * steps_each, rng);
  out.deep_loss = dr.member_losses.back();
  out.deep_params = single.trainable_param_count();
  return out;
}

}  // namespace sidetune
