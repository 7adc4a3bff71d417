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
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sidetune/harness.hpp"
#include "sidetune/nets.hpp"
#include "sidetune/strategies.hpp"
#include "sidetune/tasks.hpp"

namespace sidetune {

inline constexpr int kSchemaVersion = 1;

/// The published experiment schema (JSON Schema, draft 2020-12 subset).
std::string_view experiment_schema();

/// Supported keywords: $ref (local), type, enum, minimum, maximum,
/// exclusiveMinimum, exclusiveMaximum, minLength, minItems, items,
/// properties, required, additionalProperties (false only). Returns one
/// diagnostic per violation as "<json pointer>: <message>".
std::vector<std::string> validate_schema(const nlohmann::json& instance,
                                         const nlohmann::json& schema);

struct ArchConfig {
  /// "mlp" uses hidden/features/activation; "layers" uses layers verbatim.
  std::string type = "mlp";
  std::vector<std::size_t> hidden{32};
  std::size_t features = 16;
  LayerKind activation = LayerKind::relu;
  std::vector<LayerSpec> layers;

  /// An mlp on a multi-axis input starts with a flatten layer.
  NetworkSpec build(std::string name, NetworkRole role, const Shape& input_shape) const;
};

struct PretrainConfig {
  /// none: random frozen base. source: the family's source task (the
  /// teacher task for rotated regression). first_task: task 1.
  std::string source = "source";
  std::size_t steps = 300;
  double lr = 1e-3;
};

struct FilesConfig {
  std::string format = "idx";
  std::string train_inputs, train_labels, val_inputs, val_labels;
  std::string train, val;
  std::string derive = "permuted";
  std::optional<std::size_t> max_train, max_val;
};

struct SequenceConfig {
  SequenceFamily family = SequenceFamily::permuted;
  std::size_t num_tasks = 5;
  std::size_t classes_per_task = 2;
  GaussianTaskConfig gaussian;
  std::size_t reg_in_dim = 8;
  std::size_t reg_out_dim = 8;
  RotatedRegressionConfig regression;
  std::optional<FilesConfig> files;
};

/// Strategy settings as written; architectures resolve against the input.
struct StrategyEntry {
  StrategyConfig config;
  std::optional<ArchConfig> side;
  std::optional<ArchConfig> fresh_net;
};

struct MethodConfig {
  std::string name;
  StrategyEntry strategy;
  std::uint64_t seed_offset = 0;
  std::optional<std::size_t> steps_per_task;
  std::optional<std::size_t> batch_size;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
  std::size_t jobs = 1;
  bool rigidity = false;
  bool checkpoints = true;
  std::size_t steps_per_task = 200;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  RegressionLoss regression_loss = RegressionLoss::mse;
  SequenceConfig sequence;
  ArchConfig base_arch;
  PretrainConfig pretrain;
  std::optional<ArchConfig> side;
  std::optional<StrategyEntry> strategy;
  std::vector<MethodConfig> methods;
};

/// Validates against the schema, then fills defaults. Throws ConfigError
/// listing every diagnostic.
ExperimentConfig parse_experiment(const nlohmann::json& doc);
/// ConfigError on unreadable files or malformed JSON as well.
ExperimentConfig load_experiment(const std::filesystem::path& path);
/// Fully resolved document; parse_experiment(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& config);

/// Resolved experiment: loads file-backed data once and builds the sequence
/// and base for any seed.
class ExperimentPlan {
 public:
  explicit ExperimentPlan(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  NetworkSpec base_spec() const;

  /// `strategy` when present, else the single entry of `methods` with its
  /// own batch size if it sets one.
  MethodSpec run_method() const;
  /// Step budget of run_method().
  std::size_t run_steps_per_task() const;
  /// Every entry of `methods` (or `strategy` alone). ConfigError when a
  /// method's budget differs from the shared one, or names repeat.
  std::vector<MethodSpec> compare_methods() const;

  /// Task sequence only; no base pretraining.
  SequenceSpec build_sequence(std::uint64_t seed) const;
  Experiment build(std::uint64_t seed) const;
  ExperimentBuilder builder() const;

 private:
  MethodSpec resolve(const std::string& name, const StrategyEntry& entry,
                     std::uint64_t seed_offset) const;
  TaskSpec file_source() const;
  /// Sequence plus the pretraining source task of the seed.
  std::pair<SequenceSpec, TaskSpec> sequence_and_source(std::uint64_t seed) const;

  ExperimentConfig config_;
  Shape input_shape_;
  std::shared_ptr<const TaskSpec> file_task_;
};

}  // namespace sidetune
