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
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sidetune/rng.hpp"
#include "sidetune/tensor.hpp"

namespace sidetune {

enum class TaskKind { classification, regression };

const char* to_string(TaskKind kind);

/// Per-feature standardization statistics (features flattened per example).
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const noexcept { return mean.empty(); }
};

struct Dataset {
  /// [n, input_shape...]
  Tensor inputs;
  /// Classification: [n] class indices. Regression: [n, out_dim].
  Tensor targets;
  /// Statistics the inputs were standardized with (train-split statistics).
  Normalization stats;
  bool normalized = false;

  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

struct TaskSpec {
  std::size_t task_id = 0;
  std::string name;
  TaskKind kind = TaskKind::classification;
  /// Classes for classification, output width for regression.
  std::size_t outputs = 0;
  Shape input_shape;
  Dataset train;
  Dataset val;
  std::uint64_t seed = 0;
  /// Input feature permutation relative to the source (permuted family).
  std::vector<std::size_t> permutation;
  /// Source class ids in local label order (split_class family).
  std::vector<std::size_t> source_classes;

  /// Shapes, label ranges and non-empty splits. Throws TaskError.
  void validate() const;
};

enum class SequenceFamily { permuted, split_class, rotated_regression, file_backed };

const char* to_string(SequenceFamily family);

struct SequenceSpec {
  SequenceFamily family = SequenceFamily::permuted;
  std::uint64_t seed = 0;
  std::vector<TaskSpec> tasks;

  std::size_t size() const noexcept { return tasks.size(); }
  /// At least one task, shared input shape, valid tasks.
  void validate() const;
};

Normalization fit_normalization(const Tensor& inputs);
void apply_normalization(Dataset& data, const Normalization& stats);
/// Fits on the train split and applies to both splits. ContractError if the
/// task was already normalized.
void normalize_task(TaskSpec& task);

/// True when no train row is bitwise equal to a val row.
bool splits_disjoint(const TaskSpec& task);

struct GaussianTaskConfig {
  std::size_t classes = 10;
  std::size_t in_dim = 16;
  std::size_t train_per_class = 64;
  std::size_t val_per_class = 32;
  std::size_t clusters_per_class = 2;
  double separation = 2.0;
  double noise = 1.0;
};

/// Balanced mixture-of-Gaussians classification task, normalized.
TaskSpec make_gaussian_task(const GaussianTaskConfig& config, Rng& rng);

/// Each task permutes the flattened input features by its own fixed random
/// permutation; the first task's is the identity. Stats are permuted with the
/// inputs. Task ids run 1..m.
SequenceSpec gen_permuted_tasks(const TaskSpec& source, std::size_t m, Rng& rng);

/// Disjoint random class partition; labels remapped to [0, classes_per_task).
SequenceSpec gen_split_class_tasks(const TaskSpec& source, std::size_t classes_per_task, Rng& rng);

struct RotatedRegressionConfig {
  std::size_t train_size = 256;
  std::size_t val_size = 256;
  double noise = 0.0;
  /// Rotation angle of the last task; the task at index j uses
  /// max_angle * j / (m - 1), so the first task is the teacher itself.
  double max_angle = std::numbers::pi / 2.0;
};

/// Shared teacher for the rotated-regression family: y = tanh(Q_j W x).
struct RotatedTeacher {
  Tensor weight;  // [out_dim, in_dim]
  Tensor basis;   // [out_dim, out_dim], orthogonal
  std::vector<double> angles;

  /// Q = U R(angle) U^T with R rotating consecutive coordinate pairs.
  /// `index` is the 0-based position in the sequence.
  Tensor rotation(std::size_t index) const;
  /// Noise-free targets for the task at `index`, inputs [n, in_dim].
  Tensor predict(std::size_t index, const Tensor& inputs) const;
};

struct RotatedSequence {
  SequenceSpec sequence;
  RotatedTeacher teacher;
};

RotatedSequence gen_rotated_regression(std::size_t m, std::size_t in_dim, std::size_t out_dim,
                                       const RotatedRegressionConfig& config, Rng& rng);

// IDX files: two zero bytes, element type, rank, big-endian u32 dims, payload.

enum class IdxType : std::uint8_t {
  u8 = 0x08,
  i8 = 0x09,
  i16 = 0x0B,
  i32 = 0x0C,
  f32 = 0x0D,
  f64 = 0x0E,
};

struct IdxArray {
  IdxType type = IdxType::u8;
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

/// Throws FormatError with the byte offset on bad magic or truncation.
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Inputs (rank 2 to 4) and labels (rank 1). u8 values are scaled to [0, 1];
/// rank-3 images [n, h, w] come back as [n, 1, h, w].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

enum class CifarVariant { cifar10, cifar100 };

/// CIFAR binary batches: 1 label byte (2 for cifar100, fine label kept) then
/// 3072 pixel bytes per record. Inputs [n, 3, 32, 32] in [0, 1].
Dataset load_cifar_bin(const std::filesystem::path& path, CifarVariant variant = CifarVariant::cifar10);

}  // namespace sidetune
