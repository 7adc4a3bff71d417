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
#include <deque>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sidetune/optim.hpp"
#include "sidetune/rng.hpp"
#include "sidetune/tape.hpp"
#include "sidetune/tensor.hpp"

namespace sidetune {

enum class LayerKind { linear, conv2d, relu, tanh, avgpool2d, flatten };

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  /// Features for linear, channels for conv2d.
  std::size_t in = 0;
  std::size_t out = 0;
  /// conv2d and avgpool2d only.
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool bias = true;

  static LayerSpec linear(std::size_t in, std::size_t out, bool bias = true);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride = 1, std::size_t pad = 0, bool bias = true);
  static LayerSpec relu();
  static LayerSpec tanh();
  static LayerSpec avgpool2d(std::size_t kernel, std::size_t stride);
  static LayerSpec flatten();

  bool has_params() const noexcept {
    return kind == LayerKind::linear || kind == LayerKind::conv2d;
  }
  bool is_activation() const noexcept {
    return kind == LayerKind::relu || kind == LayerKind::tanh;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class NetworkRole { base, side, readout, merge_internal };

const char* to_string(NetworkRole role);

struct NetworkSpec {
  std::string name;
  NetworkRole role = NetworkRole::base;
  /// Per-example input shape (no batch axis).
  Shape input_shape;
  std::vector<LayerSpec> layers;

  /// Per-example output shape. Throws SpecError naming the first boundary
  /// whose shapes do not compose.
  Shape output_shape() const;

  /// Linear layers of the given widths joined by `activation`; the last layer
  /// has no activation.
  static NetworkSpec mlp(std::string name, NetworkRole role, std::size_t in,
                         const std::vector<std::size_t>& hidden, std::size_t out,
                         LayerKind activation = LayerKind::relu);

  /// Same layers and input shape; names and roles may differ.
  bool same_architecture(const NetworkSpec& other) const {
    return input_shape == other.input_shape && layers == other.layers;
  }
};

/// Named parameters in insertion order. References stay valid as entries are
/// added.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  Parameter& entry(std::size_t index) { return entries_.at(index); }
  const Parameter& entry(std::size_t index) const { return entries_.at(index); }

  std::size_t size() const noexcept { return entries_.size(); }
  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  /// Scalar count, optionally excluding frozen entries.
  std::size_t count(bool trainable_only = false) const;
  std::vector<Parameter*> trainable();
  std::vector<Parameter*> all();

  void freeze();
  void zero_grad();
  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;
  /// All values concatenated in entry order.
  std::vector<double> flat_values() const;
  /// Copies values entry by entry; names may differ but shapes must match.
  void copy_values_from(const ParamStore& other);

 private:
  std::deque<Parameter> entries_;
};

/// Layer stack with its parameters. Linear weights are [in, out] so that
/// y = x W + b; conv weights are [out, in, k, k].
class Network {
 public:
  Network() = default;
  /// Allocates parameters and applies Xavier-uniform initialization.
  Network(NetworkSpec spec, Rng& rng);

  const NetworkSpec& spec() const noexcept { return spec_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  Shape output_shape() const { return output_shape_; }
  std::size_t output_width() const { return numel(output_shape_); }
  std::size_t layer_count() const noexcept { return spec_.layers.size(); }

  /// x has shape [batch, input_shape...].
  Var forward(Tape& tape, const Var& x);

  struct Trace {
    Var output;
    /// Output of every activation layer, in order.
    std::vector<Var> hidden;
  };
  Trace forward_trace(Tape& tape, const Var& x);

  /// One layer; used by callers that splice extra inputs between layers.
  Var apply_layer(Tape& tape, std::size_t index, const Var& x);
  void check_input(const Shape& batch_shape) const;

  /// Forward pass without gradient bookkeeping kept.
  Tensor predict(const Tensor& x);

  void freeze() { params_.freeze(); }
  /// Re-draws all parameters: Xavier-uniform weights, zero biases.
  void reinitialize(Rng& rng);
  /// Zeros the last parameterized layer so the output is identically zero
  /// (also when trailed by relu/tanh/pooling).
  void zero_final_layer();

 private:
  NetworkSpec spec_;
  Shape output_shape_;
  ParamStore params_;
  // Per layer: index into params_, or kNone.
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> weight_slot_;
  std::vector<std::size_t> bias_slot_;
};

Network build_network(const NetworkSpec& spec, Rng& rng);

std::size_t count_params(const Network& net, bool trainable_only);

enum class InitKind { xavier, copy_base, low_energy, distill };

const char* to_string(InitKind kind);

struct DistillBudget {
  std::size_t steps = 2000;
  double lr = 1e-3;
  std::size_t batch = 32;
};

struct InitScheme {
  InitKind kind = InitKind::xavier;
  DistillBudget distill;
};

/// Draws a batch of unlabeled inputs, shape [batch, input_shape...].
using InputSampler = std::function<Tensor(Rng&, std::size_t batch)>;

struct InitLog {
  /// Distillation MSE on a fixed probe batch, every 100 steps and at the end.
  std::vector<double> distill_checkpoints;
};

/// Applies a side-network initialization scheme relative to `base`.
/// copy_base needs identical architectures; distill needs a sampler and
/// matching output shapes (SchemeError otherwise).
InitLog init_side(Network& side, Network& base, const InitScheme& scheme,
                  const InputSampler* sampler, Rng& rng);

/// One tensor in a checkpoint file.
struct CheckpointEntry {
  std::string id;
  Tensor value;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "STNT", u32 version, then per entry: u32 id length, id bytes,
/// u32 rank, u64 dims[rank], f64 values; all little-endian. Written via a
/// temporary file and rename.
void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
/// Throws FormatError with the byte offset on bad magic, version or truncation.
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

std::vector<CheckpointEntry> checkpoint_entries(const ParamStore& store, std::string_view prefix);
/// Copies checkpoint values back into a store by "<prefix><name>" lookup.
void restore_params(ParamStore& store, std::span<const CheckpointEntry> entries,
                    std::string_view prefix);

}  // namespace sidetune
