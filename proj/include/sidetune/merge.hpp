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
#include <optional>
#include <string>
#include <vector>

#include "sidetune/nets.hpp"
#include "sidetune/rng.hpp"
#include "sidetune/tape.hpp"

namespace sidetune {

enum class CurriculumKind { constant, stage_switch, hyperbolic };

/// Fixed schedule for the blend weight, clocked in optimizer steps.
struct AlphaCurriculum {
  CurriculumKind kind = CurriculumKind::constant;
  /// c for constant, k for hyperbolic.
  double value = 0.5;
  /// T for stage_switch: alpha is 1 before step T and 0 from T on.
  std::uint64_t switch_step = 0;

  static AlphaCurriculum constant(double c);
  static AlphaCurriculum stage_switch(std::uint64_t switch_step);
  static AlphaCurriculum hyperbolic(double k);

  /// Throws ConfigError on c outside [0, 1] or k <= 0.
  void validate() const;
  /// constant -> c; stage_switch -> step < T ? 1 : 0; hyperbolic -> k / (k + step).
  double at(std::uint64_t step) const;
};

enum class AlphaMode { learnable, scheduled };

struct AlphaConfig {
  AlphaMode mode = AlphaMode::learnable;
  /// Initial alpha for learnable mode; stored as logit so alpha = sigmoid(a).
  double init = 0.5;
  AlphaCurriculum schedule;
};

enum class MergeKind { alpha_blend, product, mlp_adapter, film };

const char* to_string(MergeKind kind);
const char* to_string(CurriculumKind kind);

struct MergeConfig {
  MergeKind kind = MergeKind::alpha_blend;
  AlphaConfig alpha;
};

/// Combines base features b and side features s into one representation:
///   alpha_blend   alpha * b + (1 - alpha) * s
///   product       b * s (element-wise)
///   mlp_adapter   F(b) + s, F = linear-relu-linear of the feature width
///   film          gamma(b) * s + beta(b), gamma/beta are linear heads on a
///                 shared linear-relu trunk; the gamma head's bias starts at 1
class MergeOperator {
 public:
  /// `feature_width` is the per-example element count of b and s.
  MergeOperator(const MergeConfig& config, std::size_t feature_width, std::string name, Rng& rng);

  MergeKind kind() const noexcept { return config_.kind; }
  const MergeConfig& config() const noexcept { return config_; }

  /// b and s must have the same shape; mlp_adapter and film need [batch, width].
  Var forward(Tape& tape, const Var& b, const Var& s, std::uint64_t step);

  /// Effective blend weight at `step`, always in [0, 1]. ContractError for
  /// operators other than alpha_blend.
  double alpha(std::uint64_t step) const;
  bool alpha_learnable() const noexcept { return alpha_logit_.has_value(); }
  Parameter* alpha_logit() noexcept { return alpha_logit_ ? &*alpha_logit_ : nullptr; }

  std::vector<Parameter*> trainable();
  std::size_t param_count(bool trainable_only) const;

  Network* adapter() noexcept { return adapter_ ? &*adapter_ : nullptr; }
  Network* film_trunk() noexcept { return film_trunk_ ? &*film_trunk_ : nullptr; }
  Network* film_gamma() noexcept { return film_gamma_ ? &*film_gamma_ : nullptr; }
  Network* film_beta() noexcept { return film_beta_ ? &*film_beta_ : nullptr; }

  std::vector<CheckpointEntry> checkpoint(std::string_view prefix) const;

 private:
  MergeConfig config_;
  std::size_t width_;
  std::string name_;
  std::optional<Parameter> alpha_logit_;
  std::optional<Network> adapter_;
  std::optional<Network> film_trunk_;
  std::optional<Network> film_gamma_;
  std::optional<Network> film_beta_;
};

}  // namespace sidetune
