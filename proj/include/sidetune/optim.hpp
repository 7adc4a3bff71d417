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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sidetune/tape.hpp"

namespace sidetune {

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order optimizer over a fixed parameter list. Frozen parameters are
/// skipped. Gradients are not cleared by step(); call zero_grad().
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Parameter*> params);

  void step();
  void zero_grad();

  std::uint64_t step_count() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }
  std::span<Parameter* const> params() const noexcept { return params_; }

 private:
  OptimizerConfig config_;
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
  // beta^t, kept as running products so the correction is pure IEEE multiply.
  double beta1_power_ = 1.0;
  double beta2_power_ = 1.0;
};

}  // namespace sidetune
