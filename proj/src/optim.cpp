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

#include "sidetune/optim.hpp"

#include "sidetune/error.hpp"
#include "sidetune/kernels.hpp"

namespace sidetune {

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
  if (!(config_.lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (config_.kind == OptimizerKind::adam) {
    if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 &&
          config_.beta2 < 1.0 && config_.eps > 0.0)) {
      throw ConfigError("optimizer: adam betas must lie in [0, 1) and eps must be positive");
    }
  }
  for (Parameter* p : params_) {
    if (p == nullptr) throw ContractError("optimizer: null parameter");
    first_.emplace_back(config_.kind == OptimizerKind::adam ? p->value.size() : 0, 0.0);
    second_.emplace_back(config_.kind == OptimizerKind::adam ? p->value.size() : 0, 0.0);
  }
}

void Optimizer::step() {
  for (const Parameter* p : params_) {
    if (p->grad.size() != p->value.size() || p->grad.shape() != p->value.shape()) {
      throw ContractError("optimizer: parameter '" + p->name + "' has no matching gradient");
    }
  }
  ++steps_;
  const auto& k = kernels::active();
  if (config_.kind == OptimizerKind::sgd) {
    for (Parameter* p : params_) {
      if (p->frozen) continue;
      k.axpy(p->value.size(), -config_.lr, p->grad.raw(), p->value.raw());
    }
    return;
  }
  beta1_power_ *= config_.beta1;
  beta2_power_ *= config_.beta2;
  const double correction1 = 1.0 - beta1_power_;
  const double correction2 = 1.0 - beta2_power_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (p->frozen) continue;
    k.adam(p->value.size(), p->value.raw(), p->grad.raw(), first_[i].data(), second_[i].data(),
           config_.beta1, config_.beta2, correction1, correction2, config_.lr, config_.eps);
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace sidetune
