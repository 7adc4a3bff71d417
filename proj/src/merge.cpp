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

#include "sidetune/merge.hpp"

#include <cmath>

#include "sidetune/error.hpp"
#include "sidetune/ops.hpp"

namespace sidetune {

const char* to_string(MergeKind kind) {
  switch (kind) {
    case MergeKind::alpha_blend: return "alpha_blend";
    case MergeKind::product: return "product";
    case MergeKind::mlp_adapter: return "mlp_adapter";
    case MergeKind::film: return "film";
  }
  return "?";
}

const char* to_string(CurriculumKind kind) {
  switch (kind) {
    case CurriculumKind::constant: return "constant";
    case CurriculumKind::stage_switch: return "stage_switch";
    case CurriculumKind::hyperbolic: return "hyperbolic";
  }
  return "?";
}

AlphaCurriculum AlphaCurriculum::constant(double c) {
  AlphaCurriculum a;
  a.kind = CurriculumKind::constant;
  a.value = c;
  a.validate();
  return a;
}

AlphaCurriculum AlphaCurriculum::stage_switch(std::uint64_t switch_step) {
  AlphaCurriculum a;
  a.kind = CurriculumKind::stage_switch;
  a.switch_step = switch_step;
  return a;
}

AlphaCurriculum AlphaCurriculum::hyperbolic(double k) {
  AlphaCurriculum a;
  a.kind = CurriculumKind::hyperbolic;
  a.value = k;
  a.validate();
  return a;
}

void AlphaCurriculum::validate() const {
  if (kind == CurriculumKind::constant && !(value >= 0.0 && value <= 1.0)) {
    throw ConfigError("alpha curriculum: constant must lie in [0, 1], got " + std::to_string(value));
  }
  if (kind == CurriculumKind::hyperbolic && !(value > 0.0 && std::isfinite(value))) {
    throw ConfigError("alpha curriculum: hyperbolic k must be positive, got " + std::to_string(value));
  }
}

double AlphaCurriculum::at(std::uint64_t step) const {
  switch (kind) {
    case CurriculumKind::constant: return value;
    case CurriculumKind::stage_switch: return step < switch_step ? 1.0 : 0.0;
    case CurriculumKind::hyperbolic: return value / (value + static_cast<double>(step));
  }
  return value;
}

namespace {

double logistic(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

}  // namespace

MergeOperator::MergeOperator(const MergeConfig& config, std::size_t feature_width,
                             std::string name, Rng& rng)
    : config_(config), width_(feature_width), name_(std::move(name)) {
  if (width_ == 0) throw SpecError("merge '" + name_ + "': zero feature width");
  switch (config_.kind) {
    case MergeKind::alpha_blend:
      if (config_.alpha.mode == AlphaMode::learnable) {
        const double init = config_.alpha.init;
        if (!(init > 0.0 && init < 1.0)) {
          throw ConfigError("merge '" + name_ + "': learnable alpha init must lie in (0, 1)");
        }
        alpha_logit_.emplace(name_ + ".alpha_logit",
                             Tensor(Shape{1}, std::log(init / (1.0 - init))));
      } else {
        config_.alpha.schedule.validate();
      }
      break;
    case MergeKind::product:
      break;
    case MergeKind::mlp_adapter: {
      Rng r = rng.fork("adapter");
      adapter_.emplace(NetworkSpec::mlp(name_ + ".adapter", NetworkRole::merge_internal, width_,
                                        {width_}, width_),
                       r);
      break;
    }
    case MergeKind::film: {
      Rng r = rng.fork("film");
      NetworkSpec trunk;
      trunk.name = name_ + ".film_trunk";
      trunk.role = NetworkRole::merge_internal;
      trunk.input_shape = Shape{width_};
      trunk.layers = {LayerSpec::linear(width_, width_), LayerSpec::relu()};
      film_trunk_.emplace(trunk, r);
      NetworkSpec head = NetworkSpec::mlp(name_ + ".film_gamma", NetworkRole::merge_internal,
                                          width_, {}, width_);
      film_gamma_.emplace(head, r);
      head.name = name_ + ".film_beta";
      film_beta_.emplace(head, r);
      film_gamma_->params().entry(1).value.fill(1.0);
      break;
    }
  }
}

Var MergeOperator::forward(Tape& tape, const Var& b, const Var& s, std::uint64_t step) {
  if (b.shape() != s.shape()) {
    throw DimensionError("merge '" + name_ + "': base features " + to_string(b.shape()) +
                         " and side features " + to_string(s.shape()) + " differ");
  }
  const Shape& shape = b.shape();
  if (shape.empty() || numel(shape) / shape[0] != width_) {
    throw DimensionError("merge '" + name_ + "': features " + to_string(shape) +
                         " do not have width " + std::to_string(width_));
  }
  switch (config_.kind) {
    case MergeKind::alpha_blend: {
      Var alpha = alpha_logit_ ? ops::sigmoid(tape.param(*alpha_logit_))
                               : tape.constant(Tensor(Shape{1}, config_.alpha.schedule.at(step)));
      return ops::scalar_blend(alpha, b, s);
    }
    case MergeKind::product:
      return ops::mul(b, s);
    case MergeKind::mlp_adapter:
      if (shape.size() != 2) {
        throw DimensionError("merge '" + name_ + "': mlp_adapter needs [batch, width], got " +
                             to_string(shape));
      }
      return ops::add(adapter_->forward(tape, b), s);
    case MergeKind::film: {
      if (shape.size() != 2) {
        throw DimensionError("merge '" + name_ + "': film needs [batch, width], got " +
                             to_string(shape));
      }
      Var h = film_trunk_->forward(tape, b);
      Var gamma = film_gamma_->forward(tape, h);
      Var beta = film_beta_->forward(tape, h);
      return ops::add(ops::mul(gamma, s), beta);
    }
  }
  throw ContractError("merge: unknown kind");
}

double MergeOperator::alpha(std::uint64_t step) const {
  if (config_.kind != MergeKind::alpha_blend) {
    throw ContractError(std::string("merge '") + name_ + "': alpha requested from a " +
                        to_string(config_.kind) + " merge");
  }
  if (alpha_logit_) return logistic(alpha_logit_->value[0]);
  return config_.alpha.schedule.at(step);
}

std::vector<Parameter*> MergeOperator::trainable() {
  std::vector<Parameter*> out;
  if (alpha_logit_ && !alpha_logit_->frozen) out.push_back(&*alpha_logit_);
  for (std::optional<Network>* net : {&adapter_, &film_trunk_, &film_gamma_, &film_beta_}) {
    if (!*net) continue;
    for (Parameter* p : (*net)->params().trainable()) out.push_back(p);
  }
  return out;
}

std::size_t MergeOperator::param_count(bool trainable_only) const {
  std::size_t n = 0;
  if (alpha_logit_ && (!trainable_only || !alpha_logit_->frozen)) n += 1;
  for (const std::optional<Network>* net : {&adapter_, &film_trunk_, &film_gamma_, &film_beta_}) {
    if (*net) n += (*net)->params().count(trainable_only);
  }
  return n;
}

std::vector<CheckpointEntry> MergeOperator::checkpoint(std::string_view prefix) const {
  std::vector<CheckpointEntry> out;
  if (alpha_logit_) out.push_back({std::string(prefix) + alpha_logit_->name, alpha_logit_->value});
  for (const std::optional<Network>* net : {&adapter_, &film_trunk_, &film_gamma_, &film_beta_}) {
    if (!*net) continue;
    auto entries = checkpoint_entries((*net)->params(), prefix);
    out.insert(out.end(), entries.begin(), entries.end());
  }
  return out;
}

}  // namespace sidetune
