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
#include <functional>
#include <span>
#include <string>

#include "sidetune/tape.hpp"

namespace sidetune {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::size_t checked = 0;
  /// "<param>[<index>]" of the worst element, empty when nothing was checked.
  std::string worst;
};

/// Builds a fresh tape per evaluation and returns the scalar loss on it.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares backward() against a fourth-order central difference
///   (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h
/// for every element of every non-frozen parameter. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8); pass iff the maximum is below `tolerance`.
GradCheckReport grad_check(std::span<Parameter* const> params, const LossBuilder& loss,
                           double tolerance = 1e-5, double step = 1e-4);

}  // namespace sidetune
