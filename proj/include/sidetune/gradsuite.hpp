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
#include <string>
#include <vector>

#include "sidetune/gradcheck.hpp"

namespace sidetune {

struct GradCaseResult {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct GradSuiteReport {
  std::vector<GradCaseResult> results;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Names of the cases, in execution order.
std::vector<std::string> grad_suite_cases();

/// Runs every case for seeds first_seed .. first_seed + seeds - 1. Inputs that
/// land within a small margin of a ReLU or L1 kink are redrawn from the case's
/// stream so finite differences stay on one linear piece.
GradSuiteReport run_grad_suite(std::size_t seeds = 20, std::uint64_t first_seed = 0,
                               double tolerance = 1e-5);

}  // namespace sidetune
