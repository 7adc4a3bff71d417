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

#include <span>
#include <string>
#include <string_view>

#include "sidetune/harness.hpp"

namespace sidetune {

/// Renders a results table as a standalone SVG with three panels: the grid
/// metric per task against training stage, forgetting bars per task and
/// rigidity against task position. Each series is a <polyline> or group of
/// <rect> tagged with data-run and data-task attributes. Coordinates use
/// fixed three-decimal formatting so equal inputs give identical bytes.
/// A panel without rows still draws its axes and a "no data" label.
std::string render_results_svg(std::span<const ResultRow> rows, std::string_view title = "");

}  // namespace sidetune
