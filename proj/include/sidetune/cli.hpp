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

#include <exception>
#include <ostream>
#include <span>
#include <string>

namespace sidetune {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Maps an exception to the process exit code: configuration, spec, scheme,
/// key and dimension errors give 2; task, format and filesystem errors give
/// 3; numeric errors give 4; anything else gives 1.
int exit_code_for(const std::exception& e) noexcept;

/// Entry point of the `sidetune` tool. args excludes the program name.
/// Progress and diagnostics go to err, tables and summaries to out.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace sidetune
