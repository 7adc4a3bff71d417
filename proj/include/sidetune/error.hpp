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

#include <stdexcept>
#include <string>

namespace sidetune {

enum class ErrorKind {
  dimension,
  numeric,
  contract,
  spec,
  scheme,
  task,
  config,
  format,
  key,
};

const char* to_string(ErrorKind kind);

/// Base of every exception thrown by the library. The kind decides the CLI
/// exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SIDETUNE_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  }

SIDETUNE_DEFINE_ERROR(DimensionError, dimension);
SIDETUNE_DEFINE_ERROR(NumericError, numeric);
SIDETUNE_DEFINE_ERROR(ContractError, contract);
SIDETUNE_DEFINE_ERROR(SpecError, spec);
SIDETUNE_DEFINE_ERROR(SchemeError, scheme);
SIDETUNE_DEFINE_ERROR(TaskError, task);
SIDETUNE_DEFINE_ERROR(ConfigError, config);
SIDETUNE_DEFINE_ERROR(FormatError, format);
SIDETUNE_DEFINE_ERROR(KeyError, key);

#undef SIDETUNE_DEFINE_ERROR

}  // namespace sidetune
