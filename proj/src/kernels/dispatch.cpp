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

#include <cstdlib>
#include <string_view>

#include "sidetune/kernels.hpp"

namespace sidetune::kernels {

#if defined(SIDETUNE_HAVE_AVX2)
namespace detail {
const KernelTable& avx2_kernels() noexcept;
}
#endif

const KernelTable* avx2_table() noexcept {
#if defined(SIDETUNE_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &detail::avx2_kernels() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* initial_table() noexcept {
  const char* forced = std::getenv("SIDETUNE_KERNELS");
  if (forced != nullptr && std::string_view(forced) == "scalar") return &scalar_table();
  if (const KernelTable* wide = avx2_table()) return wide;
  return &scalar_table();
}

const KernelTable*& current() noexcept {
  static const KernelTable* table = initial_table();
  return table;
}

}  // namespace

const KernelTable& active() noexcept { return *current(); }

bool select(std::string_view name) noexcept {
  if (name == "scalar") {
    current() = &scalar_table();
    return true;
  }
  if (name == "avx2") {
    if (const KernelTable* wide = avx2_table()) {
      current() = wide;
      return true;
    }
  }
  return false;
}

}  // namespace sidetune::kernels
