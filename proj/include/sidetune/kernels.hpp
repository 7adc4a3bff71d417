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
#include <string_view>

// Data-parallel inner loops. Each kernel has a scalar reference and, where the
// target supports it, an AVX2 variant; the variant is chosen once at startup.
// Every variant performs the same IEEE operations in the same per-element
// order (no FMA, no reassociation), so all variants agree bit for bit.

namespace sidetune::kernels {

struct KernelTable {
  const char* name;

  /// c[m x n] += a[m x k] * b[k x n], row-major, accumulating over k in order.
  void (*gemm)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
               double* c);
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*sub)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  /// out += x * y
  void (*mul_acc)(std::size_t n, const double* x, const double* y, double* out);
  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  /// out = alpha * x
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
  /// out = alpha * b + beta * s
  void (*blend)(std::size_t n, double alpha, const double* b, double beta, const double* s,
                double* out);
  void (*relu)(std::size_t n, const double* x, double* out);
  /// grad_in += (x > 0 ? grad_out : 0)
  void (*relu_backward)(std::size_t n, const double* x, const double* grad_out,
                        double* grad_in);
  /// Bias-corrected Adam update of one parameter buffer.
  void (*adam)(std::size_t n, double* param, const double* grad, double* m, double* v,
               double beta1, double beta2, double correction1, double correction2, double lr,
               double eps);
};

const KernelTable& scalar_table() noexcept;
/// nullptr when the build or the CPU lacks AVX2.
const KernelTable* avx2_table() noexcept;

/// Table used by the library. Defaults to the widest supported variant;
/// SIDETUNE_KERNELS=scalar forces the reference kernels.
const KernelTable& active() noexcept;

/// Overrides the active table by name ("scalar" or "avx2"). Returns false if
/// the variant is unavailable. Not thread-safe; call before any compute.
bool select(std::string_view name) noexcept;

}  // namespace sidetune::kernels
