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

// Compiled with -mavx2 only; nothing here may run before the CPU check in
// dispatch.cpp. Tails fall back to the scalar expression for each element.

#include <immintrin.h>

#include <cmath>

#include "sidetune/kernels.hpp"

namespace sidetune::kernels::detail {

namespace {

constexpr std::size_t kLanes = 4;

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
          double* c) {
  const std::size_t n4 = n - n % kLanes;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d va = _mm256_set1_pd(aip);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j < n4; j += kLanes) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] = crow[j] + aip * brow[j];
    }
  }
}

template <typename VecOp, typename ScalarOp>
inline void binary(std::size_t n, const double* x, const double* y, double* out, VecOp vop,
                   ScalarOp sop) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = sop(x[i], y[i]);
}

void add(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d a, __m256d b) { return _mm256_add_pd(a, b); },
         [](double a, double b) { return a + b; });
}

void sub(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d a, __m256d b) { return _mm256_sub_pd(a, b); },
         [](double a, double b) { return a - b; });
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
  binary(n, x, y, out, [](__m256d a, __m256d b) { return _mm256_mul_pd(a, b); },
         [](double a, double b) { return a * b; });
}

void mul_acc(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i), prod));
  }
  for (; i < n; ++i) out[i] = out[i] + x[i] * y[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void blend(std::size_t n, double alpha, const double* b, double beta, const double* s,
           double* out) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vb = _mm256_set1_pd(beta);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d lhs = _mm256_mul_pd(va, _mm256_loadu_pd(b + i));
    const __m256d rhs = _mm256_mul_pd(vb, _mm256_loadu_pd(s + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(lhs, rhs));
  }
  for (; i < n; ++i) out[i] = alpha * b[i] + beta * s[i];
}

void relu(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d mask = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, vx));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* grad_out, double* grad_in) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(grad_out + i));
    _mm256_storeu_pd(grad_in + i, _mm256_add_pd(_mm256_loadu_pd(grad_in + i), g));
  }
  for (; i < n; ++i) grad_in[i] = grad_in[i] + (x[i] > 0.0 ? grad_out[i] : 0.0);
}

void adam(std::size_t n, double* param, const double* grad, double* m, double* v, double beta1,
          double beta2, double correction1, double correction2, double lr, double eps) {
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vomb1 = _mm256_set1_pd(one_minus_b1);
  const __m256d vomb2 = _mm256_set1_pd(one_minus_b2);
  const __m256d vc1 = _mm256_set1_pd(correction1);
  const __m256d vc2 = _mm256_set1_pd(correction2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(vomb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(vomb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, vc1);
    const __m256d v_hat = _mm256_div_pd(vi, vc2);
    const __m256d step =
        _mm256_div_pd(_mm256_mul_pd(vlr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), veps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + one_minus_b1 * g;
    v[i] = beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    param[i] = param[i] - (lr * m_hat) / (std::sqrt(v_hat) + eps);
  }
}

constexpr KernelTable kAvx2{
    "avx2", gemm,  add,  sub,  mul,           mul_acc, axpy,
    scale,  blend, relu, relu_backward, adam,
};

}  // namespace

const KernelTable& avx2_kernels() noexcept { return kAvx2; }

}  // namespace sidetune::kernels::detail
