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

#include "sidetune/tape.hpp"
#include "sidetune/tensor.hpp"

// Differentiable primitives. Every op checks shapes, records its output on the
// inputs' tape and throws DimensionError naming the op and offending shapes.

namespace sidetune::ops {

/// [m, k] x [k, n] -> [m, n]
Var matmul(const Var& a, const Var& b);
/// Same-shape sum, or a rank-1 `b` broadcast along the last axis of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// alpha * b + (1 - alpha) * s with a one-element `alpha`.
Var scalar_blend(const Var& alpha, const Var& b, const Var& s);

Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// x [n, c, h, w], weight [o, c, kh, kw], optional bias [o] (pass an unbound
/// Var for none). Zero padding, direct evaluation.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options = {});
/// Mean over k x k windows without padding.
Var avgpool2d(const Var& x, std::size_t kernel, std::size_t stride);
/// [n, ...] -> [n, prod(...)]
Var flatten(const Var& x);

Var sum(const Var& x);

/// Mean over all elements of (pred - target)^2.
Var mse_loss(const Var& pred, const Tensor& target);
/// Mean over all elements of |pred - target|.
Var l1_loss(const Var& pred, const Tensor& target);
/// Mean over the batch of -log softmax(logits)[label]. `labels` has shape [n]
/// holding class indices.
Var softmax_cross_entropy(const Var& logits, const Tensor& labels);

}  // namespace sidetune::ops
