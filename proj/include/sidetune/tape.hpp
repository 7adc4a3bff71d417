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
#include <string>
#include <string_view>
#include <vector>

#include "sidetune/tensor.hpp"

namespace sidetune {

/// A learnable (or frozen) tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad();
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of primitive operations for reverse-mode differentiation.
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction and backward() walks it once in reverse.
class Tape {
 public:
  /// Propagates the node's output gradient into its inputs' gradients.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a copy of `value`; never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that reads `value` in place; the caller keeps it alive.
  Var constant_ref(const Tensor& value);
  /// Leaf bound to a parameter. Unless the parameter is frozen, backward()
  /// adds dLoss/dParam into `param.grad`.
  Var param(Parameter& param);

  /// Records an op output. Throws NumericError if any value is non-finite.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs,
             BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const;
  /// Gradient buffer of a node, zero-allocated on first use.
  Tensor& grad(std::size_t id);
  bool owns(const Var& v) const noexcept { return v.tape() == this && v.id() < nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable
  /// non-frozen parameter. May be called more than once; node gradients are
  /// reset at the start of each call, parameter gradients are not.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor grad;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

}  // namespace sidetune
