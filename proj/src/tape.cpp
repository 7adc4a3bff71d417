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

#include "sidetune/tape.hpp"

#include "sidetune/error.hpp"
#include "sidetune/kernels.hpp"

namespace sidetune {

Parameter::Parameter(std::string name_in, Tensor value_in)
    : name(std::move(name_in)), value(std::move(value_in)), grad(value.shape(), 0.0) {}

void Parameter::zero_grad() {
  if (grad.size() != value.size()) {
    grad = Tensor(value.shape(), 0.0);
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("var: use of an unbound variable");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite input " + to_string(value.shape()));
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::constant_ref(const Tensor& value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite input " + to_string(value.shape()));
  Node node;
  node.op = "constant";
  node.external = &value;
  return push(std::move(node));
}

Var Tape::param(Parameter& p) {
  if (!p.value.all_finite()) throw NumericError("param '" + p.name + "': non-finite value");
  Node node;
  node.op = "param";
  node.external = &p.value;
  node.param = &p;
  node.requires_grad = !p.frozen;
  return push(std::move(node));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced non-finite output of shape " +
                       to_string(value.shape()));
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError(std::string(op) + ": input not on this tape");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.external != nullptr ? *node.external : node.value;
}

bool Tape::requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

Tensor& Tape::grad(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = Tensor(value(id).shape(), 0.0);
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (!owns(loss)) throw ContractError("backward: loss is not recorded on this tape");
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        to_string(value(loss.id()).shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor();
  grad(loss.id()).fill(1.0);

  const auto& k = kernels::active();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.size() != p.value.size()) p.zero_grad();
      k.add(p.grad.size(), p.grad.raw(), node.grad.raw(), p.grad.raw());
    } else if (node.backward) {
      node.backward(*this, node.grad);
    }
  }
}

}  // namespace sidetune
