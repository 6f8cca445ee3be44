// Copyright 2026 The DIFE Authors. All Rights Reserved.
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

#include "dife/autodiff.hpp"

#include "dife/errors.hpp"

namespace dife {

namespace debug {
namespace {
std::string& fault_slot() {
  static std::string op;
  return op;
}
}  // namespace
void set_backward_fault(std::string op) { fault_slot() = std::move(op); }
const std::string& backward_fault() { return fault_slot(); }
}  // namespace debug

Parameter::Parameter(std::string name_in, Tensor init)
    : name(std::move(name_in)),
      value(std::move(init)),
      grad(value.shape()),
      momentum(value.shape()) {}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const {
  return tape_ != nullptr && tape_->requires_grad(*this);
}

void Tape::check_owner(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

Var Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Node node;
  node.op = "param";
  node.value = p.value;
  node.requires_grad = grad_enabled_;
  node.param = grad_enabled_ ? &p : nullptr;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> parents,
                 BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    check_owner(p);
    node.parents.push_back(p.id_);
    node.requires_grad = node.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(const Var& v) const {
  check_owner(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(const Var& v) const {
  check_owner(v);
  return nodes_[v.id_].requires_grad;
}

Tensor Tape::grad(const Var& v) const {
  check_owner(v);
  const Node& node = nodes_[v.id_];
  if (!node.has_grad) return Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(const Var& root) {
  check_owner(root);
  if (nodes_.empty()) throw ContractError("backward on an empty tape");
  const Shape scalar{1, 1, 1, 1};
  if (!(nodes_[root.id_].value.shape() == scalar)) {
    throw ContractError("backward root must be scalar, got shape " +
                        nodes_[root.id_].value.shape().str());
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  Node& top = nodes_[root.id_];
  top.grad = Tensor(scalar, 1.0);
  top.has_grad = true;

  const std::string& fault = debug::backward_fault();
  std::vector<Tensor*> parent_grads;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.param != nullptr) {
      Tensor& acc = node.param->grad;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += node.grad[k];
    }
    if (!node.backward) continue;
    parent_grads.clear();
    for (std::size_t pid : node.parents) {
      Node& parent = nodes_[pid];
      if (!parent.requires_grad) {
        parent_grads.push_back(nullptr);
        continue;
      }
      if (!parent.has_grad) {
        parent.grad = Tensor(parent.value.shape());
        parent.has_grad = true;
      }
      parent_grads.push_back(&parent.grad);
    }
    if (!fault.empty() && node.op == fault) {
      Tensor flipped = node.grad;
      for (double& g : flipped.data()) g = -g;
      node.backward(flipped, parent_grads);
    } else {
      node.backward(node.grad, parent_grads);
    }
  }
}

}  // namespace dife
