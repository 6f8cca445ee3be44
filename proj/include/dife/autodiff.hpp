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

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dife/tensor.hpp"

namespace dife {

/// A trainable tensor with its accumulated gradient and SGD momentum buffer.
struct Parameter {
  Parameter(std::string name, Tensor init);

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode record. Each forward pass builds a fresh tape;
/// nodes are appended in evaluation order so parents always precede children.
/// A tape is confined to one thread.
class Tape {
 public:
  /// Accumulates d(root)/d(parent) into the parent gradient buffers. Entries
  /// of `parent_grads` are null for parents that do not require gradients.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, std::span<Tensor*> parent_grads)>;

  Tape() = default;
  /// With gradients disabled, param() yields constants and nothing is
  /// recorded for backward; used for inference.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  /// Leaf bound to a Parameter. Repeated calls with the same parameter return
  /// the same node; backward() accumulates into `p.grad`.
  Var param(Parameter& p);

  /// Appends an op node. The backward rule is dropped when no parent
  /// requires a gradient.
  Var record(std::string_view op, Tensor value, std::vector<Var> parents,
             BackwardFn backward);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;
  /// Gradient of the last backward() root w.r.t. `v` (zeros if unreachable).
  Tensor grad(const Var& v) const;

  /// Reverse sweep from a scalar root. Parameter gradients are accumulated.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check_owner(const Var& v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_ = true;
};

namespace debug {
/// Test fixture hook: negates the incoming gradient of every node whose op
/// name equals `op` during backward(). Empty string disables. Not thread-safe.
void set_backward_fault(std::string op);
const std::string& backward_fault();
}  // namespace debug

}  // namespace dife
