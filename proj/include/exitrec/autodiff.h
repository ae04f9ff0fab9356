// Copyright 2026 The exitrec Authors.
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

// Reverse-mode differentiation over a linear tape of recorded ops.
//
// Every op appends one node holding its output value and a closure that
// pushes the node's adjoint onto its inputs. Tape::Backward walks the nodes
// in exact reverse order of execution. Leaves bound to a Parameter add their
// adjoint into Parameter::grad, so gradients accumulate across Backward calls
// until the caller zeroes them.

#ifndef EXITREC_AUTODIFF_H_
#define EXITREC_AUTODIFF_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "exitrec/tensor.h"

namespace exitrec {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the node's output value and its adjoint.
  using BackwardFn =
      std::function<void(Tape&, const Tensor& out, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Tensor value);
  // Leaf bound to `param`. Watching the same parameter twice returns the same
  // node.
  Var Watch(Parameter& param);

  // Runs reverse accumulation from a single-element root. Adjoints of
  // intermediate nodes are reset at the start of every call.
  void Backward(Var root);

  // Adjoint of `v` from the last Backward call (zeros if untouched).
  Tensor Grad(Var v) const;
  bool RequiresGrad(Var v) const { return nodes_[v.id()].requires_grad; }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<int>& last_visit_order() const { return visit_order_; }

  // Op-implementation interface.
  Var Record(const char* op, Tensor value, std::span<const Var> inputs,
             BackwardFn backward);
  const Tensor& Value(int id) const { return nodes_[id].value; }
  // Adjoint buffer of an input, or nullptr when it needs no gradient.
  Tensor* GradBuffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool touched = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var Append(Node node);
  void CheckOwned(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> watched_;
  std::vector<int> visit_order_;
};

// out[b,o] = sum_i x[b,i] * w[i,o] + bias[o].
Var Affine(Var x, Var weight, Var bias);
// Column-wise concatenation of rank-2 parts sharing the batch dimension.
Var Concat(std::span<const Var> parts);
Var Concat(std::initializer_list<Var> parts);
// Per-channel slope over the last axis.
Var PRelu(Var x, Var slope);
Var Sigmoid(Var x);
// Row-wise softmax of a rank-2 tensor.
Var Softmax(Var x);
// Row gather from a [V x D] table. Backward scatter-adds into the table.
Var EmbeddingLookup(Var table, std::span<const std::int32_t> ids);
// Identity forward, zero backward.
Var StopGradient(Var x);
Var Add(Var a, Var b);
// Elementwise product of equal shapes.
Var Mul(Var a, Var b);
Var Scale(Var a, double factor);
// out[b,:] = sum_k gates[b,k] * experts[k][b,:].
Var GatedMixture(Var gates, std::span<const Var> experts);

inline constexpr double kProbabilityEpsilon = 1e-7;

// Batch-mean binary cross-entropy. Probabilities are clipped to
// [kProbabilityEpsilon, 1 - kProbabilityEpsilon]; clipped entries pass no
// gradient.
Var CrossEntropy(Var prob, std::span<const double> labels);
// Batch-mean |pred - target|. The subgradient at a tie is 0.
Var L1Loss(Var pred, std::span<const double> target);

}  // namespace exitrec

#endif  // EXITREC_AUTODIFF_H_
