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

#include "exitrec/autodiff.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "exitrec/errors.h"

namespace exitrec {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap AsMatrix(const Tensor& t) {
  return ConstMatrixMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MatrixMap AsMatrix(Tensor& t) {
  return MatrixMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

void RequireRank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + t.ShapeString());
  }
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.SameShape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         a.ShapeString() + " vs " + b.ShapeString());
  }
}

double StableSigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void AddInto(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  double* d = dst->raw();
  const double* s = src.raw();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

}  // namespace

const Tensor& Var::value() const { return tape_->Value(id_); }

Var Tape::Append(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::CheckOwned(Var v) const {
  if (v.tape_ != this || v.id_ < 0 ||
      static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

Var Tape::Constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return Append(std::move(node));
}

Var Tape::Watch(Parameter& param) {
  if (auto it = watched_.find(&param); it != watched_.end()) {
    return Var(this, it->second);
  }
  Node node;
  node.value = param.value;
  node.requires_grad = true;
  node.param = &param;
  Var v = Append(std::move(node));
  watched_.emplace(&param, v.id_);
  return v;
}

Var Tape::Record(const char* op, Tensor value, std::span<const Var> inputs,
                 BackwardFn backward) {
  if (!value.AllFinite()) {
    throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    CheckOwned(in);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return Append(std::move(node));
}

Tensor* Tape::GradBuffer(Var v) {
  Node& node = nodes_[v.id_];
  if (!node.requires_grad) return nullptr;
  if (!node.touched) {
    if (node.grad.SameShape(node.value) &&
        node.grad.size() == node.value.size()) {
      node.grad.Fill(0.0);
    } else {
      node.grad = Tensor(node.value.shape());
    }
    node.touched = true;
  }
  return &node.grad;
}

void Tape::Backward(Var root) {
  CheckOwned(root);
  if (nodes_[root.id_].value.size() != 1) {
    throw ContractError("backward root must be a scalar, got shape " +
                        nodes_[root.id_].value.ShapeString());
  }
  for (Node& node : nodes_) node.touched = false;
  visit_order_.clear();
  Tensor* seed = GradBuffer(root);
  if (seed == nullptr) return;
  seed->Fill(1.0);
  for (int i = root.id_; i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.touched) continue;
    visit_order_.push_back(i);
    if (node.backward) node.backward(*this, node.value, node.grad);
    if (node.param != nullptr) AddInto(&node.param->grad, node.grad);
  }
}

Tensor Tape::Grad(Var v) const {
  CheckOwned(v);
  const Node& node = nodes_[v.id_];
  if (node.touched) return node.grad;
  return Tensor(node.value.shape());
}

Var Affine(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  RequireRank(xv, 2, "affine");
  RequireRank(wv, 2, "affine");
  if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw DimensionError("affine: input " + xv.ShapeString() + ", weight " +
                         wv.ShapeString() + ", bias " + bv.ShapeString());
  }
  Tensor out({xv.rows(), wv.cols()});
  auto o = AsMatrix(out);
  o.noalias() = AsMatrix(xv) * AsMatrix(wv);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv[c];
  }
  const Var inputs[] = {x, weight, bias};
  return x.tape()->Record(
      "affine", std::move(out), inputs,
      [x, weight, bias](Tape& tape, const Tensor&, const Tensor& g) {
        const auto gm = AsMatrix(g);
        if (Tensor* gx = tape.GradBuffer(x)) {
          AsMatrix(*gx).noalias() += gm * AsMatrix(weight.value()).transpose();
        }
        if (Tensor* gw = tape.GradBuffer(weight)) {
          AsMatrix(*gw).noalias() += AsMatrix(x.value()).transpose() * gm;
        }
        if (Tensor* gb = tape.GradBuffer(bias)) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g.at(r, c);
          }
        }
      });
}

Var Concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat: no parts");
  const std::size_t batch = parts[0].value().rows();
  std::size_t width = 0;
  for (const Var& p : parts) {
    RequireRank(p.value(), 2, "concat");
    if (p.value().rows() != batch) {
      throw DimensionError("concat: batch mismatch " + std::to_string(batch) +
                           " vs " + std::to_string(p.value().rows()));
    }
    width += p.value().cols();
  }
  Tensor out({batch, width});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < batch; ++r) {
      std::copy_n(v.raw() + r * v.cols(), v.cols(),
                  out.raw() + r * width + offset);
    }
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape()->Record(
      "concat", std::move(out), inputs,
      [inputs](Tape& tape, const Tensor&, const Tensor& g) {
        std::size_t offset = 0;
        const std::size_t width = g.cols();
        for (const Var& p : inputs) {
          const std::size_t cols = p.value().cols();
          if (Tensor* gp = tape.GradBuffer(p)) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
              const double* src = g.raw() + r * width + offset;
              double* dst = gp->raw() + r * cols;
              for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
            }
          }
          offset += cols;
        }
      });
}

Var Concat(std::initializer_list<Var> parts) {
  return Concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var PRelu(Var x, Var slope) {
  const Tensor& xv = x.value();
  const Tensor& sv = slope.value();
  if (xv.rank() == 0 || sv.size() != xv.shape().back()) {
    throw DimensionError("prelu: slope " + sv.ShapeString() +
                         " does not match last axis of " + xv.ShapeString());
  }
  const std::size_t channels = sv.size();
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] <= 0.0) out[i] *= sv[i % channels];
  }
  const Var inputs[] = {x, slope};
  return x.tape()->Record(
      "prelu", std::move(out), inputs,
      [x, slope, channels](Tape& tape, const Tensor&, const Tensor& g) {
        const Tensor& xv = x.value();
        const Tensor& sv = slope.value();
        Tensor* gx = tape.GradBuffer(x);
        Tensor* gs = tape.GradBuffer(slope);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = i % channels;
          if (xv[i] > 0.0) {
            if (gx) (*gx)[i] += g[i];
          } else {
            if (gx) (*gx)[i] += g[i] * sv[c];
            if (gs) (*gs)[c] += g[i] * xv[i];
          }
        }
      });
}

Var Sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = StableSigmoid(v);
  const Var inputs[] = {x};
  return x.tape()->Record(
      "sigmoid", std::move(out), inputs,
      [x](Tape& tape, const Tensor& y, const Tensor& g) {
        Tensor* gx = tape.GradBuffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
        }
      });
}

Var Softmax(Var x) {
  const Tensor& xv = x.value();
  RequireRank(xv, 2, "softmax");
  if (xv.cols() == 0) throw DimensionError("softmax: zero columns");
  Tensor out({xv.rows(), xv.cols()});
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double max = xv.at(r, 0);
    for (std::size_t c = 1; c < xv.cols(); ++c) max = std::max(max, xv.at(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      out.at(r, c) = std::exp(xv.at(r, c) - max);
      total += out.at(r, c);
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) out.at(r, c) /= total;
  }
  const Var inputs[] = {x};
  return x.tape()->Record(
      "softmax", std::move(out), inputs,
      [x](Tape& tape, const Tensor& y, const Tensor& g) {
        Tensor* gx = tape.GradBuffer(x);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) {
            gx->at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
          }
        }
      });
}

Var EmbeddingLookup(Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table.value();
  RequireRank(tv, 2, "embedding_lookup");
  const std::size_t vocab = tv.rows();
  const std::size_t width = tv.cols();
  Tensor out({ids.size(), width});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] < 0 || static_cast<std::size_t>(ids[b]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[b]) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(tv.raw() + ids[b] * width, width, out.raw() + b * width);
  }
  std::vector<std::int32_t> captured(ids.begin(), ids.end());
  const Var inputs[] = {table};
  return table.tape()->Record(
      "embedding_lookup", std::move(out), inputs,
      [table, captured = std::move(captured), width](
          Tape& tape, const Tensor&, const Tensor& g) {
        Tensor* gt = tape.GradBuffer(table);
        for (std::size_t b = 0; b < captured.size(); ++b) {
          double* dst = gt->raw() + captured[b] * width;
          const double* src = g.raw() + b * width;
          for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
        }
      });
}

Var StopGradient(Var x) {
  return x.tape()->Record("stop_gradient", x.value(), {}, nullptr);
}

Var Add(Var a, Var b) {
  RequireSameShape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const Var inputs[] = {a, b};
  return a.tape()->Record("add", std::move(out), inputs,
                          [a, b](Tape& tape, const Tensor&, const Tensor& g) {
                            AddInto(tape.GradBuffer(a), g);
                            AddInto(tape.GradBuffer(b), g);
                          });
}

Var Mul(Var a, Var b) {
  RequireSameShape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const Var inputs[] = {a, b};
  return a.tape()->Record(
      "mul", std::move(out), inputs,
      [a, b](Tape& tape, const Tensor&, const Tensor& g) {
        if (Tensor* ga = tape.GradBuffer(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
        }
        if (Tensor* gb = tape.GradBuffer(b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
        }
      });
}

Var Scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const Var inputs[] = {a};
  return a.tape()->Record(
      "scale", std::move(out), inputs,
      [a, factor](Tape& tape, const Tensor&, const Tensor& g) {
        Tensor* ga = tape.GradBuffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
      });
}

Var GatedMixture(Var gates, std::span<const Var> experts) {
  const Tensor& gv = gates.value();
  RequireRank(gv, 2, "gated_mixture");
  if (experts.size() != gv.cols()) {
    throw DimensionError("gated_mixture: " + std::to_string(gv.cols()) +
                         " gates for " + std::to_string(experts.size()) +
                         " experts");
  }
  const Tensor& first = experts[0].value();
  RequireRank(first, 2, "gated_mixture");
  if (first.rows() != gv.rows()) {
    throw DimensionError("gated_mixture: batch mismatch");
  }
  for (const Var& e : experts) RequireSameShape(e.value(), first, "gated_mixture");
  const std::size_t batch = first.rows();
  const std::size_t width = first.cols();
  Tensor out({batch, width});
  for (std::size_t k = 0; k < experts.size(); ++k) {
    const Tensor& ev = experts[k].value();
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = gv.at(b, k);
      for (std::size_t c = 0; c < width; ++c) out.at(b, c) += w * ev.at(b, c);
    }
  }
  std::vector<Var> inputs{gates};
  inputs.insert(inputs.end(), experts.begin(), experts.end());
  return gates.tape()->Record(
      "gated_mixture", std::move(out), inputs,
      [inputs](Tape& tape, const Tensor&, const Tensor& g) {
        const Var gates = inputs[0];
        const Tensor& gv = gates.value();
        Tensor* gg = tape.GradBuffer(gates);
        for (std::size_t k = 1; k < inputs.size(); ++k) {
          const Tensor& ev = inputs[k].value();
          Tensor* ge = tape.GradBuffer(inputs[k]);
          for (std::size_t b = 0; b < g.rows(); ++b) {
            const double w = gv.at(b, k - 1);
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) {
              dot += g.at(b, c) * ev.at(b, c);
              if (ge) ge->at(b, c) += w * g.at(b, c);
            }
            if (gg) gg->at(b, k - 1) += dot;
          }
        }
      });
}

Var CrossEntropy(Var prob, std::span<const double> labels) {
  const Tensor& pv = prob.value();
  if (pv.size() != labels.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(pv.size()) +
                         " predictions for " + std::to_string(labels.size()) +
                         " labels");
  }
  if (labels.empty()) throw ContractError("cross_entropy: empty batch");
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p =
        std::clamp(pv[i], kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  std::vector<double> captured(labels.begin(), labels.end());
  const Var inputs[] = {prob};
  return prob.tape()->Record(
      "cross_entropy", Tensor::Scalar(total / n), inputs,
      [prob, captured = std::move(captured), n](Tape& tape, const Tensor&,
                                                const Tensor& g) {
        Tensor* gp = tape.GradBuffer(prob);
        const Tensor& pv = prob.value();
        const double scale = g[0] / n;
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const double p = pv[i];
          if (p < kProbabilityEpsilon || p > 1.0 - kProbabilityEpsilon) continue;
          const double y = captured[i];
          (*gp)[i] += scale * (-y / p + (1.0 - y) / (1.0 - p));
        }
      });
}

Var L1Loss(Var pred, std::span<const double> target) {
  const Tensor& pv = pred.value();
  if (pv.size() != target.size()) {
    throw DimensionError("l1_loss: " + std::to_string(pv.size()) +
                         " predictions for " + std::to_string(target.size()) +
                         " targets");
  }
  if (target.empty()) throw ContractError("l1_loss: empty batch");
  const double n = static_cast<double>(target.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += std::abs(pv[i] - target[i]);
  std::vector<double> captured(target.begin(), target.end());
  const Var inputs[] = {pred};
  return pred.tape()->Record(
      "l1_loss", Tensor::Scalar(total / n), inputs,
      [pred, captured = std::move(captured), n](Tape& tape, const Tensor&,
                                                const Tensor& g) {
        Tensor* gp = tape.GradBuffer(pred);
        const Tensor& pv = pred.value();
        const double scale = g[0] / n;
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const double diff = pv[i] - captured[i];
          if (diff > 0.0) {
            (*gp)[i] += scale;
          } else if (diff < 0.0) {
            (*gp)[i] -= scale;
          }
        }
      });
}

}  // namespace exitrec
