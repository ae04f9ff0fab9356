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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "exitrec/autodiff.h"
#include "exitrec/errors.h"
#include "exitrec/optimizer.h"
#include "exitrec/tensor.h"
#include "test_util.h"

namespace exitrec {
namespace {

using testing::CheckGradients;
using testing::RandomTensor;
using testing::Readout;

constexpr double kGradTolerance = 1e-4;

TEST(TensorTest, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(Tensor::Scalar(4.0).item(), 4.0);
  EXPECT_THROW((void)t.item(), DimensionError);
}

TEST(TensorTest, ParameterStoreKeepsOrderAndAddresses) {
  ParameterStore store;
  Parameter* a = &store.Add("a", Tensor({2}));
  store.Add("b", Tensor({3}));
  EXPECT_THROW(store.Add("a", Tensor({1})), ContractError);
  EXPECT_THROW(store.Get("missing"), IndexError);
  EXPECT_EQ(&store.Get("a"), a);
  EXPECT_EQ(store.All()[1]->name, "b");
  EXPECT_EQ(store.TotalElements(), 5u);
  ParameterStore copy = store;
  copy.Get("a").value[0] = 9.0;
  EXPECT_EQ(store.Get("a").value[0], 0.0);
}

TEST(AffineTest, IdentityAndBias) {
  Tape tape;
  Var out = Affine(tape.Constant(Tensor::Matrix({{1, 2}})),
                   tape.Constant(Tensor::Matrix({{1, 0}, {0, 1}})),
                   tape.Constant(Tensor::Vector({0, 0})));
  EXPECT_EQ(out.value(), Tensor::Matrix({{1, 2}}));
  Var biased = Affine(tape.Constant(Tensor::Matrix({{0, 0}})),
                      tape.Constant(Tensor::Matrix({{5, 6}, {7, 8}})),
                      tape.Constant(Tensor::Vector({3, 4})));
  EXPECT_EQ(biased.value(), Tensor::Matrix({{3, 4}}));
}

TEST(AffineTest, MatchesTripleLoop) {
  std::mt19937_64 rng(3);
  const Tensor x = RandomTensor({3, 4}, rng);
  const Tensor w = RandomTensor({4, 2}, rng);
  const Tensor b = RandomTensor({2}, rng);
  Tape tape;
  const Tensor out =
      Affine(tape.Constant(x), tape.Constant(w), tape.Constant(b)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t o = 0; o < 2; ++o) {
      double expected = b[o];
      for (std::size_t i = 0; i < 4; ++i) expected += x.at(r, i) * w.at(i, o);
      EXPECT_NEAR(out.at(r, o), expected, 1e-14);
    }
  }
}

TEST(AffineTest, RejectsMismatchedShapes) {
  Tape tape;
  EXPECT_THROW(Affine(tape.Constant(Tensor({2, 3})), tape.Constant(Tensor({2, 2})),
                      tape.Constant(Tensor({2}))),
               DimensionError);
  EXPECT_THROW(Affine(tape.Constant(Tensor({2, 3})), tape.Constant(Tensor({3, 2})),
                      tape.Constant(Tensor({3}))),
               DimensionError);
}

TEST(ConcatTest, ColumnsInArgumentOrder) {
  Tape tape;
  EXPECT_EQ(Concat({tape.Constant(Tensor::Matrix({{1}})),
                    tape.Constant(Tensor::Matrix({{2}}))})
                .value(),
            Tensor::Matrix({{1, 2}}));
  const Tensor single = Tensor::Matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(Concat({tape.Constant(single)}).value(), single);
}

TEST(ConcatTest, SliceRoundTrip) {
  std::mt19937_64 rng(5);
  const Tensor parts[] = {RandomTensor({4, 2}, rng), RandomTensor({4, 3}, rng),
                          RandomTensor({4, 1}, rng)};
  Tape tape;
  const Tensor out = Concat({tape.Constant(parts[0]), tape.Constant(parts[1]),
                              tape.Constant(parts[2])})
                          .value();
  ASSERT_EQ(out.cols(), 6u);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        EXPECT_EQ(out.at(r, offset + c), p.at(r, c));
      }
    }
    offset += p.cols();
  }
}

TEST(ConcatTest, RejectsBatchMismatch) {
  Tape tape;
  EXPECT_THROW(Concat({tape.Constant(Tensor({2, 1})), tape.Constant(Tensor({3, 1}))}),
               DimensionError);
}

TEST(PReluTest, ValuesAndGradients) {
  Parameter x{"x", Tensor::Matrix({{2, -4}}), {}};
  Parameter slope{"a", Tensor::Vector({0.25, 0.25}), {}};
  Tape tape;
  Var out = PRelu(tape.Watch(x), tape.Watch(slope));
  EXPECT_EQ(out.value(), Tensor::Matrix({{2, -1}}));

  // d out[0,1] / d x = slope, d out[0,1] / d slope = x.
  x.grad = Tensor(x.value.shape());
  slope.grad = Tensor(slope.value.shape());
  Var pick = Affine(out, tape.Constant(Tensor::Matrix({{0}, {1}})),
                    tape.Constant(Tensor({1})));
  tape.Backward(pick);
  EXPECT_DOUBLE_EQ(x.grad[1], 0.25);
  EXPECT_DOUBLE_EQ(slope.grad[1], -4.0);
  EXPECT_DOUBLE_EQ(x.grad[0], 0.0);
  EXPECT_DOUBLE_EQ(slope.grad[0], 0.0);
}

TEST(SigmoidTest, StableAndAccurate) {
  Tape tape;
  const Tensor out =
      Sigmoid(tape.Constant(Tensor::Matrix({{0, 500, -500, 1}}))).value();
  EXPECT_EQ(out[0], 0.5);
  EXPECT_EQ(out[1], 1.0);
  EXPECT_GE(out[2], 0.0);
  EXPECT_LT(out[2], 1e-200);
  // 1 / (1 + e^-1) from the series of e^-1 in long double.
  long double e_inv = 0.0L, term = 1.0L;
  for (int k = 0; k < 40; ++k) {
    e_inv += term;
    term *= -1.0L / static_cast<long double>(k + 1);
  }
  EXPECT_NEAR(out[3], static_cast<double>(1.0L / (1.0L + e_inv)), 1e-12);
}

TEST(SoftmaxTest, RowsSumToOneAndShiftInvariant) {
  Tape tape;
  EXPECT_EQ(Softmax(tape.Constant(Tensor::Matrix({{0, 0}}))).value(),
            Tensor::Matrix({{0.5, 0.5}}));
  const Tensor a = Softmax(tape.Constant(Tensor::Matrix({{1.5, 3.0}}))).value();
  const Tensor b = Softmax(tape.Constant(Tensor::Matrix({{101.5, 103.0}}))).value();
  EXPECT_NEAR(a[0], b[0], 1e-12);
  EXPECT_NEAR(a[1], b[1], 1e-12);
  std::mt19937_64 rng(11);
  const Tensor r =
      Softmax(tape.Constant(RandomTensor({5, 7}, rng, -30.0, 30.0))).value();
  for (std::size_t row = 0; row < 5; ++row) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(r.at(row, c), 0.0);
      EXPECT_LT(r.at(row, c), 1.0);
      sum += r.at(row, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(EmbeddingTest, GatherAndErrors) {
  Tape tape;
  Var table = tape.Constant(Tensor::Matrix({{1, 0}, {0, 1}, {5, 5}}));
  const std::int32_t ids[] = {0, 2};
  EXPECT_EQ(EmbeddingLookup(table, ids).value(), Tensor::Matrix({{1, 0}, {5, 5}}));
  const std::int32_t bad[] = {3};
  EXPECT_THROW(EmbeddingLookup(table, bad), IndexError);
  const std::int32_t negative[] = {-1};
  EXPECT_THROW(EmbeddingLookup(table, negative), IndexError);
  Var wide = tape.Constant(Tensor({4, 8}));
  const Tensor empty = EmbeddingLookup(wide, {}).value();
  EXPECT_EQ(empty.rows(), 0u);
  EXPECT_EQ(empty.cols(), 8u);
}

TEST(EmbeddingTest, DuplicateIdsAccumulate) {
  std::mt19937_64 rng(2);
  Parameter table{"t", RandomTensor({2, 3}, rng), {}};
  const std::int32_t ids[] = {1, 0, 1, 1};
  const auto result = CheckGradients({&table}, [&](Tape& tape) {
    return Readout(EmbeddingLookup(tape.Watch(table), ids));
  });
  EXPECT_LT(result.worst_relative, kGradTolerance);
}

TEST(CrossEntropyTest, ValuesAndGradient) {
  Parameter p{"p", Tensor::Matrix({{0.5}}), {}};
  p.grad = Tensor(p.value.shape());
  Tape tape;
  const double ones[] = {1.0};
  Var loss = CrossEntropy(tape.Watch(p), ones);
  EXPECT_NEAR(loss.value().item(), std::log(2.0), 1e-15);
  tape.Backward(loss);
  EXPECT_NEAR(p.grad[0], -2.0, 1e-12);
  const auto fd = CheckGradients({&p}, [&](Tape& t) {
    return CrossEntropy(t.Watch(p), ones);
  });
  EXPECT_LT(fd.worst_relative, kGradTolerance);

  Tape sure;
  EXPECT_LT(CrossEntropy(sure.Constant(Tensor::Matrix({{1.0}})), ones).value().item(),
            1e-6);
  EXPECT_TRUE(std::isfinite(
      CrossEntropy(sure.Constant(Tensor::Matrix({{0.0}})), ones).value().item()));
}

TEST(L1LossTest, Values) {
  Tape tape;
  const double target[] = {0.0, 1.0};
  EXPECT_NEAR(
      L1Loss(tape.Constant(Tensor::Matrix({{0.1}, {0.9}})), target).value().item(),
      0.1, 1e-15);
  const double one[] = {1.0};
  EXPECT_NEAR(L1Loss(tape.Constant(Tensor::Matrix({{0.3}})), one).value().item(),
              0.7, 1e-15);
  const double same[] = {0.3};
  EXPECT_EQ(L1Loss(tape.Constant(Tensor::Matrix({{0.3}})), same).value().item(), 0.0);
}

TEST(L1LossTest, SubgradientIsZeroAtTies) {
  Parameter p{"p", Tensor::Matrix({{0.3}, {0.8}, {0.5}}), {}};
  p.grad = Tensor(p.value.shape());
  const double target[] = {0.3, 0.2, 0.9};
  Tape tape;
  tape.Backward(L1Loss(tape.Watch(p), target));
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.grad[2], -1.0 / 3.0);
}

TEST(StopGradientTest, BlocksInputButNotSibling) {
  Parameter x{"x", Tensor::Matrix({{1.5, -2.0}}), {}};
  Parameter w{"w", Tensor::Matrix({{0.5, 4.0}}), {}};
  auto build = [&](Tape& tape) {
    Var stopped = StopGradient(tape.Watch(x));
    EXPECT_EQ(stopped.value(), x.value);
    return Readout(Mul(stopped, tape.Watch(w)));
  };
  const auto fd = CheckGradients({&w}, build);
  EXPECT_LT(fd.worst_relative, kGradTolerance);
  x.grad = Tensor(x.value.shape());
  Tape tape;
  tape.Backward(build(tape));
  EXPECT_EQ(x.grad, Tensor(x.value.shape()));

  // d(stop(x) * w)/dw = x for a single product.
  w.grad = Tensor(w.value.shape());
  Tape direct;
  Var product = Mul(StopGradient(direct.Watch(x)), direct.Watch(w));
  direct.Backward(Affine(product, direct.Constant(Tensor::Matrix({{1}, {1}})),
                         direct.Constant(Tensor({1}))));
  EXPECT_EQ(w.grad, x.value);
}

TEST(BackwardTest, RootParameterAndAccumulation) {
  Parameter s{"s", Tensor::Scalar(3.0), {}};
  s.grad = Tensor(s.value.shape());
  Tape tape;
  Var v = tape.Watch(s);
  tape.Backward(v);
  EXPECT_EQ(s.grad.item(), 1.0);
  tape.Backward(v);
  EXPECT_EQ(s.grad.item(), 2.0);
  EXPECT_THROW(tape.Backward(tape.Constant(Tensor({2}))), ContractError);
}

TEST(BackwardTest, VisitsInReverseExecutionOrder) {
  Parameter w{"w", Tensor::Matrix({{0.5}}), {}};
  w.grad = Tensor(w.value.shape());
  Tape tape;
  Var a = tape.Watch(w);
  Var b = Sigmoid(a);
  Var c = Mul(b, a);
  Var d = Scale(c, 2.0);
  tape.Backward(d);
  const std::vector<int> expected = {d.id(), c.id(), b.id(), a.id()};
  EXPECT_EQ(tape.last_visit_order(), expected);
}

TEST(BackwardTest, UntouchedParameterGetsZero) {
  Parameter used{"u", Tensor::Matrix({{0.5}}), {}};
  Parameter unused{"n", Tensor::Matrix({{0.7}}), {}};
  used.grad = Tensor(used.value.shape());
  unused.grad = Tensor(unused.value.shape());
  Tape tape;
  tape.Watch(unused);
  tape.Backward(Sigmoid(tape.Watch(used)));
  EXPECT_EQ(unused.grad.item(), 0.0);
  EXPECT_NE(used.grad.item(), 0.0);
}

TEST(BackwardTest, NonFiniteValuesAreRejected) {
  Tape tape;
  EXPECT_THROW(Scale(tape.Constant(Tensor::Matrix({{1e308}})), 10.0), NonFiniteError);
}

// Every differentiable op against central differences on random tensors.
class GradientCheck : public ::testing::Test {
 protected:
  std::mt19937_64 rng{17};
};

TEST_F(GradientCheck, AffineSigmoidComposite) {
  Parameter x{"x", RandomTensor({3, 4}, rng), {}};
  Parameter w{"w", RandomTensor({4, 2}, rng), {}};
  Parameter b{"b", RandomTensor({2}, rng), {}};
  const auto r = CheckGradients({&x, &w, &b}, [&](Tape& t) {
    return Readout(Sigmoid(Affine(t.Watch(x), t.Watch(w), t.Watch(b))));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
  EXPECT_EQ(r.checked, 12u + 8u + 2u);
}

TEST_F(GradientCheck, PRelu) {
  Parameter x{"x", RandomTensor({4, 3}, rng), {}};
  Parameter a{"a", RandomTensor({3}, rng, 0.1, 0.4), {}};
  // Keep inputs away from the kink.
  for (double& v : x.value.data()) v += v >= 0 ? 0.1 : -0.1;
  const auto r = CheckGradients({&x, &a}, [&](Tape& t) {
    return Readout(PRelu(t.Watch(x), t.Watch(a)));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
}

TEST_F(GradientCheck, Softmax) {
  Parameter x{"x", RandomTensor({3, 4}, rng, -2, 2), {}};
  const auto r = CheckGradients({&x}, [&](Tape& t) {
    return Readout(Softmax(t.Watch(x)));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
}

TEST_F(GradientCheck, ConcatAddMulScale) {
  Parameter a{"a", RandomTensor({3, 2}, rng), {}};
  Parameter b{"b", RandomTensor({3, 2}, rng), {}};
  Parameter c{"c", RandomTensor({3, 3}, rng), {}};
  const auto r = CheckGradients({&a, &b, &c}, [&](Tape& t) {
    Var sum = Add(t.Watch(a), Scale(t.Watch(b), -1.7));
    Var prod = Mul(sum, t.Watch(b));
    return Readout(Concat({prod, t.Watch(c), t.Watch(a)}));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
}

TEST_F(GradientCheck, GatedMixture) {
  Parameter g{"g", RandomTensor({4, 3}, rng), {}};
  Parameter e0{"e0", RandomTensor({4, 2}, rng), {}};
  Parameter e1{"e1", RandomTensor({4, 2}, rng), {}};
  Parameter e2{"e2", RandomTensor({4, 2}, rng), {}};
  const auto r = CheckGradients({&g, &e0, &e1, &e2}, [&](Tape& t) {
    const Var experts[] = {t.Watch(e0), t.Watch(e1), t.Watch(e2)};
    return Readout(GatedMixture(Softmax(t.Watch(g)), experts));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
}

TEST_F(GradientCheck, EmbeddingLookup) {
  Parameter table{"t", RandomTensor({5, 3}, rng), {}};
  const std::int32_t ids[] = {4, 0, 2, 4};
  const auto r = CheckGradients({&table}, [&](Tape& t) {
    return Readout(EmbeddingLookup(t.Watch(table), ids));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
}

TEST_F(GradientCheck, CrossEntropyAndL1) {
  Parameter p{"p", RandomTensor({5, 1}, rng, 0.1, 0.9), {}};
  const double labels[] = {1, 0, 1, 0, 0};
  const double targets[] = {1.5, 0.0, 2.0, 0.95, -0.3};
  const auto r = CheckGradients({&p}, [&](Tape& t) {
    Var prob = t.Watch(p);
    return Add(CrossEntropy(prob, labels), L1Loss(prob, targets));
  });
  EXPECT_LT(r.worst_relative, kGradTolerance);
}

TEST(AdamTest, FirstStepAndZeroGradient) {
  Parameter p{"p", Tensor::Vector({1.0, 2.0}), Tensor::Vector({1.0, 0.0})};
  Parameter* params[] = {&p};
  AdamState state = AdamState::For(params);
  AdamStep(params, state);
  EXPECT_EQ(state.step, 1);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.value[0], 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.value[1], 2.0);
  AdamStep(params, state);
  EXPECT_EQ(state.step, 2);
  EXPECT_EQ(state.first_moment[0].shape(), p.value.shape());
  EXPECT_EQ(state.second_moment[0].shape(), p.value.shape());
}

TEST(AdamTest, ShapeMismatchIsRejected) {
  Parameter p{"p", Tensor::Vector({1.0}), Tensor::Vector({1.0})};
  Parameter q{"q", Tensor::Vector({1.0, 2.0}), Tensor::Vector({0.0, 0.0})};
  Parameter* one[] = {&p};
  Parameter* two[] = {&p, &q};
  AdamState state = AdamState::For(one);
  EXPECT_THROW(AdamStep(two, state), DimensionError);
  Parameter* swapped[] = {&q};
  EXPECT_THROW(AdamStep(swapped, state), DimensionError);
}

TEST(DeterminismTest, ReplayIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Var x = tape.Constant(RandomTensor({6, 5}, rng));
    Var w = tape.Constant(RandomTensor({5, 4}, rng));
    Var b = tape.Constant(RandomTensor({4}, rng));
    return Softmax(Sigmoid(Affine(x, w, b))).value();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace exitrec
