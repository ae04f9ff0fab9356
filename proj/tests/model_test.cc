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
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "exitrec/datagen.h"
#include "exitrec/errors.h"
#include "exitrec/model.h"
#include "exitrec/optimizer.h"
#include "test_util.h"

namespace exitrec {
namespace {

// Small world so vocabularies and the network stay tiny.
WorldConfig TinyWorld() {
  WorldConfig w;
  w.n_users = 20;
  w.n_items = 12;
  w.n_exposures = 200;
  return w;
}

ModelConfig TinyModel() {
  ModelConfig c;
  c.fields = SchemaFor(TinyWorld());
  c.embedding_dim = 3;
  c.expert_hidden = {5, 4};
  c.tower_hidden = {4, 3};
  c.ssn_compressed_width = 4;
  c.ssn_hidden = {5};
  return c;
}

std::vector<LabeledExample> Examples(std::size_t n, std::uint64_t seed) {
  WorldConfig w = TinyWorld();
  w.seed = seed;
  w.n_exposures = static_cast<std::int64_t>(n);
  std::vector<LabeledExample> out;
  for (const InteractionRecord& r : Generate(w).records) {
    LabeledExample ex;
    ex.features = r.features;
    ex.y_target = r.y_target;
    ex.y_source = r.y_sources[0] | r.y_sources[1];
    ex.y_icl = ex.y_target + ex.y_source;
    out.push_back(ex);
  }
  return out;
}

void SetAll(ExitModel& model, std::string_view prefix, double value) {
  for (Parameter* p : model.params().All()) {
    if (p->name.rfind(prefix, 0) == 0) p->value.Fill(value);
  }
}

double Logit(double p) { return std::log(p / (1.0 - p)); }

TEST(ModelConfigTest, Validation) {
  ModelConfig c = TinyModel();
  EXPECT_NO_THROW(c.Validate());
  c.embedding_dim = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = TinyModel();
  c.num_experts = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = TinyModel();
  c.scene_fields.push_back("nonexistent");
  EXPECT_THROW(c.Validate(), ConfigError);
  const ModelConfig defaults;
  EXPECT_EQ(defaults.embedding_dim, 8);
  EXPECT_EQ(defaults.num_experts, 2);
  EXPECT_EQ(defaults.tower_hidden.size(), 2u);
  EXPECT_EQ(defaults.scene_fields.size(), 11u);
}

TEST(EmbedTest, ZeroTablesAndWidth) {
  ModelConfig c = TinyModel();
  c.embedding_dim = 8;
  ExitModel model(c, 1);
  SetAll(model, "emb/", 0.0);
  const Batch batch = Batch::From(Examples(4, 2));
  Tape tape;
  const EmbedOutput e = model.Embed(tape, batch);
  EXPECT_EQ(e.v.value().cols(), 13u * 8u);
  EXPECT_EQ(e.v.value().rows(), 4u);
  for (double v : e.v.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedTest, GroupedLayoutFollowsDeclaredOrder) {
  const ModelConfig c = TinyModel();
  ExitModel model(c, 3);
  const Batch batch = Batch::From(Examples(3, 4));
  Tape tape;
  const Tensor v = model.Embed(tape, batch).v.value();
  // Expected: every user-group field, then item, then context, each in the
  // order it is declared.
  std::size_t offset = 0;
  const std::size_t d = static_cast<std::size_t>(c.embedding_dim);
  for (FieldGroup g : {FieldGroup::kUser, FieldGroup::kItem, FieldGroup::kContext}) {
    for (const FeatureField& f : c.fields) {
      if (f.group != g) continue;
      const Tensor& table = model.params().Get("emb/" + f.name).value;
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto id = static_cast<std::size_t>(batch.ids[ColumnIndex(f.name)][r]);
        for (std::size_t k = 0; k < d; ++k) {
          ASSERT_EQ(v.at(r, offset + k), table.at(id, k)) << f.name;
        }
      }
      offset += d;
    }
  }
  EXPECT_EQ(offset, v.cols());

  // Swapping two user fields swaps their slots in V.
  ModelConfig permuted = c;
  std::swap(permuted.fields[2], permuted.fields[3]);
  ExitModel other(permuted, 3);
  for (Parameter* p : other.params().All()) {
    if (p->name.rfind("emb/", 0) == 0) p->value = model.params().Get(p->name).value;
  }
  Tape t2;
  const Tensor w = other.Embed(t2, batch).v.value();
  EXPECT_NE(v, w);
}

TEST(IpnTest, ZeroTowersGiveOneHalf) {
  ExitModel model(TinyModel(), 5);
  SetAll(model, "tower/", 0.0);
  Tape tape;
  const Batch batch = Batch::From(Examples(6, 1));
  const ForwardState s = model.Forward(tape, batch);
  for (double p : s.p_target.value().data()) EXPECT_EQ(p, 0.5);
  for (double p : s.p_source.value().data()) EXPECT_EQ(p, 0.5);
}

TEST(IpnTest, SaturatedGateSelectsOneExpert) {
  ExitModel model(TinyModel(), 6);
  SetAll(model, "gate/target/w", 0.0);
  Parameter& bias = model.params().Get("gate/target/b");
  bias.value[0] = 800.0;
  bias.value[1] = -800.0;
  const Batch batch = Batch::From(Examples(5, 9));
  Tape tape;
  const EmbedOutput e = model.Embed(tape, batch);
  const IpnOutput ipn = model.IpnForward(tape, e.v);
  EXPECT_EQ(ipn.target_mixture.value(), ipn.experts[0].value());

  // Tower evaluated directly on expert 0.
  const ParameterStore& p = model.params();
  auto c = [&](const std::string& name) { return tape.Constant(p.Get(name).value); };
  Var h = ipn.experts[0];
  h = PRelu(Affine(h, c("tower/target/w0"), c("tower/target/b0")), c("tower/target/a0"));
  h = PRelu(Affine(h, c("tower/target/w1"), c("tower/target/b1")), c("tower/target/a1"));
  const Tensor direct =
      Sigmoid(Affine(h, c("tower/target/out/w"), c("tower/target/out/b"))).value();
  EXPECT_EQ(ipn.p_target.value(), direct);
}

TEST(SsnTest, ZeroOutputLayerGivesOneHalf) {
  ExitModel model(TinyModel(), 7);
  SetAll(model, "ssn/out/", 0.0);
  Tape tape;
  const ForwardState s = model.Forward(tape, Batch::From(Examples(4, 3)));
  for (double p : s.p_trans.value().data()) EXPECT_EQ(p, 0.5);
}

TEST(SsnTest, SceneOnlyFieldMovesTransferButNotTarget) {
  ModelConfig c = TinyModel();
  // Page becomes a scene-only field: it no longer feeds V.
  const int page = ColumnIndex("page");
  c.scene_only_fields.push_back(c.fields[page]);
  c.fields.erase(c.fields.begin() + page);
  ExitModel model(c, 8);
  std::vector<LabeledExample> ex = Examples(1, 5);
  ex[0].features[kPage] = 0;
  const Prediction a = model.Predict(Batch::From(ex))[0];
  ex[0].features[kPage] = 2;
  const Prediction b = model.Predict(Batch::From(ex))[0];
  EXPECT_EQ(a.p_target, b.p_target);
  EXPECT_EQ(a.p_source, b.p_source);
  EXPECT_NE(a.p_trans, b.p_trans);
}

TEST(CombineTest, ReferenceValuesAndClamp) {
  EXPECT_EQ(Combine(0.2, 0.5, 0.0), 0.2);
  EXPECT_NEAR(Combine(0.047, 0.798, 0.792), 0.679, 5e-4);
  EXPECT_NEAR(Combine(0.076, 0.562, 0.048), 0.103, 5e-4);
  EXPECT_EQ(ClampServing(0.679), 0.679);
  EXPECT_EQ(ClampServing(1.37), 1.0);
  for (double x : {0.0, 0.3, 1.0, 1.9}) {
    EXPECT_EQ(ClampServing(ClampServing(x)), ClampServing(x));
  }
  EXPECT_THROW(ClampServing(-0.01), ContractError);
}

TEST(CombineTest, ServingScoreIsMonotone) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double t = u(rng), s = u(rng), x = u(rng), d = 0.1 * u(rng);
    const double base = MakePrediction(t, s, x).p_whole_clamped;
    EXPECT_GE(MakePrediction(std::min(1.0, t + d), s, x).p_whole_clamped, base);
    EXPECT_GE(MakePrediction(t, std::min(1.0, s + d), x).p_whole_clamped, base);
    EXPECT_GE(MakePrediction(t, s, std::min(1.0, x + d)).p_whole_clamped, base);
  }
}

TEST(ForwardTest, PredictionInvariantsAndManualComposition) {
  ExitModel model(TinyModel(), 9);
  const Batch batch = Batch::From(Examples(50, 7));
  const std::vector<Prediction> preds = model.Predict(batch);
  Tape tape;
  const ForwardState s = model.Forward(tape, batch);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Prediction& p = preds[i];
    for (double v : {p.p_target, p.p_source, p.p_trans}) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(p.p_whole, p.p_target + p.p_source * p.p_trans);
    EXPECT_EQ(p.p_whole_clamped, std::min(1.0, p.p_whole));
    EXPECT_GE(p.p_whole, p.p_target);
    EXPECT_EQ(p.p_target, s.ipn.p_target.value()[i]);
    EXPECT_EQ(p.p_trans, s.ssn.p_trans.value()[i]);
    EXPECT_EQ(s.p_whole.value()[i], p.p_whole);
  }
  EXPECT_EQ(model.Predict(batch)[3].p_whole, preds[3].p_whole);
}

TEST(ForwardTest, UnitTransferMode) {
  ExitModel model(TinyModel(), 10);
  ForwardOptions unit;
  unit.transfer = TransferMode::kUnit;
  for (const Prediction& p : model.Predict(Batch::From(Examples(8, 2)), unit)) {
    EXPECT_EQ(p.p_trans, 1.0);
  }
}

// Gradient of the ICL term alone, per parameter group.
struct GroupGrads {
  double ipn = 0.0;
  double ssn = 0.0;
};

GroupGrads IclGradients(bool stop_gradient) {
  ExitModel model(TinyModel(), 11);
  const std::vector<LabeledExample> ex = Examples(32, 8);
  const Batch batch = Batch::From(ex);
  model.params().ZeroGrad();
  Tape tape;
  ForwardOptions options;
  options.use_stop_gradient = stop_gradient;
  const ForwardState s = model.Forward(tape, batch, options);
  tape.Backward(L1Loss(s.p_whole, batch.y_icl));
  GroupGrads g;
  for (Parameter* p : model.IpnParameters()) {
    for (double v : p->grad.data()) g.ipn += std::abs(v);
  }
  for (Parameter* p : model.SsnParameters()) {
    for (double v : p->grad.data()) g.ssn += std::abs(v);
  }
  return g;
}

TEST(StopGradientTest, IclTermTrainsOnlyTheSelector) {
  const GroupGrads on = IclGradients(true);
  EXPECT_EQ(on.ipn, 0.0);
  EXPECT_GT(on.ssn, 0.0);
  const GroupGrads off = IclGradients(false);
  EXPECT_GT(off.ipn, 0.0);
}

TEST(GradientTest, WholeNetworkMatchesFiniteDifferences) {
  ModelConfig c = TinyModel();
  c.fields = SchemaFor(TinyWorld());
  ExitModel model(c, 12);
  const Batch batch = Batch::From(Examples(6, 13));
  std::vector<Parameter*> params = model.params().All();
  // Embeddings start near zero, which leaves hidden pre-activations within a
  // finite-difference step of the PReLU kink. Unit-scale tables avoid that.
  for (Parameter* p : params) {
    if (p->name.rfind("emb/", 0) == 0) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] *= 100.0;
    }
  }
  ForwardOptions options;
  options.use_stop_gradient = false;
  const auto r = testing::CheckGradients(params, [&](Tape& tape) {
    const ForwardState s = model.Forward(tape, batch, options);
    return Add(Add(CrossEntropy(s.p_target, batch.y_target),
                   CrossEntropy(s.p_source, batch.y_source)),
               CrossEntropy(Scale(s.p_whole, 0.5), batch.y_target));
  });
  EXPECT_LT(r.worst_relative, 1e-4) << r.worst_name;
  EXPECT_EQ(r.checked, model.params().TotalElements());
}

TEST(SingleSampleTest, SelectorBiasReachesMedianOptimum) {
  struct Case {
    double y_t, y_s, y_icl;
  };
  for (const Case& k : {Case{1, 1, 2}, Case{0, 0, 0}}) {
    ExitModel model(TinyModel(), 14);
    // Frozen IPN at P_target = a, P_source = b.
    const double a = 0.3, b = 0.6;
    SetAll(model, "tower/target/out/w", 0.0);
    SetAll(model, "tower/source/out/w", 0.0);
    model.params().Get("tower/target/out/b").value.Fill(Logit(a));
    model.params().Get("tower/source/out/b").value.Fill(Logit(b));
    std::vector<LabeledExample> ex = Examples(1, 15);
    ex[0].y_target = static_cast<std::uint8_t>(k.y_t);
    ex[0].y_source = static_cast<std::uint8_t>(k.y_s);
    ex[0].y_icl = k.y_icl;
    const Batch batch = Batch::From(ex);
    Parameter* bias = &model.params().Get("ssn/out/b");
    Parameter* trainable[] = {bias};
    AdamOptions opt;
    opt.learning_rate = 0.05;
    AdamState state = AdamState::For(trainable, opt);
    for (int step = 0; step < 2000; ++step) {
      model.params().ZeroGrad();
      Tape tape;
      const ForwardState s = model.Forward(tape, batch);
      tape.Backward(L1Loss(s.p_whole, batch.y_icl));
      AdamStep(trainable, state);
    }
    const double expected = std::clamp((k.y_icl - a) / b, 0.0, 1.0);
    const Prediction p = model.Predict(batch)[0];
    EXPECT_NEAR(p.p_target, a, 1e-12);
    EXPECT_NEAR(p.p_trans, expected, 0.02) << "y_icl " << k.y_icl;
  }
}

TEST(CheckpointTest, RoundTripIsExact) {
  const auto dir = testing::ScratchDir("model_ckpt");
  ModelConfig c = TinyModel();
  c.use_scene = false;
  ExitModel model(c, 16);
  SaveCheckpoint(dir / "m.ckpt", model);
  const ExitModel back = LoadCheckpoint(dir / "m.ckpt");
  EXPECT_EQ(back.config(), model.config());
  for (const Parameter* p : model.params().All()) {
    EXPECT_EQ(back.params().Get(p->name).value, p->value) << p->name;
  }
  std::ifstream in(dir / "m.ckpt");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "exit-model-v1");
}

TEST(CheckpointTest, Errors) {
  const auto dir = testing::ScratchDir("model_ckpt_bad");
  EXPECT_THROW(LoadCheckpoint(dir / "missing.ckpt"), IoError);
  std::ofstream(dir / "bad.ckpt") << "not-a-checkpoint\n";
  EXPECT_THROW(LoadCheckpoint(dir / "bad.ckpt"), ParseError);
  ParameterStore empty;
  EXPECT_THROW(ExitModel(TinyModel(), empty), DimensionError);
}

}  // namespace
}  // namespace exitrec
