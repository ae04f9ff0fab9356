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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "exitrec/datagen.h"
#include "exitrec/errors.h"
#include "exitrec/training.h"
#include "test_util.h"

namespace exitrec {
namespace {

WorldConfig SmallWorld(std::uint64_t seed = 3) {
  WorldConfig w;
  w.n_users = 60;
  w.n_items = 40;
  w.n_exposures = 3000;
  w.seed = seed;
  return w;
}

ModelConfig SmallModel(const FeatureSchema& schema) {
  ModelConfig c;
  c.fields = schema;
  c.embedding_dim = 4;
  c.expert_hidden = {8};
  c.tower_hidden = {6};
  c.ssn_compressed_width = 6;
  c.ssn_hidden = {6};
  return c;
}

std::vector<LabeledExample> SmallDataset(std::uint64_t seed = 3) {
  const WorldConfig w = SmallWorld(seed);
  const GeneratedData data = Generate(w);
  return LabelDataset(data.records, ComputeGci(data.records), IclMode::kStandard,
                      SchemaFor(w));
}

double PairCountAuc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1.0 || y[j] != 0.0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

TEST(VariantTest, NamesRoundTrip) {
  for (Variant v : AllVariants()) EXPECT_EQ(ParseVariant(VariantName(v)), v);
  EXPECT_EQ(AllVariants().size(), 7u);
  EXPECT_THROW(ParseVariant("no_such_variant"), ConfigError);
}

TEST(VariantTest, Plans) {
  TrainConfig c;
  c.variant = Variant::kNoIcl;
  EXPECT_EQ(PlanFor(c).forward.transfer, TransferMode::kUnit);
  c.variant = Variant::kNoSsn;
  EXPECT_FALSE(PlanFor(c).use_scene);
  c.variant = Variant::kNoJointLoss;
  VariantPlan p = PlanFor(c);
  EXPECT_EQ(p.lambda.target, 0.0);
  EXPECT_EQ(p.lambda.source, 0.0);
  EXPECT_GT(p.lambda.icl, 0.0);
  EXPECT_FALSE(p.forward.use_stop_gradient);
  c.variant = Variant::kIclEtaZero;
  EXPECT_EQ(PlanFor(c).icl_mode, IclMode::kEtaZero);
  c.variant = Variant::kIclAlwaysEta;
  EXPECT_EQ(PlanFor(c).icl_mode, IclMode::kAlwaysEta);
  c.variant = Variant::kSingleDomainDnn;
  p = PlanFor(c);
  EXPECT_TRUE(p.score_target_only);
  EXPECT_EQ(p.lambda.source, 0.0);
  EXPECT_EQ(p.lambda.icl, 0.0);
  c.variant = Variant::kFull;
  p = PlanFor(c);
  EXPECT_TRUE(p.forward.use_stop_gradient);
  EXPECT_TRUE(p.use_scene);
  EXPECT_EQ(p.lambda, LossWeights{});
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.lambda.icl = -1.0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.Validate(), ConfigError);
}

TEST(JointLossTest, HandValue) {
  const Prediction p = MakePrediction(0.5, 0.5, 0.5);
  const std::vector<Prediction> preds = {p};
  const std::vector<double> yt = {1.0}, ys = {0.0}, yicl = {1.0};
  const LossBreakdown l = JointLossValue(preds, yt, ys, yicl, LossWeights{});
  EXPECT_NEAR(l.target, std::log(2.0), 1e-12);
  EXPECT_NEAR(l.source, std::log(2.0), 1e-12);
  EXPECT_NEAR(l.icl, 0.25, 1e-12);
  EXPECT_NEAR(l.total, 1.6362943611198906, 1e-12);
  const LossBreakdown w = JointLossValue(preds, yt, ys, yicl, LossWeights{2.0, 0.5, 4.0});
  EXPECT_NEAR(w.total, 2.0 * l.target + 0.5 * l.source + 4.0 * l.icl, 1e-12);
}

TEST(JointLossTest, TapeMatchesDirectEvaluation) {
  const std::vector<LabeledExample> ex = SmallDataset();
  const std::vector<LabeledExample> head(ex.begin(), ex.begin() + 64);
  ExitModel model(SmallModel(SchemaFor(SmallWorld())), 4);
  const Batch batch = Batch::From(head);
  const LossWeights lambda{0.7, 1.3, 2.0};
  Tape tape;
  const JointLossVars vars = JointLoss(model.Forward(tape, batch), batch, lambda);
  const LossBreakdown direct = JointLossValue(model.Predict(head), batch.y_target,
                                              batch.y_source, batch.y_icl, lambda);
  EXPECT_NEAR(vars.target.value().item(), direct.target, 1e-12);
  EXPECT_NEAR(vars.source.value().item(), direct.source, 1e-12);
  EXPECT_NEAR(vars.icl.value().item(), direct.icl, 1e-12);
  EXPECT_NEAR(vars.total.value().item(), direct.total, 1e-12);
  EXPECT_NEAR(direct.total,
              0.7 * direct.target + 1.3 * direct.source + 2.0 * direct.icl, 1e-12);
}

TEST(AucTest, MatchesPairCountingOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    // Coarse scores produce ties.
    const int levels = 1 + static_cast<int>(rng() % 12);
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % levels) / levels;
      y[i] = static_cast<double>(rng() % 2);
    }
    y[0] = 1.0;
    y[1] = 0.0;
    ASSERT_NEAR(Auc(s, y), PairCountAuc(s, y), 1e-12) << "n=" << n;
  }
}

TEST(AucTest, EdgeCases) {
  EXPECT_EQ(Auc(std::vector<double>{0.9, 0.1}, std::vector<double>{1, 0}), 1.0);
  EXPECT_EQ(Auc(std::vector<double>{0.1, 0.9}, std::vector<double>{1, 0}), 0.0);
  EXPECT_EQ(Auc(std::vector<double>{0.4, 0.4}, std::vector<double>{1, 0}), 0.5);
  EXPECT_THROW(Auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}),
               UndefinedMetricError);
  EXPECT_THROW(Auc(std::vector<double>{0.1}, std::vector<double>{1, 0}),
               DimensionError);
}

TEST(LogLossTest, HandValueAndFormula) {
  EXPECT_NEAR(LogLoss(std::vector<double>{0.9, 0.2}, std::vector<double>{1, 0}),
              -(std::log(0.9) + std::log(0.8)) / 2.0, 1e-12);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<double> s(n), y(n);
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = u(rng);
      y[i] = static_cast<double>(rng() % 2);
      expected -= y[i] * std::log(s[i]) + (1.0 - y[i]) * std::log(1.0 - s[i]);
    }
    ASSERT_NEAR(LogLoss(s, y), expected / n, 1e-10);
  }
  // Clipped rather than infinite.
  EXPECT_TRUE(std::isfinite(LogLoss(std::vector<double>{0.0}, std::vector<double>{1})));
}

class ExposureTest : public ::testing::Test {
 protected:
  void SetUp() override {
    world_ = BuildWorld(SmallWorld());
    requests_ = MakeRequests(world_, 400, 12, 9);
  }
  std::vector<std::vector<double>> Oracle() const {
    std::vector<std::vector<double>> s;
    for (const Request& r : requests_) {
      auto& row = s.emplace_back();
      for (const InteractionRecord& c : r.candidates) {
        row.push_back(world_.truth.TargetProbability(c));
      }
    }
    return s;
  }
  std::vector<std::vector<double>> Random(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> s;
    for (const Request& r : requests_) {
      auto& row = s.emplace_back();
      for (std::size_t i = 0; i < r.candidates.size(); ++i) row.push_back(u(rng));
    }
    return s;
  }
  double MeanInterest() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const Request& r : requests_) {
      for (const InteractionRecord& c : r.candidates) {
        sum += world_.truth.TargetProbability(c);
        ++n;
      }
    }
    return sum / n;
  }

  World world_;
  std::vector<Request> requests_;
};

TEST_F(ExposureTest, OracleIsAnUpperBound) {
  const ExposureResult oracle = SimulateExposure(requests_, Oracle(), &world_.truth);
  EXPECT_EQ(oracle.exposures, requests_.size() * 5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ExposureResult random = SimulateExposure(requests_, Random(seed), &world_.truth);
    EXPECT_GE(oracle.ctcvr_proxy, random.ctcvr_proxy);
  }
}

TEST_F(ExposureTest, RandomPolicyMatchesCandidateMean) {
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    sum += SimulateExposure(requests_, Random(seed), &world_.truth).ctcvr_proxy;
  }
  EXPECT_NEAR(sum / 20.0, MeanInterest(), 0.1 * MeanInterest());
}

TEST_F(ExposureTest, FullCatalogMakesPoliciesEqual) {
  ExposureOptions all;
  all.top_k = 12;
  const ExposureResult a = SimulateExposure(requests_, Oracle(), &world_.truth, all);
  const ExposureResult b = SimulateExposure(requests_, Random(1), &world_.truth, all);
  EXPECT_NEAR(a.ctcvr_proxy, b.ctcvr_proxy, 1e-12);
  EXPECT_EQ(a.nfr_proxy, b.nfr_proxy);
  EXPECT_NEAR(a.ctcvr_proxy, MeanInterest(), 1e-12);
}

TEST_F(ExposureTest, Errors) {
  EXPECT_THROW(SimulateExposure(requests_, Oracle(), nullptr), UnsupportedError);
  ExposureOptions zero;
  zero.top_k = 0;
  EXPECT_THROW(SimulateExposure(requests_, Oracle(), &world_.truth, zero), ConfigError);
  auto short_scores = Oracle();
  short_scores.pop_back();
  EXPECT_THROW(SimulateExposure(requests_, short_scores, &world_.truth), DimensionError);
}

TEST(ConvergenceTest, Detector) {
  const std::vector<double> improving = {1.0, 0.9, 0.8, 0.7, 0.6};
  EXPECT_FALSE(DetectNonConvergence(improving, 1e-3, 3));
  const std::vector<double> flat = {1.0, 0.5, 0.49999, 0.49998, 0.49997};
  EXPECT_TRUE(DetectNonConvergence(flat, 1e-3, 3));
  const std::vector<double> two_stale = {1.0, 0.5, 0.5, 0.5};
  EXPECT_FALSE(DetectNonConvergence(two_stale, 1e-3, 3));
  const std::vector<double> recovered = {1.0, 0.5, 0.5, 0.5, 0.4, 0.4};
  EXPECT_FALSE(DetectNonConvergence(recovered, 1e-3, 3));
  EXPECT_FALSE(DetectNonConvergence(std::vector<double>{}, 1e-3, 3));
}

TEST(FitTest, LossDecreasesAndIsDeterministic) {
  const std::vector<LabeledExample> ex = SmallDataset();
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 64;
  config.learning_rate = 3e-3;
  const ModelConfig mc = SmallModel(SchemaFor(SmallWorld()));
  ExitModel a(mc, 7), b(mc, 7);
  const FitResult ra = Fit(a, ex, config);
  const FitResult rb = Fit(b, ex, config);
  ASSERT_EQ(ra.trajectory.size(), 3u);
  EXPECT_LT(ra.trajectory.back().loss.total, ra.trajectory.front().loss.total);
  EXPECT_EQ(ra.steps, 3 * ((static_cast<std::int64_t>(ex.size()) + 63) / 64));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ra.trajectory[i].loss.total, rb.trajectory[i].loss.total);
  }
  for (const Parameter* p : a.params().All()) {
    EXPECT_EQ(p->value, b.params().Get(p->name).value) << p->name;
  }
}

TEST(FitTest, ZeroEpochsLeavesModelUntouched) {
  const std::vector<LabeledExample> ex = SmallDataset();
  const ModelConfig mc = SmallModel(SchemaFor(SmallWorld()));
  ExitModel a(mc, 7);
  const ExitModel fresh(mc, 7);
  TrainConfig config;
  config.epochs = 0;
  const FitResult r = Fit(a, ex, config);
  EXPECT_TRUE(r.trajectory.empty());
  for (const Parameter* p : a.params().All()) {
    EXPECT_EQ(p->value, fresh.params().Get(p->name).value);
  }
}

TEST(SweepTest, GridAndDegenerateRows) {
  const std::vector<LossWeights> grid = DefaultLambdaGrid();
  EXPECT_EQ(grid.size(), 10u);
  EXPECT_EQ(std::count(grid.begin(), grid.end(), LossWeights{}), 1);
  for (const LossWeights& w : grid) EXPECT_FALSE(w.AllZero());
  SweepRow zero;
  zero.lambda = LossWeights{0.0, 0.0, 0.0};
  zero.degenerate = true;
  SweepRow one;
  const std::vector<SweepRow> rows = {one, zero};
  const std::string table = SweepTable(rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_NE(table.find("degenerate"), std::string::npos);
}

TEST(ReportTest, TextJsonAndLedger) {
  MetricsReport r;
  r.variant = "full";
  r.auc = 0.75;
  r.mean_p_trans_by_category = {0.5, std::nan("")};
  EXPECT_NE(r.ToText().find("auc: 0.75"), std::string::npos);
  const std::string json = r.ToJson();
  EXPECT_EQ(json.find('\n'), std::string::npos);
  EXPECT_NE(json.find("\"variant\":\"full\""), std::string::npos);
  const auto dir = testing::ScratchDir("ledger");
  AppendLedger(dir / "results.jsonl", r);
  AppendLedger(dir / "results.jsonl", r);
  std::ifstream in(dir / "results.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line, json);
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST(RunVariantTest, SmallEndToEnd) {
  ExperimentOptions options;
  options.n_requests = 50;
  const Experiment e = PrepareExperiment(SmallWorld(), options);
  TrainConfig config;
  config.epochs = 2;
  config.batch_size = 128;
  const RunResult r = RunVariant(e, SmallModel(e.schema), config);
  EXPECT_EQ(r.report.variant, "full");
  EXPECT_EQ(r.report.n_test, e.test.size());
  EXPECT_GT(r.report.auc, 0.0);
  EXPECT_LT(r.report.auc, 1.0);
  EXPECT_TRUE(r.report.has_exposure);
  EXPECT_EQ(r.report.trajectory.size(), 2u);
  EXPECT_EQ(r.report.mean_p_trans_by_category.size(),
            e.world.categories.size());
}

}  // namespace
}  // namespace exitrec
