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

// Joint loss, the training loop, offline metrics, the exposure simulator and
// the ablation and sensitivity runners.

#ifndef EXITREC_TRAINING_H_
#define EXITREC_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exitrec/datagen.h"
#include "exitrec/labels.h"
#include "exitrec/model.h"

namespace exitrec {

enum class Variant {
  kFull,
  kNoIcl,            // P_trans fixed at 1
  kNoSsn,            // SSN sees only E_hid
  kNoJointLoss,      // L1 term alone, no stop gradient
  kIclEtaZero,       // ICL built with eta = 0
  kIclAlwaysEta,     // ICL = y_t + eta
  kSingleDomainDnn,  // target tower only, scored by P_target
};

Variant ParseVariant(std::string_view name);  // ConfigError
std::string_view VariantName(Variant variant);
std::vector<Variant> AllVariants();

struct LossWeights {
  double target = 1.0;  // lambda1
  double source = 1.0;  // lambda2
  double icl = 1.0;     // lambda3

  void Validate() const;  // ConfigError on a negative weight
  bool AllZero() const { return target == 0.0 && source == 0.0 && icl == 0.0; }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct TrainConfig {
  LossWeights lambda;
  std::int32_t batch_size = 384;
  std::int32_t epochs = 5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  bool stop_gradient = true;
  IclMode icl_mode = IclMode::kStandard;
  Variant variant = Variant::kFull;
  // An epoch improves when its loss drops below best * (1 - tolerance).
  double convergence_tolerance = 1e-3;
  std::int32_t patience = 3;

  void Validate() const;  // ConfigError
};

// Settings actually used once the variant has been applied.
struct VariantPlan {
  LossWeights lambda;
  IclMode icl_mode = IclMode::kStandard;
  ForwardOptions forward;
  bool use_scene = true;
  bool score_target_only = false;
};

VariantPlan PlanFor(const TrainConfig& config);
ModelConfig ModelFor(const ModelConfig& base, const VariantPlan& plan);

struct LossBreakdown {
  double target = 0.0;  // CE(y_t, P_target)
  double source = 0.0;  // CE(y_s, P_source)
  double icl = 0.0;     // |y_icl - P_whole|
  double total = 0.0;   // weighted sum
};

struct JointLossVars {
  Var target, source, icl, total;
};

JointLossVars JointLoss(const ForwardState& state, const Batch& batch,
                        const LossWeights& lambda);
LossBreakdown JointLossValue(std::span<const Prediction> predictions,
                             std::span<const double> y_target,
                             std::span<const double> y_source,
                             std::span<const double> y_icl,
                             const LossWeights& lambda);

struct EpochStats {
  std::int32_t epoch = 0;
  LossBreakdown loss;  // sample-weighted mean over the epoch
};

struct FitResult {
  std::vector<EpochStats> trajectory;
  bool converged = true;
  std::int64_t steps = 0;
};

// True when `patience` consecutive epochs fail to improve on the best loss.
bool DetectNonConvergence(std::span<const double> epoch_losses,
                          double tolerance, std::int32_t patience);

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch Adam over shuffled data. Throws NonFiniteError naming the term
// that diverged.
FitResult Fit(ExitModel& model, std::span<const LabeledExample> train,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

// Rank-sum AUC with ties counted as one half. UndefinedMetricError when only
// one class is present.
double Auc(std::span<const double> scores, std::span<const double> labels);
// Mean binary cross-entropy with scores clipped to [1e-7, 1 - 1e-7].
double LogLoss(std::span<const double> scores, std::span<const double> labels);

struct ExposureOptions {
  std::int32_t top_k = 5;
  double nfr_max_transferability = 0.05;
  double nfr_interest_threshold = 0.01;
};

struct ExposureResult {
  double ctcvr_proxy = 0.0;
  double nfr_proxy = 0.0;
  std::size_t exposures = 0;
};

// scores[r][c] ranks candidate c of request r; the top k are exposed.
// UnsupportedError when `truth` is null.
ExposureResult SimulateExposure(const std::vector<Request>& requests,
                                const std::vector<std::vector<double>>& scores,
                                const GroundTruth* truth,
                                const ExposureOptions& options = {});

double ServingScore(const Prediction& p, const VariantPlan& plan);
std::vector<std::vector<double>> ScoreRequests(const ExitModel& model,
                                               const VariantPlan& plan,
                                               const std::vector<Request>& requests);

struct MetricsReport {
  std::string variant;
  std::size_t n_test = 0;
  double auc = 0.0;
  double logloss = 0.0;
  LossBreakdown test_loss;
  double ctcvr_proxy = 0.0;
  double nfr_proxy = 0.0;
  bool has_exposure = false;
  std::vector<double> mean_p_trans_by_category;  // NaN where no samples
  std::vector<EpochStats> trajectory;
  bool converged = true;

  std::string ToText() const;  // key: value lines
  std::string ToJson() const;  // one line
};

// Appends one JSON line with a single write on an O_APPEND descriptor.
void AppendLedger(const std::filesystem::path& path, const MetricsReport& report);

MetricsReport Evaluate(const ExitModel& model, const VariantPlan& plan,
                       std::span<const LabeledExample> test,
                       std::int32_t n_categories,
                       const std::vector<Request>* requests,
                       const GroundTruth* truth,
                       const ExposureOptions& exposure = {});

// Everything a fit-and-evaluate run needs, built once per world.
struct Experiment {
  WorldConfig world;
  FeatureSchema schema;
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> test;
  GciMap gci;  // computed on the training split
  GroundTruth truth;
  std::vector<Request> requests;
};

struct ExperimentOptions {
  double train_fraction = 0.8;
  std::int32_t n_requests = 2000;
  std::int32_t n_candidates = 20;
};

Experiment PrepareExperiment(const WorldConfig& world,
                             const ExperimentOptions& options = {});
// The simulated requests PrepareExperiment attaches for this world.
std::vector<Request> ExperimentRequests(const WorldConfig& world,
                                        const ExperimentOptions& options = {});

ModelConfig DefaultModelConfig(const FeatureSchema& schema);

struct RunResult {
  MetricsReport report;
  ExitModel model;
};

RunResult RunVariant(const Experiment& experiment, const ModelConfig& base,
                     const TrainConfig& config,
                     const ExposureOptions& exposure = {},
                     const EpochCallback& on_epoch = {});

// One report per variant, in request order, sharing config.seed. Variants
// run on separate threads when `parallel` is set.
std::vector<MetricsReport> RunAblation(const Experiment& experiment,
                                       const ModelConfig& base,
                                       const TrainConfig& config,
                                       std::span<const Variant> variants,
                                       const ExposureOptions& exposure = {},
                                       bool parallel = false);

struct SweepRow {
  LossWeights lambda;
  double auc = 0.0;
  double logloss = 0.0;
  bool converged = true;
  bool degenerate = false;  // every weight zero: nothing is trained
};

// Each weight in {0.1, 0.5, 1, 2} with the others at 1; (1, 1, 1) once.
std::vector<LossWeights> DefaultLambdaGrid();

std::vector<SweepRow> SweepLambda(const Experiment& experiment,
                                  const ModelConfig& base,
                                  const TrainConfig& config,
                                  std::span<const LossWeights> grid,
                                  bool parallel = false);

// Tab-separated, header first.
std::string SweepTable(std::span<const SweepRow> rows);

}  // namespace exitrec

#endif  // EXITREC_TRAINING_H_
