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

#include "exitrec/training.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <future>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include "json.hpp"

#include "exitrec/errors.h"
#include "exitrec/optimizer.h"

namespace exitrec {
namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 7> kVariantNames = {{
    {Variant::kFull, "full"},
    {Variant::kNoIcl, "no_icl"},
    {Variant::kNoSsn, "no_ssn"},
    {Variant::kNoJointLoss, "no_joint_loss"},
    {Variant::kIclEtaZero, "icl_eta_zero"},
    {Variant::kIclAlwaysEta, "icl_always_eta"},
    {Variant::kSingleDomainDnn, "single_domain_dnn"},
}};

constexpr std::uint64_t kShuffleStream = 0x5f3c9a1d2b7e4c61ULL;
constexpr std::uint64_t kRequestSeedOffset = 0x2545f4914f6cdd1dULL;

double ClipProbability(double p) {
  return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

double BinaryCrossEntropy(double p, double y) {
  p = ClipProbability(p);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

void CheckFinite(const LossBreakdown& loss, std::int32_t epoch, std::int64_t step) {
  const std::pair<const char*, double> terms[] = {
      {"target cross-entropy", loss.target},
      {"source cross-entropy", loss.source},
      {"interest-combination L1", loss.icl},
  };
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NonFiniteError(fmt::format(
          "training diverged at epoch {} step {}: {} term is {}", epoch, step,
          name, value));
    }
  }
}

LabeledExample Unlabeled(const InteractionRecord& record) {
  LabeledExample ex;
  ex.features = record.features;
  return ex;
}

}  // namespace

Variant ParseVariant(std::string_view name) {
  for (const auto& [variant, label] : kVariantNames) {
    if (label == name) return variant;
  }
  std::string known;
  for (const auto& entry : kVariantNames) {
    known += known.empty() ? "" : ", ";
    known += entry.second;
  }
  throw ConfigError(fmt::format("unknown variant '{}' (expected one of {})",
                                name, known));
}

std::string_view VariantName(Variant variant) {
  for (const auto& [v, label] : kVariantNames) {
    if (v == variant) return label;
  }
  return "unknown";
}

std::vector<Variant> AllVariants() {
  std::vector<Variant> out;
  for (const auto& entry : kVariantNames) out.push_back(entry.first);
  return out;
}

void LossWeights::Validate() const {
  const std::pair<const char*, double> weights[] = {
      {"lambda1", target}, {"lambda2", source}, {"lambda3", icl}};
  for (const auto& [name, value] : weights) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw ConfigError(fmt::format("{} must be a finite value >= 0, got {}",
                                    name, value));
    }
  }
}

void TrainConfig::Validate() const {
  lambda.Validate();
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(convergence_tolerance >= 0.0)) {
    throw ConfigError("train.convergence_tolerance must be >= 0");
  }
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
}

VariantPlan PlanFor(const TrainConfig& config) {
  VariantPlan plan;
  plan.lambda = config.lambda;
  plan.icl_mode = config.icl_mode;
  plan.forward.use_stop_gradient = config.stop_gradient;
  switch (config.variant) {
    case Variant::kFull:
      break;
    case Variant::kNoIcl:
      plan.forward.transfer = TransferMode::kUnit;
      break;
    case Variant::kNoSsn:
      plan.use_scene = false;
      break;
    case Variant::kNoJointLoss:
      plan.lambda.target = 0.0;
      plan.lambda.source = 0.0;
      plan.forward.use_stop_gradient = false;
      break;
    case Variant::kIclEtaZero:
      plan.icl_mode = IclMode::kEtaZero;
      break;
    case Variant::kIclAlwaysEta:
      plan.icl_mode = IclMode::kAlwaysEta;
      break;
    case Variant::kSingleDomainDnn:
      plan.lambda.source = 0.0;
      plan.lambda.icl = 0.0;
      plan.forward.transfer = TransferMode::kUnit;
      plan.score_target_only = true;
      break;
  }
  return plan;
}

ModelConfig ModelFor(const ModelConfig& base, const VariantPlan& plan) {
  ModelConfig config = base;
  config.use_scene = base.use_scene && plan.use_scene;
  return config;
}

JointLossVars JointLoss(const ForwardState& state, const Batch& batch,
                        const LossWeights& lambda) {
  JointLossVars out;
  out.target = CrossEntropy(state.p_target, batch.y_target);
  out.source = CrossEntropy(state.p_source, batch.y_source);
  out.icl = L1Loss(state.p_whole, batch.y_icl);
  out.total = Add(Add(Scale(out.target, lambda.target),
                      Scale(out.source, lambda.source)),
                  Scale(out.icl, lambda.icl));
  return out;
}

LossBreakdown JointLossValue(std::span<const Prediction> predictions,
                             std::span<const double> y_target,
                             std::span<const double> y_source,
                             std::span<const double> y_icl,
                             const LossWeights& lambda) {
  lambda.Validate();
  const std::size_t n = predictions.size();
  if (y_target.size() != n || y_source.size() != n || y_icl.size() != n) {
    throw DimensionError("joint loss: predictions and labels differ in length");
  }
  LossBreakdown loss;
  if (n == 0) return loss;
  for (std::size_t i = 0; i < n; ++i) {
    loss.target += BinaryCrossEntropy(predictions[i].p_target, y_target[i]);
    loss.source += BinaryCrossEntropy(predictions[i].p_source, y_source[i]);
    loss.icl += std::abs(y_icl[i] - predictions[i].p_whole);
  }
  loss.target /= static_cast<double>(n);
  loss.source /= static_cast<double>(n);
  loss.icl /= static_cast<double>(n);
  loss.total = lambda.target * loss.target + lambda.source * loss.source +
               lambda.icl * loss.icl;
  return loss;
}

bool DetectNonConvergence(std::span<const double> epoch_losses,
                          double tolerance, std::int32_t patience) {
  if (epoch_losses.empty()) return false;
  double best = epoch_losses[0];
  std::int32_t stale = 0;
  for (std::size_t i = 1; i < epoch_losses.size(); ++i) {
    if (epoch_losses[i] < best * (1.0 - tolerance)) {
      best = epoch_losses[i];
      stale = 0;
    } else if (++stale >= patience) {
      return true;
    }
  }
  return false;
}

FitResult Fit(ExitModel& model, std::span<const LabeledExample> train,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  config.Validate();
  const VariantPlan plan = PlanFor(config);
  FitResult result;
  if (config.epochs == 0 || train.empty()) return result;

  std::vector<Parameter*> params = model.params().All();
  AdamOptions adam;
  adam.learning_rate = config.learning_rate;
  AdamState state = AdamState::For(params, adam);
  model.params().ZeroGrad();

  std::mt19937_64 rng(SplitMix64(config.seed ^ kShuffleStream));
  std::vector<std::size_t> order(train.size());
  std::vector<double> totals;
  for (std::int32_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n = std::min<std::size_t>(config.batch_size,
                                                  order.size() - start);
      const Batch batch = Batch::From(
          train, std::span<const std::size_t>(order).subspan(start, n));
      Tape tape;
      JointLossVars loss;
      try {
        const ForwardState forward = model.Forward(tape, batch, plan.forward);
        loss = JointLoss(forward, batch, plan.lambda);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(fmt::format("training diverged at epoch {} step {}: {}",
                                         epoch, result.steps + 1, e.what()));
      }
      LossBreakdown step{loss.target.value().item(), loss.source.value().item(),
                         loss.icl.value().item(), loss.total.value().item()};
      CheckFinite(step, epoch, result.steps + 1);
      tape.Backward(loss.total);
      AdamStep(params, state);
      model.params().ZeroGrad();
      ++result.steps;
      const double w = static_cast<double>(n);
      sum.target += w * step.target;
      sum.source += w * step.source;
      sum.icl += w * step.icl;
      sum.total += w * step.total;
    }
    const double count = static_cast<double>(train.size());
    EpochStats stats{epoch, {sum.target / count, sum.source / count,
                             sum.icl / count, sum.total / count}};
    result.trajectory.push_back(stats);
    totals.push_back(stats.loss.total);
    if (on_epoch) on_epoch(stats);
  }
  result.converged = !DetectNonConvergence(totals, config.convergence_tolerance,
                                           config.patience);
  return result;
}

double Auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  double positives = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Tied block occupies ranks i+1..j; each member gets the mean rank.
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] > 0.5) {
        positive_rank_sum += mean_rank;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) {
    throw UndefinedMetricError("auc needs at least one positive and one negative");
  }
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) /
         (positives * negatives);
}

double LogLoss(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("logloss: scores and labels differ in length");
  }
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sum += BinaryCrossEntropy(scores[i], labels[i]);
  }
  return sum / static_cast<double>(scores.size());
}

ExposureResult SimulateExposure(const std::vector<Request>& requests,
                                const std::vector<std::vector<double>>& scores,
                                const GroundTruth* truth,
                                const ExposureOptions& options) {
  if (truth == nullptr) {
    throw UnsupportedError("exposure simulation needs the synthetic ground truth");
  }
  if (options.top_k < 1) throw ConfigError("eval.top_k must be >= 1");
  if (scores.size() != requests.size()) {
    throw DimensionError("exposure: one score list per request expected");
  }
  ExposureResult result;
  double interest = 0.0;
  std::size_t unwanted = 0;
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& candidates = requests[r].candidates;
    const auto& s = scores[r];
    if (s.size() != candidates.size()) {
      throw DimensionError(fmt::format("exposure: request {} has {} candidates "
                                       "but {} scores", r, candidates.size(),
                                       s.size()));
    }
    order.resize(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Stable so that equal scores keep candidate order.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    const std::size_t k = std::min<std::size_t>(options.top_k, order.size());
    for (std::size_t i = 0; i < k; ++i) {
      const InteractionRecord& record = candidates[order[i]];
      const CellKey key = truth->KeyFor(record);
      const double p = truth->cell(key).p_target;
      interest += p;
      const double tau = truth->categories().at(key.category).transferability;
      if (tau <= options.nfr_max_transferability &&
          p < options.nfr_interest_threshold) {
        ++unwanted;
      }
      ++result.exposures;
    }
  }
  if (result.exposures > 0) {
    const double n = static_cast<double>(result.exposures);
    result.ctcvr_proxy = interest / n;
    result.nfr_proxy = static_cast<double>(unwanted) / n;
  }
  return result;
}

double ServingScore(const Prediction& p, const VariantPlan& plan) {
  return plan.score_target_only ? p.p_target : p.p_whole_clamped;
}

std::vector<std::vector<double>> ScoreRequests(
    const ExitModel& model, const VariantPlan& plan,
    const std::vector<Request>& requests) {
  std::vector<LabeledExample> flat;
  for (const Request& request : requests) {
    for (const InteractionRecord& record : request.candidates) {
      flat.push_back(Unlabeled(record));
    }
  }
  const std::vector<Prediction> predictions = model.Predict(flat, plan.forward);
  std::vector<std::vector<double>> scores;
  scores.reserve(requests.size());
  std::size_t next = 0;
  for (const Request& request : requests) {
    std::vector<double>& row = scores.emplace_back();
    for (std::size_t c = 0; c < request.candidates.size(); ++c) {
      row.push_back(ServingScore(predictions[next++], plan));
    }
  }
  return scores;
}

std::string MetricsReport::ToText() const {
  std::string out;
  auto line = [&out](std::string_view key, const auto& value) {
    out += fmt::format("{}: {}\n", key, value);
  };
  line("variant", variant);
  line("n_test", n_test);
  line("auc", fmt::format("{:.6f}", auc));
  line("logloss", fmt::format("{:.6f}", logloss));
  line("loss_target", fmt::format("{:.6f}", test_loss.target));
  line("loss_source", fmt::format("{:.6f}", test_loss.source));
  line("loss_icl", fmt::format("{:.6f}", test_loss.icl));
  line("loss_total", fmt::format("{:.6f}", test_loss.total));
  if (has_exposure) {
    line("ctcvr_proxy", fmt::format("{:.6f}", ctcvr_proxy));
    line("nfr_proxy", fmt::format("{:.6f}", nfr_proxy));
  }
  for (std::size_t c = 0; c < mean_p_trans_by_category.size(); ++c) {
    line(fmt::format("mean_p_trans.category{}", c),
         fmt::format("{:.6f}", mean_p_trans_by_category[c]));
  }
  for (const EpochStats& e : trajectory) {
    line(fmt::format("epoch{}.loss", e.epoch), fmt::format("{:.6f}", e.loss.total));
  }
  line("converged", converged ? "true" : "false");
  return out;
}

std::string MetricsReport::ToJson() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["n_test"] = n_test;
  j["auc"] = auc;
  j["logloss"] = logloss;
  j["loss"] = {{"target", test_loss.target},
               {"source", test_loss.source},
               {"icl", test_loss.icl},
               {"total", test_loss.total}};
  if (has_exposure) {
    j["ctcvr_proxy"] = ctcvr_proxy;
    j["nfr_proxy"] = nfr_proxy;
  }
  nlohmann::json trans = nlohmann::json::array();
  for (double v : mean_p_trans_by_category) {
    trans.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json());
  }
  j["mean_p_trans_by_category"] = trans;
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochStats& e : trajectory) epochs.push_back(e.loss.total);
  j["epoch_loss"] = epochs;
  j["converged"] = converged;
  return j.dump();
}

void AppendLedger(const std::filesystem::path& path, const MetricsReport& report) {
  const std::string line = report.ToJson() + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) {
    throw IoError(fmt::format("cannot open results ledger {}: {}", path.string(),
                              std::strerror(errno)));
  }
  const ssize_t written = ::write(fd, line.data(), line.size());
  const int saved = errno;
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) {
    throw IoError(fmt::format("short write to results ledger {}: {}",
                              path.string(), std::strerror(saved)));
  }
}

MetricsReport Evaluate(const ExitModel& model, const VariantPlan& plan,
                       std::span<const LabeledExample> test,
                       std::int32_t n_categories,
                       const std::vector<Request>* requests,
                       const GroundTruth* truth,
                       const ExposureOptions& exposure) {
  MetricsReport report;
  report.n_test = test.size();
  const std::vector<Prediction> predictions = model.Predict(test, plan.forward);
  std::vector<double> scores, y_t, y_s, y_icl;
  scores.reserve(test.size());
  std::vector<double> trans_sum(n_categories, 0.0);
  std::vector<std::size_t> trans_count(n_categories, 0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    scores.push_back(ServingScore(predictions[i], plan));
    y_t.push_back(test[i].y_target);
    y_s.push_back(test[i].y_source);
    y_icl.push_back(test[i].y_icl);
    const std::int32_t c = test[i].features[kCategory1];
    if (c >= 0 && c < n_categories) {
      trans_sum[c] += predictions[i].p_trans;
      ++trans_count[c];
    }
  }
  report.auc = Auc(scores, y_t);
  report.logloss = LogLoss(scores, y_t);
  report.test_loss = JointLossValue(predictions, y_t, y_s, y_icl, plan.lambda);
  for (std::int32_t c = 0; c < n_categories; ++c) {
    report.mean_p_trans_by_category.push_back(
        trans_count[c] ? trans_sum[c] / static_cast<double>(trans_count[c])
                       : std::numeric_limits<double>::quiet_NaN());
  }
  if (requests != nullptr && truth != nullptr) {
    const ExposureResult r = SimulateExposure(
        *requests, ScoreRequests(model, plan, *requests), truth, exposure);
    report.ctcvr_proxy = r.ctcvr_proxy;
    report.nfr_proxy = r.nfr_proxy;
    report.has_exposure = true;
  }
  return report;
}

Experiment PrepareExperiment(const WorldConfig& world,
                             const ExperimentOptions& options) {
  world.Validate();
  Experiment e;
  e.world = world;
  e.schema = SchemaFor(world);
  GeneratedData data = Generate(world);
  auto [train, test] = Split(data.records, options.train_fraction, world.seed);
  e.train = std::move(train);
  e.test = std::move(test);
  e.gci = ComputeGci(e.train);
  e.truth = std::move(data.truth);
  e.requests = ExperimentRequests(world, options);
  return e;
}

std::vector<Request> ExperimentRequests(const WorldConfig& world,
                                        const ExperimentOptions& options) {
  if (options.n_requests <= 0) return {};
  return MakeRequests(BuildWorld(world), options.n_requests,
                      options.n_candidates, world.seed + kRequestSeedOffset);
}

ModelConfig DefaultModelConfig(const FeatureSchema& schema) {
  ModelConfig config;
  config.fields = schema;
  return config;
}

RunResult RunVariant(const Experiment& experiment, const ModelConfig& base,
                     const TrainConfig& config, const ExposureOptions& exposure,
                     const EpochCallback& on_epoch) {
  const VariantPlan plan = PlanFor(config);
  const std::vector<LabeledExample> train =
      LabelDataset(experiment.train, experiment.gci, plan.icl_mode, experiment.schema);
  const std::vector<LabeledExample> test =
      LabelDataset(experiment.test, experiment.gci, plan.icl_mode, experiment.schema);
  ExitModel model(ModelFor(base, plan), config.seed);
  const FitResult fit = Fit(model, train, config, on_epoch);
  MetricsReport report =
      Evaluate(model, plan, test, experiment.truth.n_categories(),
               experiment.requests.empty() ? nullptr : &experiment.requests,
               &experiment.truth, exposure);
  report.variant = std::string(VariantName(config.variant));
  report.trajectory = fit.trajectory;
  report.converged = fit.converged;
  return {std::move(report), std::move(model)};
}

std::vector<MetricsReport> RunAblation(const Experiment& experiment,
                                       const ModelConfig& base,
                                       const TrainConfig& config,
                                       std::span<const Variant> variants,
                                       const ExposureOptions& exposure,
                                       bool parallel) {
  auto run = [&](Variant v) {
    TrainConfig c = config;
    c.variant = v;
    return RunVariant(experiment, base, c, exposure).report;
  };
  std::vector<MetricsReport> out;
  if (!parallel) {
    for (Variant v : variants) out.push_back(run(v));
    return out;
  }
  std::vector<std::future<MetricsReport>> futures;
  for (Variant v : variants) futures.push_back(std::async(std::launch::async, run, v));
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

std::vector<LossWeights> DefaultLambdaGrid() {
  std::vector<LossWeights> grid = {LossWeights{}};
  for (int which = 0; which < 3; ++which) {
    for (double v : {0.1, 0.5, 2.0}) {
      LossWeights w;
      (which == 0 ? w.target : which == 1 ? w.source : w.icl) = v;
      grid.push_back(w);
    }
  }
  return grid;
}

std::vector<SweepRow> SweepLambda(const Experiment& experiment,
                                  const ModelConfig& base,
                                  const TrainConfig& config,
                                  std::span<const LossWeights> grid,
                                  bool parallel) {
  auto run = [&](const LossWeights& w) {
    TrainConfig c = config;
    c.lambda = w;
    const RunResult r = RunVariant(experiment, base, c);
    SweepRow row;
    row.lambda = w;
    row.auc = r.report.auc;
    row.logloss = r.report.logloss;
    row.converged = r.report.converged;
    row.degenerate = w.AllZero();
    return row;
  };
  std::vector<SweepRow> rows;
  if (!parallel) {
    for (const LossWeights& w : grid) rows.push_back(run(w));
    return rows;
  }
  std::vector<std::future<SweepRow>> futures;
  for (const LossWeights& w : grid) {
    futures.push_back(std::async(std::launch::async, run, w));
  }
  for (auto& f : futures) rows.push_back(f.get());
  return rows;
}

std::string SweepTable(std::span<const SweepRow> rows) {
  std::string out = "lambda1\tlambda2\tlambda3\tauc\tlogloss\tconverged\tflag\n";
  for (const SweepRow& r : rows) {
    out += fmt::format("{:g}\t{:g}\t{:g}\t{:.6f}\t{:.6f}\t{}\t{}\n",
                       r.lambda.target, r.lambda.source, r.lambda.icl, r.auc,
                       r.logloss, r.converged ? "yes" : "no",
                       r.degenerate ? "degenerate" : "-");
  }
  return out;
}

}  // namespace exitrec
