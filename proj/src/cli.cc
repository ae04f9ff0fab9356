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

#include "exitrec/cli.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "exitrec/config.h"
#include "exitrec/datagen.h"
#include "exitrec/errors.h"
#include "exitrec/labels.h"
#include "exitrec/training.h"

namespace exitrec {
namespace {

namespace fs = std::filesystem;

constexpr const char* kTrainLog = "train.csv";
constexpr const char* kTestLog = "test.csv";
constexpr const char* kTruthFile = "ground_truth.txt";
constexpr const char* kGciFile = "gci.txt";
constexpr const char* kCheckpointFile = "model.ckpt";
constexpr const char* kReportFile = "report.txt";
constexpr const char* kLedgerFile = "results.jsonl";

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string data;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* data_opt = nullptr;
};

void AddCommon(CLI::App* app, Common& c, bool with_data) {
  app->add_option("--config", c.config, "INI run configuration")
      ->check(CLI::ExistingFile);
  c.seed_opt = app->add_option("--seed", c.seed, "seed for the world and training");
  c.out_opt = app->add_option("--out", c.out, "output directory");
  if (with_data) {
    c.data_opt = app->add_option("--data", c.data, "directory written by gen-data");
  }
}

RunConfig Resolve(const Common& c) {
  RunConfig config = c.config.empty() ? RunConfig{} : RunConfig::Load(c.config);
  if (c.seed_opt->count() > 0) config.SetSeed(c.seed);
  if (c.data_opt != nullptr && c.data_opt->count() > 0) config.paths.data_dir = c.data;
  if (c.out_opt->count() > 0) config.paths.out_dir = c.out;
  config.Validate();
  return config;
}

void RequireFile(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) {
    throw IoError(fmt::format("file not found: {} ({})", path.string(), hint));
  }
}

LogData LoadLog(const fs::path& path) {
  RequireFile(path, "run `exitrec gen-data` to create it");
  return ReadLog(path);
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

GciMap LoadOrComputeGci(const fs::path& data_dir,
                        const std::vector<InteractionRecord>& train,
                        std::ostream& out) {
  const fs::path path = data_dir / kGciFile;
  if (fs::exists(path)) return GciMap::Load(path);
  GciMap gci = ComputeGci(train);
  gci.Save(path);
  out << fmt::format("computed group consistency for {} items -> {}\n",
                     gci.values().size(), path.string());
  return gci;
}

// Experiment assembled from the files of a data directory.
Experiment LoadExperiment(const RunConfig& config, std::ostream& out) {
  const fs::path dir = config.paths.data_dir;
  Experiment e;
  e.world = config.world;
  e.schema = SchemaFor(config.world);
  e.train = LoadLog(dir / kTrainLog).records;
  e.test = LoadLog(dir / kTestLog).records;
  e.gci = LoadOrComputeGci(dir, e.train, out);
  RequireFile(dir / kTruthFile, "run `exitrec gen-data` to create it");
  e.truth = GroundTruth::Load(dir / kTruthFile);
  e.requests = ExperimentRequests(config.world, config.eval.experiment);
  return e;
}

std::string StatsTable(const std::vector<std::pair<std::string, DatasetStats>>& splits) {
  std::string out = fmt::format("{:<8}{:>10}{:>8}{:>8}{:>12}{:>12}", "split",
                                "samples", "users", "items", "target_buy",
                                "source_buy");
  const std::size_t domains =
      splits.empty() ? 0 : splits.front().second.per_domain_purchases.size();
  for (std::size_t d = 0; d < domains; ++d) {
    out += fmt::format("{:>10}", fmt::format("y_s{}", d + 1));
  }
  out += '\n';
  for (const auto& [name, s] : splits) {
    out += fmt::format("{:<8}{:>10}{:>8}{:>8}{:>12}{:>12}", name, s.samples,
                       s.users, s.items, s.target_purchases, s.source_purchases);
    for (std::size_t count : s.per_domain_purchases) {
      out += fmt::format("{:>10}", count);
    }
    out += '\n';
  }
  return out;
}

int GenData(const Common& c, std::ostream& out) {
  RunConfig config = Resolve(c);
  const fs::path dir = c.out_opt->count() > 0 ? fs::path(c.out) : config.paths.data_dir;
  config.paths.data_dir = dir;
  config.Echo(dir);
  GeneratedData data = Generate(config.world);
  auto [train, test] =
      Split(data.records, config.eval.experiment.train_fraction, config.world.seed);
  WriteLog(dir / kTrainLog, train, config.world.n_source_domains);
  WriteLog(dir / kTestLog, test, config.world.n_source_domains);
  data.truth.Save(dir / kTruthFile);
  out << StatsTable({{"train", ComputeStats(train)}, {"test", ComputeStats(test)}});
  out << fmt::format("wrote {}, {}, {} to {}\n", kTrainLog, kTestLog, kTruthFile,
                     dir.string());
  return kExitOk;
}

int ComputeGciCommand(const Common& c, const std::string& log_path,
                      std::ostream& out) {
  const RunConfig config = Resolve(c);
  const fs::path data_dir = config.paths.data_dir;
  const fs::path input = log_path.empty() ? data_dir / kTrainLog : fs::path(log_path);
  const fs::path target = c.out_opt->count() > 0 ? fs::path(c.out) : data_dir / kGciFile;
  RequireFile(input, "pass --log or run gen-data first");
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const GciMap gci = ComputeGci(LoadLog(input).records);
  gci.Save(target);
  out << fmt::format("group consistency for {} items -> {}\n", gci.values().size(),
                     target.string());
  return kExitOk;
}

void Finish(const RunConfig& config, const MetricsReport& report, std::ostream& out) {
  const fs::path dir = config.paths.out_dir;
  WriteText(dir / kReportFile, report.ToText());
  AppendLedger(dir / kLedgerFile, report);
  out << report.ToText();
}

int NotConverged(const TrainConfig& config, std::ostream& err) {
  err << fmt::format(
      "not converged: loss failed to improve by {} (relative) for {} "
      "consecutive epochs\n",
      config.convergence_tolerance, config.patience);
  return kExitNotConverged;
}

struct TrainFlags {
  std::string variant;
  double lambda[3] = {0, 0, 0};
  CLI::Option* lambda_opt[3] = {nullptr, nullptr, nullptr};
  std::int32_t epochs = 0;
  CLI::Option* epochs_opt = nullptr;
};

void ApplyTrainFlags(const TrainFlags& f, RunConfig& config) {
  if (!f.variant.empty()) config.train.variant = ParseVariant(f.variant);
  double* targets[] = {&config.train.lambda.target, &config.train.lambda.source,
                       &config.train.lambda.icl};
  for (int i = 0; i < 3; ++i) {
    if (f.lambda_opt[i]->count() > 0) *targets[i] = f.lambda[i];
  }
  if (f.epochs_opt->count() > 0) config.train.epochs = f.epochs;
  config.Validate();
}

int Train(const Common& c, const TrainFlags& flags, std::ostream& out,
          std::ostream& err) {
  RunConfig config = Resolve(c);
  ApplyTrainFlags(flags, config);
  const fs::path data_dir = config.paths.data_dir;
  const LogData train_log = LoadLog(data_dir / kTrainLog);
  const GciMap gci = LoadOrComputeGci(data_dir, train_log.records, out);
  config.Echo(config.paths.out_dir);

  const VariantPlan plan = PlanFor(config.train);
  const FeatureSchema schema = SchemaFor(config.world);
  const std::vector<LabeledExample> train =
      LabelDataset(train_log.records, gci, plan.icl_mode, schema);
  ExitModel model(ModelFor(config.ResolvedModel(), plan), config.train.seed);
  out << fmt::format("training {} on {} samples\n", VariantName(config.train.variant),
                     train.size());
  const FitResult fit = Fit(model, train, config.train, [&out](const EpochStats& s) {
    out << fmt::format("epoch {} loss {:.6f} (target {:.6f} source {:.6f} icl {:.6f})\n",
                       s.epoch, s.loss.total, s.loss.target, s.loss.source,
                       s.loss.icl);
    out.flush();
  });
  SaveCheckpoint(fs::path(config.paths.out_dir) / kCheckpointFile, model);

  MetricsReport report;
  const fs::path test_path = data_dir / kTestLog;
  if (fs::exists(test_path)) {
    const std::vector<LabeledExample> test =
        LabelDataset(LoadLog(test_path).records, gci, plan.icl_mode, schema);
    std::optional<GroundTruth> truth;
    std::vector<Request> requests;
    if (fs::exists(data_dir / kTruthFile)) {
      truth = GroundTruth::Load(data_dir / kTruthFile);
      requests = ExperimentRequests(config.world, config.eval.experiment);
    }
    report = Evaluate(model, plan, test, config.world.n_categories(),
                      truth ? &requests : nullptr, truth ? &*truth : nullptr,
                      config.eval.exposure);
  } else {
    err << "no test log at " << test_path.string() << "; metrics skipped\n";
  }
  report.variant = std::string(VariantName(config.train.variant));
  report.trajectory = fit.trajectory;
  report.converged = fit.converged;
  Finish(config, report, out);
  return fit.converged ? kExitOk : NotConverged(config.train, err);
}

int Eval(const Common& c, const std::string& checkpoint, std::ostream& out) {
  RunConfig config = Resolve(c);
  const fs::path data_dir = config.paths.data_dir;
  const fs::path ckpt = checkpoint.empty()
                            ? fs::path(config.paths.out_dir) / kCheckpointFile
                            : fs::path(checkpoint);
  RequireFile(ckpt, "run `exitrec train` to create it");
  const ExitModel model = LoadCheckpoint(ckpt);
  const VariantPlan plan = PlanFor(config.train);
  const LogData train_log = LoadLog(data_dir / kTrainLog);
  const GciMap gci = LoadOrComputeGci(data_dir, train_log.records, out);
  const std::vector<LabeledExample> test =
      LabelDataset(LoadLog(data_dir / kTestLog).records, gci, plan.icl_mode,
                   SchemaFor(config.world));
  std::optional<GroundTruth> truth;
  std::vector<Request> requests;
  if (fs::exists(data_dir / kTruthFile)) {
    truth = GroundTruth::Load(data_dir / kTruthFile);
    requests = ExperimentRequests(config.world, config.eval.experiment);
  }
  MetricsReport report =
      Evaluate(model, plan, test, config.world.n_categories(),
               truth ? &requests : nullptr, truth ? &*truth : nullptr,
               config.eval.exposure);
  report.variant = std::string(VariantName(config.train.variant));
  fs::create_directories(config.paths.out_dir);
  config.Echo(config.paths.out_dir);
  Finish(config, report, out);
  return kExitOk;
}

std::string AblationTable(const std::vector<MetricsReport>& reports) {
  std::string out = "variant\tauc\tlogloss\tctcvr_proxy\tnfr_proxy\tconverged\tnote\n";
  for (const MetricsReport& r : reports) {
    out += fmt::format("{}\t{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}\t{}\t{}\n", r.variant,
                       r.auc, r.logloss, r.ctcvr_proxy, r.nfr_proxy,
                       r.converged ? "yes" : "no",
                       r.variant == "full" ? "baseline" : "-");
  }
  return out;
}

int Ablate(const Common& c, const std::string& variants, std::ostream& out) {
  RunConfig config = Resolve(c);
  if (!variants.empty()) {
    config.eval.variants.clear();
    std::stringstream in(variants);
    std::string name;
    while (std::getline(in, name, ',')) config.eval.variants.push_back(ParseVariant(name));
    config.Validate();
  }
  const Experiment e = LoadExperiment(config, out);
  config.Echo(config.paths.out_dir);
  const std::vector<MetricsReport> reports =
      RunAblation(e, config.ResolvedModel(), config.train, config.eval.variants,
                  config.eval.exposure, config.eval.parallel);
  const std::string table = AblationTable(reports);
  WriteText(fs::path(config.paths.out_dir) / "ablation.tsv", table);
  for (const MetricsReport& r : reports) {
    AppendLedger(fs::path(config.paths.out_dir) / kLedgerFile, r);
  }
  out << table;
  return kExitOk;
}

std::vector<LossWeights> ParseGrid(const std::string& text) {
  std::vector<LossWeights> grid;
  std::stringstream in(text);
  std::string point;
  while (std::getline(in, point, ';')) {
    if (point.empty()) continue;
    LossWeights w;
    char c1 = 0, c2 = 0;
    std::istringstream p(point);
    if (!(p >> w.target >> c1 >> w.source >> c2 >> w.icl) || c1 != ',' ||
        c2 != ',' || !(p >> std::ws).eof()) {
      throw ConfigError("grid point '" + point + "' must be l1,l2,l3");
    }
    w.Validate();
    grid.push_back(w);
  }
  if (grid.empty()) throw ConfigError("--grid names no points");
  return grid;
}

int Sweep(const Common& c, const std::string& grid_text, std::ostream& out) {
  RunConfig config = Resolve(c);
  const std::vector<LossWeights> grid =
      grid_text.empty() ? DefaultLambdaGrid() : ParseGrid(grid_text);
  const Experiment e = LoadExperiment(config, out);
  config.Echo(config.paths.out_dir);
  const std::vector<SweepRow> rows = SweepLambda(
      e, config.ResolvedModel(), config.train, grid, config.eval.parallel);
  const std::string table = SweepTable(rows);
  WriteText(fs::path(config.paths.out_dir) / "sweep.tsv", table);
  out << table;
  return kExitOk;
}

int ExplainCommand(const Common& c, const std::string& checkpoint,
                   const std::string& candidates, std::size_t cutoff,
                   bool cutoff_set, int precision, std::ostream& out) {
  const RunConfig config = Resolve(c);
  const fs::path ckpt = checkpoint.empty()
                            ? fs::path(config.paths.out_dir) / kCheckpointFile
                            : fs::path(checkpoint);
  RequireFile(ckpt, "run `exitrec train` to create it");
  const ExitModel model = LoadCheckpoint(ckpt);
  const std::vector<InteractionRecord> records = ReadCandidates(candidates);
  const std::size_t k =
      cutoff_set ? cutoff : static_cast<std::size_t>(config.eval.exposure.top_k);
  out << FormatExplain(Explain(model, records, k), precision);
  return kExitOk;
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<InteractionRecord> ReadCandidates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read candidates: " + path.string());
  const std::string source = path.string();
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line)) throw ParseError(source, 1, "empty candidate file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = SplitCsv(line);
  if (header.size() < static_cast<std::size_t>(kNumFeatureColumns)) {
    throw ParseError(source, 1, "header names too few columns");
  }
  for (int i = 0; i < kNumFeatureColumns; ++i) {
    if (header[i] != kFeatureColumnNames[i]) {
      throw ParseError(source, 1,
                       fmt::format("header column {} is '{}', expected '{}'", i + 1,
                                   header[i], kFeatureColumnNames[i]));
    }
  }
  std::vector<InteractionRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = SplitCsv(line);
    if (fields.size() != header.size()) {
      throw ParseError(source, line_no,
                       fmt::format("expected {} columns, found {}", header.size(),
                                   fields.size()));
    }
    InteractionRecord r;
    for (int i = 0; i < kNumFeatureColumns; ++i) {
      const std::string& f = fields[i];
      std::int32_t v = 0;
      const auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || end != f.data() + f.size() || f.empty() || v < 0) {
        throw ParseError(source, line_no,
                         fmt::format("column {} value '{}' is not a feature id",
                                     kFeatureColumnNames[i], f));
      }
      r.features[i] = v;
    }
    records.push_back(r);
  }
  return records;
}

std::vector<ExplainRow> Explain(const ExitModel& model,
                                const std::vector<InteractionRecord>& candidates,
                                std::size_t cutoff) {
  std::vector<LabeledExample> examples;
  const ModelConfig& config = model.config();
  for (const InteractionRecord& r : candidates) {
    for (const FeatureField& f : config.fields) {
      const std::int32_t id = r.features[ColumnIndex(f.name)];
      if (id >= f.vocab_size) {
        throw EncodingError(fmt::format("candidate {} id {} exceeds vocabulary {}",
                                        f.name, id, f.vocab_size));
      }
    }
    LabeledExample ex;
    ex.features = r.features;
    examples.push_back(ex);
  }
  const std::vector<Prediction> predictions = model.Predict(examples);
  std::vector<ExplainRow> rows(candidates.size());
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].p_whole_clamped > predictions[b].p_whole_clamped;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].candidate = i + 1;
    rows[i].item_id = candidates[i].item_id();
    rows[i].prediction = predictions[i];
  }
  for (std::size_t r = 0; r < order.size(); ++r) {
    rows[order[r]].rank = r + 1;
    rows[order[r]].exposed = r < cutoff;
  }
  return rows;
}

std::string FormatExplain(const std::vector<ExplainRow>& rows, int precision) {
  std::string out = fmt::format("{:<10}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>6}  {}\n",
                                "candidate", "item", "P_target", "P_source",
                                "P_trans", "P_whole", "served", "rank", "exposed");
  for (const ExplainRow& r : rows) {
    const Prediction& p = r.prediction;
    out += fmt::format("{:<10}{:>8}{:>10.{}f}{:>10.{}f}{:>10.{}f}{:>10.{}f}{:>10.{}f}{:>6}  {}\n",
                       r.candidate, r.item_id, p.p_target, precision, p.p_source,
                       precision, p.p_trans, precision, p.p_whole, precision,
                       p.p_whole_clamped, precision, r.rank, r.exposed ? "yes" : "no");
  }
  return out;
}

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Explicit interest transfer recommender: data, training, evaluation"};
  app.name("exitrec");
  app.require_subcommand(1);

  Common gen_common, gci_common, train_common, eval_common, ablate_common,
      sweep_common, explain_common;
  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic logs");
  AddCommon(gen, gen_common, false);
  CLI::App* gci = app.add_subcommand("compute-gci", "compute group consistency");
  AddCommon(gci, gci_common, true);
  std::string gci_log;
  gci->add_option("--log", gci_log, "training log (default <data>/train.csv)");

  TrainFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "train a model and report metrics");
  AddCommon(train, train_common, true);
  train->add_option("--variant", train_flags.variant, "ablation variant");
  const char* lambda_names[] = {"--lambda1", "--lambda2", "--lambda3"};
  for (int i = 0; i < 3; ++i) {
    train_flags.lambda_opt[i] =
        train->add_option(lambda_names[i], train_flags.lambda[i], "loss weight");
  }
  train_flags.epochs_opt = train->add_option("--epochs", train_flags.epochs);

  std::string eval_checkpoint;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  AddCommon(eval, eval_common, true);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate");

  std::string ablate_variants;
  CLI::App* ablate = app.add_subcommand("ablate", "compare ablation variants");
  AddCommon(ablate, ablate_common, true);
  ablate->add_option("--variants", ablate_variants, "comma-separated variants");

  std::string sweep_grid;
  CLI::App* sweep = app.add_subcommand("sweep", "loss-weight sensitivity sweep");
  AddCommon(sweep, sweep_common, true);
  sweep->add_option("--grid", sweep_grid, "points l1,l2,l3 separated by ';'");

  std::string explain_checkpoint, explain_candidates;
  std::size_t explain_cutoff = 0;
  int explain_precision = 3;
  CLI::App* explain = app.add_subcommand("explain", "score decomposition per candidate");
  AddCommon(explain, explain_common, false);
  explain->add_option("--checkpoint", explain_checkpoint, "trained checkpoint");
  explain->add_option("--candidates", explain_candidates, "candidate CSV")->required();
  CLI::Option* cutoff_opt =
      explain->add_option("--cutoff", explain_cutoff, "rank cutoff for exposure");
  explain->add_option("--precision", explain_precision, "decimals printed")
      ->check(CLI::Range(0, 12));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return GenData(gen_common, out);
    if (gci->parsed()) return ComputeGciCommand(gci_common, gci_log, out);
    if (train->parsed()) return Train(train_common, train_flags, out, err);
    if (eval->parsed()) return Eval(eval_common, eval_checkpoint, out);
    if (ablate->parsed()) return Ablate(ablate_common, ablate_variants, out);
    if (sweep->parsed()) return Sweep(sweep_common, sweep_grid, out);
    if (explain->parsed()) {
      return ExplainCommand(explain_common, explain_checkpoint, explain_candidates,
                            explain_cutoff, cutoff_opt->count() > 0,
                            explain_precision, out);
    }
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitParse;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const EncodingError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace exitrec
