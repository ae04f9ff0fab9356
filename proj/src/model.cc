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

#include "exitrec/model.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "exitrec/errors.h"

namespace exitrec {
namespace {

enum class InitKind { kEmbedding, kWeight, kBias, kSlope };

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  InitKind kind;
};

constexpr std::array<const char*, 2> kTasks = {"target", "source"};
constexpr double kEmbeddingInitRange = 0.01;
constexpr double kInitialSlope = 0.25;

void AddDense(std::vector<ParamSpec>& specs, const std::string& prefix,
              const std::string& suffix, std::size_t in, std::size_t out,
              bool with_slope) {
  specs.push_back({prefix + "/w" + suffix, {in, out}, InitKind::kWeight});
  specs.push_back({prefix + "/b" + suffix, {out}, InitKind::kBias});
  if (with_slope) {
    specs.push_back({prefix + "/a" + suffix, {out}, InitKind::kSlope});
  }
}

std::vector<ParamSpec> Layout(const ModelConfig& c) {
  std::vector<ParamSpec> specs;
  const std::size_t dim = c.embedding_dim;
  for (const FeatureField& f : c.fields) {
    specs.push_back({"emb/" + f.name,
                     {static_cast<std::size_t>(f.vocab_size), dim},
                     InitKind::kEmbedding});
  }
  for (const FeatureField& f : c.scene_only_fields) {
    specs.push_back({"emb/scene/" + f.name,
                     {static_cast<std::size_t>(f.vocab_size), dim},
                     InitKind::kEmbedding});
  }
  const std::size_t input = c.input_width();
  for (int k = 0; k < c.num_experts; ++k) {
    std::size_t in = input;
    for (std::size_t l = 0; l < c.expert_hidden.size(); ++l) {
      AddDense(specs, fmt::format("expert{}", k), std::to_string(l), in,
               c.expert_hidden[l], true);
      in = c.expert_hidden[l];
    }
  }
  for (const char* task : kTasks) {
    AddDense(specs, fmt::format("gate/{}", task), "", input, c.num_experts,
             false);
  }
  for (const char* task : kTasks) {
    std::size_t in = c.expert_hidden.back();
    for (std::size_t l = 0; l < c.tower_hidden.size(); ++l) {
      AddDense(specs, fmt::format("tower/{}", task), std::to_string(l), in,
               c.tower_hidden[l], true);
      in = c.tower_hidden[l];
    }
    AddDense(specs, fmt::format("tower/{}/out", task), "", in, 1, false);
  }
  AddDense(specs, "ssn/compress", "", input, c.ssn_compressed_width, false);
  std::size_t in = c.ssn_compressed_width;
  if (c.use_scene) in += c.scene_fields.size() * dim;
  for (std::size_t l = 0; l < c.ssn_hidden.size(); ++l) {
    AddDense(specs, "ssn", std::to_string(l), in, c.ssn_hidden[l], true);
    in = c.ssn_hidden[l];
  }
  AddDense(specs, "ssn/out", "", in, 1, false);
  return specs;
}

int FieldIndex(const FeatureSchema& schema, const std::string& name) {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

// Embedding table name for a scene field.
std::string SceneTable(const ModelConfig& c, const std::string& name) {
  if (FieldIndex(c.scene_only_fields, name) >= 0) return "emb/scene/" + name;
  return "emb/" + name;
}

bool StartsWith(const std::string& s, std::string_view prefix) {
  return s.rfind(prefix, 0) == 0;
}

// Affine followed by PReLU for each hidden layer named prefix/{w,b,a}<l>.
Var HiddenStack(Var x, const std::string& prefix, std::size_t layers,
                const std::function<Var(const std::string&)>& param) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string s = std::to_string(l);
    x = PRelu(Affine(x, param(prefix + "/w" + s), param(prefix + "/b" + s)),
              param(prefix + "/a" + s));
  }
  return x;
}

}  // namespace

void ModelConfig::Validate() const {
  if (embedding_dim < 1) throw ConfigError("model.embedding_dim must be >= 1");
  if (num_experts < 1) throw ConfigError("model.num_experts must be >= 1");
  if (expert_hidden.empty()) {
    throw ConfigError("model.expert_hidden needs at least one layer");
  }
  if (ssn_compressed_width < 1) {
    throw ConfigError("model.ssn_compressed_width must be >= 1");
  }
  auto positive = [](const std::vector<std::int32_t>& sizes, const char* name) {
    for (std::int32_t s : sizes) {
      if (s < 1) throw ConfigError(fmt::format("model.{} sizes must be >= 1", name));
    }
  };
  positive(expert_hidden, "expert_hidden");
  positive(tower_hidden, "tower_hidden");
  positive(ssn_hidden, "ssn_hidden");
  if (fields.empty()) throw ConfigError("model has no feature fields");
  for (FieldGroup g : {FieldGroup::kUser, FieldGroup::kItem, FieldGroup::kContext}) {
    bool any = false;
    for (const FeatureField& f : fields) any = any || f.group == g;
    if (!any) {
      throw ConfigError(fmt::format("model needs at least one {} field",
                                    GroupName(g)));
    }
  }
  for (const FeatureSchema* schema : {&fields, &scene_only_fields}) {
    for (const FeatureField& f : *schema) {
      if (ColumnIndex(f.name) < 0) {
        throw ConfigError("model field '" + f.name + "' is not a record column");
      }
      if (f.vocab_size < 1) {
        throw ConfigError("model field '" + f.name + "' has an empty vocabulary");
      }
    }
  }
  for (const FeatureField& f : scene_only_fields) {
    if (FieldIndex(fields, f.name) >= 0) {
      throw ConfigError("scene-only field '" + f.name + "' is also an input field");
    }
  }
  if (use_scene) {
    if (scene_fields.empty()) throw ConfigError("model.scene_fields is empty");
    for (const std::string& s : scene_fields) {
      if (FieldIndex(fields, s) < 0 && FieldIndex(scene_only_fields, s) < 0) {
        throw ConfigError("scene field '" + s + "' is not an embedded field");
      }
    }
  }
}

Batch Batch::From(std::span<const LabeledExample> examples) {
  Batch batch;
  for (auto& col : batch.ids) col.reserve(examples.size());
  for (const LabeledExample& ex : examples) {
    for (int c = 0; c < kNumFeatureColumns; ++c) batch.ids[c].push_back(ex.features[c]);
    batch.y_target.push_back(ex.y_target);
    batch.y_source.push_back(ex.y_source);
    batch.y_icl.push_back(ex.y_icl);
  }
  return batch;
}

Batch Batch::From(std::span<const LabeledExample> examples,
                  std::span<const std::size_t> indices) {
  Batch batch;
  for (auto& col : batch.ids) col.reserve(indices.size());
  for (std::size_t i : indices) {
    const LabeledExample& ex = examples[i];
    for (int c = 0; c < kNumFeatureColumns; ++c) batch.ids[c].push_back(ex.features[c]);
    batch.y_target.push_back(ex.y_target);
    batch.y_source.push_back(ex.y_source);
    batch.y_icl.push_back(ex.y_icl);
  }
  return batch;
}

double Combine(double p_target, double p_source, double p_trans) {
  return p_target + p_source * p_trans;
}

double ClampServing(double p_whole) {
  if (!(p_whole >= 0.0)) {
    throw ContractError(fmt::format("serving score {} is negative", p_whole));
  }
  return std::min(1.0, p_whole);
}

Prediction MakePrediction(double p_target, double p_source, double p_trans) {
  Prediction p;
  p.p_target = p_target;
  p.p_source = p_source;
  p.p_trans = p_trans;
  p.p_whole = Combine(p_target, p_source, p_trans);
  p.p_whole_clamped = ClampServing(p.p_whole);
  return p;
}

Var CombineOnTape(Var p_target, Var p_source, Var p_trans,
                  bool use_stop_gradient) {
  if (use_stop_gradient) {
    p_target = StopGradient(p_target);
    p_source = StopGradient(p_source);
  }
  return Add(p_target, Mul(p_source, p_trans));
}

ExitModel::ExitModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.Validate();
  for (const FeatureField& f : config_.fields) {
    field_columns_.push_back(ColumnIndex(f.name));
  }
  InitParameters(seed);
}

ExitModel::ExitModel(ModelConfig config, ParameterStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.Validate();
  for (const FeatureField& f : config_.fields) {
    field_columns_.push_back(ColumnIndex(f.name));
  }
  CheckParameters();
}

void ExitModel::InitParameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const ParamSpec& spec : Layout(config_)) {
    Tensor t(spec.shape);
    switch (spec.kind) {
      case InitKind::kEmbedding: {
        std::uniform_real_distribution<double> u(-kEmbeddingInitRange,
                                                 kEmbeddingInitRange);
        for (double& v : t.data()) v = u(rng);
        break;
      }
      case InitKind::kWeight: {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (double& v : t.data()) v = u(rng);
        break;
      }
      case InitKind::kBias:
        break;
      case InitKind::kSlope:
        t.Fill(kInitialSlope);
        break;
    }
    params_.Add(spec.name, std::move(t));
  }
}

void ExitModel::CheckParameters() const {
  const std::vector<ParamSpec> specs = Layout(config_);
  if (specs.size() != params_.size()) {
    throw DimensionError(fmt::format("model expects {} parameters, got {}",
                                     specs.size(), params_.size()));
  }
  for (const ParamSpec& spec : specs) {
    if (!params_.Contains(spec.name)) {
      throw DimensionError("missing parameter " + spec.name);
    }
    const Parameter& p = params_.Get(spec.name);
    if (p.value.shape() != spec.shape) {
      throw DimensionError("parameter " + spec.name + " has shape " +
                           p.value.ShapeString());
    }
    if (!p.value.AllFinite()) {
      throw NonFiniteError("parameter " + spec.name + " holds non-finite values");
    }
  }
}

std::vector<Parameter*> ExitModel::EmbeddingParameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : params_.All()) {
    if (StartsWith(p->name, "emb/")) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> ExitModel::IpnParameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : params_.All()) {
    if (StartsWith(p->name, "expert") || StartsWith(p->name, "gate/") ||
        StartsWith(p->name, "tower/")) {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Parameter*> ExitModel::SsnParameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : params_.All()) {
    if (StartsWith(p->name, "ssn/")) out.push_back(p);
  }
  return out;
}

ExitModel::Binder ExitModel::WatchAll(Tape& tape) {
  // This object is non-const here, so handing out mutable parameters to the
  // tape is sound.
  return [&tape](const Parameter& p) {
    return tape.Watch(const_cast<Parameter&>(p));
  };
}

EmbedOutput ExitModel::EmbedWith(Tape& tape, const Batch& batch,
                                 const Binder& bind) const {
  (void)tape;
  EmbedOutput out;
  Var* slots[] = {&out.user, &out.item, &out.context};
  const FieldGroup groups[] = {FieldGroup::kUser, FieldGroup::kItem,
                               FieldGroup::kContext};
  for (int g = 0; g < 3; ++g) {
    std::vector<Var> parts;
    for (std::size_t f = 0; f < config_.fields.size(); ++f) {
      if (config_.fields[f].group != groups[g]) continue;
      const Parameter& table = params_.Get("emb/" + config_.fields[f].name);
      parts.push_back(EmbeddingLookup(bind(table), batch.ids[field_columns_[f]]));
    }
    *slots[g] = parts.size() == 1 ? parts[0] : Concat(parts);
  }
  out.v = Concat({out.user, out.item, out.context});
  return out;
}

IpnOutput ExitModel::IpnWith(Tape& tape, Var v, const Binder& bind) const {
  (void)tape;
  auto param = [&](const std::string& name) { return bind(params_.Get(name)); };
  IpnOutput out;
  for (int k = 0; k < config_.num_experts; ++k) {
    out.experts.push_back(HiddenStack(v, fmt::format("expert{}", k),
                                      config_.expert_hidden.size(), param));
  }
  Var* gates[] = {&out.target_gate, &out.source_gate};
  Var* mixtures[] = {&out.target_mixture, &out.source_mixture};
  Var* probs[] = {&out.p_target, &out.p_source};
  for (int t = 0; t < 2; ++t) {
    const std::string task = kTasks[t];
    *gates[t] = Softmax(Affine(v, param("gate/" + task + "/w"),
                               param("gate/" + task + "/b")));
    *mixtures[t] = GatedMixture(*gates[t], out.experts);
    Var h = HiddenStack(*mixtures[t], "tower/" + task,
                        config_.tower_hidden.size(), param);
    *probs[t] = Sigmoid(Affine(h, param("tower/" + task + "/out/w"),
                               param("tower/" + task + "/out/b")));
  }
  return out;
}

SsnOutput ExitModel::SsnWith(Tape& tape, const EmbedOutput& embed,
                             const Batch& batch, const Binder& bind) const {
  (void)tape;
  auto param = [&](const std::string& name) { return bind(params_.Get(name)); };
  SsnOutput out;
  out.hidden = Affine(Concat({embed.user, embed.item, embed.context}),
                      param("ssn/compress/w"), param("ssn/compress/b"));
  Var input = out.hidden;
  if (config_.use_scene) {
    std::vector<Var> parts;
    for (const std::string& name : config_.scene_fields) {
      parts.push_back(EmbeddingLookup(param(SceneTable(config_, name)),
                                      batch.ids[ColumnIndex(name)]));
    }
    out.scene = parts.size() == 1 ? parts[0] : Concat(parts);
    input = Concat({out.hidden, out.scene});
  }
  out.mlp = HiddenStack(input, "ssn", config_.ssn_hidden.size(), param);
  out.p_trans = Sigmoid(Affine(out.mlp, param("ssn/out/w"), param("ssn/out/b")));
  return out;
}

ForwardState ExitModel::ForwardWith(Tape& tape, const Batch& batch,
                                    const ForwardOptions& options,
                                    const Binder& bind) const {
  ForwardState state;
  state.embed = EmbedWith(tape, batch, bind);
  state.ipn = IpnWith(tape, state.embed.v, bind);
  state.p_target = state.ipn.p_target;
  state.p_source = state.ipn.p_source;
  if (options.transfer == TransferMode::kUnit) {
    Tensor ones({batch.size(), 1});
    ones.Fill(1.0);
    state.p_trans = tape.Constant(std::move(ones));
  } else {
    state.ssn = SsnWith(tape, state.embed, batch, bind);
    state.p_trans = state.ssn.p_trans;
  }
  state.p_whole = CombineOnTape(state.p_target, state.p_source, state.p_trans,
                                options.use_stop_gradient);
  return state;
}

ForwardState ExitModel::Forward(Tape& tape, const Batch& batch,
                                const ForwardOptions& options) {
  return ForwardWith(tape, batch, options, WatchAll(tape));
}

EmbedOutput ExitModel::Embed(Tape& tape, const Batch& batch) {
  return EmbedWith(tape, batch, WatchAll(tape));
}

IpnOutput ExitModel::IpnForward(Tape& tape, Var v) {
  return IpnWith(tape, v, WatchAll(tape));
}

SsnOutput ExitModel::SsnForward(Tape& tape, const EmbedOutput& embed,
                                const Batch& batch) {
  return SsnWith(tape, embed, batch, WatchAll(tape));
}

std::vector<Prediction> ExitModel::Predict(const Batch& batch,
                                           const ForwardOptions& options) const {
  if (batch.size() == 0) return {};
  Tape tape;
  std::unordered_map<const Parameter*, Var> bound;
  Binder bind = [&](const Parameter& p) {
    auto it = bound.find(&p);
    if (it != bound.end()) return it->second;
    Var v = tape.Constant(p.value);
    bound.emplace(&p, v);
    return v;
  };
  const ForwardState s = ForwardWith(tape, batch, options, bind);
  std::vector<Prediction> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i] = MakePrediction(s.p_target.value()[i], s.p_source.value()[i],
                            s.p_trans.value()[i]);
  }
  return out;
}

std::vector<Prediction> ExitModel::Predict(
    std::span<const LabeledExample> examples, const ForwardOptions& options,
    std::size_t chunk) const {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, examples.size() - start);
    const std::vector<Prediction> part =
        Predict(Batch::From(examples.subspan(start, n)), options);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

namespace {

std::string JoinInts(const std::vector<std::int32_t>& values) {
  return fmt::format("{}", fmt::join(values, " "));
}

std::vector<std::int32_t> ParseInts(std::istringstream& in) {
  std::vector<std::int32_t> out;
  std::int32_t v = 0;
  while (in >> v) out.push_back(v);
  return out;
}

FieldGroup ParseGroup(const std::string& name, const std::string& source,
                      long line) {
  if (name == "user") return FieldGroup::kUser;
  if (name == "item") return FieldGroup::kItem;
  if (name == "context") return FieldGroup::kContext;
  throw ParseError(source, line, "unknown field group '" + name + "'");
}

}  // namespace

void SaveCheckpoint(const std::filesystem::path& path, const ExitModel& model) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  const ModelConfig& c = model.config();
  out << "exit-model-v1\n";
  out << "config embedding_dim " << c.embedding_dim << '\n';
  out << "config num_experts " << c.num_experts << '\n';
  out << "config expert_hidden " << JoinInts(c.expert_hidden) << '\n';
  out << "config tower_hidden " << JoinInts(c.tower_hidden) << '\n';
  out << "config ssn_compressed_width " << c.ssn_compressed_width << '\n';
  out << "config ssn_hidden " << JoinInts(c.ssn_hidden) << '\n';
  out << "config use_scene " << (c.use_scene ? 1 : 0) << '\n';
  out << "config scene_fields " << fmt::format("{}", fmt::join(c.scene_fields, " "))
      << '\n';
  for (const FeatureField& f : c.fields) {
    out << "field " << f.name << ' ' << GroupName(f.group) << ' ' << f.vocab_size
        << '\n';
  }
  for (const FeatureField& f : c.scene_only_fields) {
    out << "scene_field " << f.name << ' ' << GroupName(f.group) << ' '
        << f.vocab_size << '\n';
  }
  std::string line;
  for (const Parameter* p : model.params().All()) {
    line = "param " + p->name + ' ' + std::to_string(p->value.rank());
    for (std::size_t d : p->value.shape()) line += ' ' + std::to_string(d);
    line += '\n';
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (i) line += ' ';
      line += fmt::format("{:.17g}", p->value[i]);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ExitModel LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("checkpoint not found: " + path.string() +
                  " (run `exitrec train` first)");
  }
  const std::string source = path.string();
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line) || line != "exit-model-v1") {
    throw ParseError(source, 1, "missing exit-model-v1 header");
  }
  ++line_no;
  ModelConfig c;
  c.fields.clear();
  c.scene_fields.clear();
  ParameterStore params;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string kind;
    row >> kind;
    if (kind == "config") {
      std::string key;
      row >> key;
      if (key == "embedding_dim") row >> c.embedding_dim;
      else if (key == "num_experts") row >> c.num_experts;
      else if (key == "expert_hidden") c.expert_hidden = ParseInts(row);
      else if (key == "tower_hidden") c.tower_hidden = ParseInts(row);
      else if (key == "ssn_compressed_width") row >> c.ssn_compressed_width;
      else if (key == "ssn_hidden") c.ssn_hidden = ParseInts(row);
      else if (key == "use_scene") {
        int flag = 0;
        row >> flag;
        c.use_scene = flag != 0;
      } else if (key == "scene_fields") {
        std::string name;
        while (row >> name) c.scene_fields.push_back(name);
      } else {
        throw ParseError(source, line_no, "unknown config key '" + key + "'");
      }
    } else if (kind == "field" || kind == "scene_field") {
      FeatureField f;
      std::string group;
      if (!(row >> f.name >> group >> f.vocab_size)) {
        throw ParseError(source, line_no, "bad " + kind + " line");
      }
      f.group = ParseGroup(group, source, line_no);
      (kind == "field" ? c.fields : c.scene_only_fields).push_back(f);
    } else if (kind == "param") {
      std::string name;
      std::size_t rank = 0;
      if (!(row >> name >> rank)) throw ParseError(source, line_no, "bad param line");
      std::vector<std::size_t> shape(rank);
      for (std::size_t& d : shape) {
        if (!(row >> d)) throw ParseError(source, line_no, "bad param shape");
      }
      Tensor t(shape);
      if (!std::getline(in, line)) {
        throw ParseError(source, line_no, "missing values for " + name);
      }
      ++line_no;
      const char* cursor = line.c_str();
      for (std::size_t i = 0; i < t.size(); ++i) {
        char* end = nullptr;
        t[i] = std::strtod(cursor, &end);
        if (end == cursor) {
          throw ParseError(source, line_no,
                           fmt::format("parameter {} has {} values, expected {}",
                                       name, i, t.size()));
        }
        cursor = end;
      }
      params.Add(name, std::move(t));
    } else {
      throw ParseError(source, line_no, "unknown record '" + kind + "'");
    }
  }
  return ExitModel(std::move(c), std::move(params));
}

}  // namespace exitrec
