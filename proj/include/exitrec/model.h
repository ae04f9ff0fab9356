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

// The explicit interest-transfer network.
//
//   V       = [E_user || E_item || E_context]            shared embeddings
//   experts = MLP_k(V), k = 1..K                          shared by both tasks
//   P_t     = sigmoid(tower_t(sum_k gate_t,k(V) expert_k)) target interest
//   P_s     = sigmoid(tower_s(sum_k gate_s,k(V) expert_k)) source interest
//   E_hid   = FC(V);  E_scene = [E(scene field) ...]
//   P_trans = sigmoid(FC(MLP([E_hid || E_scene])))        scene selector
//   P_whole = P_t + P_s * P_trans,  served as min(1, P_whole)

#ifndef EXITREC_MODEL_H_
#define EXITREC_MODEL_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "exitrec/autodiff.h"
#include "exitrec/labels.h"
#include "exitrec/record.h"
#include "exitrec/tensor.h"

namespace exitrec {

struct ModelConfig {
  // Embedded fields. Within each group V follows this declared order.
  FeatureSchema fields;
  std::int32_t embedding_dim = 8;
  std::int32_t num_experts = 2;
  std::vector<std::int32_t> expert_hidden = {64, 32};
  std::vector<std::int32_t> tower_hidden = {64, 32};
  std::int32_t ssn_compressed_width = 32;
  std::vector<std::int32_t> ssn_hidden = {64};
  std::vector<std::string> scene_fields = DefaultSceneFields();
  // Fields embedded only for E_scene, with their own tables. Scene names
  // resolve here first, then against `fields`.
  FeatureSchema scene_only_fields;
  // When false the scene selector sees only E_hid.
  bool use_scene = true;

  void Validate() const;  // ConfigError
  std::int32_t input_width() const {
    return static_cast<std::int32_t>(fields.size()) * embedding_dim;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Feature ids stored per record column, plus labels.
struct Batch {
  std::array<std::vector<std::int32_t>, kNumFeatureColumns> ids;
  std::vector<double> y_target;
  std::vector<double> y_source;
  std::vector<double> y_icl;

  std::size_t size() const { return y_target.size(); }

  static Batch From(std::span<const LabeledExample> examples);
  static Batch From(std::span<const LabeledExample> examples,
                    std::span<const std::size_t> indices);
};

enum class TransferMode {
  kLearned,
  kUnit,  // P_trans fixed at 1: every source interest is transferred
};

struct ForwardOptions {
  // Route P_target and P_source into P_whole through stop_gradient.
  bool use_stop_gradient = true;
  TransferMode transfer = TransferMode::kLearned;
};

struct EmbedOutput {
  Var user, item, context;  // grouped field embeddings
  Var v;                    // user || item || context
};

struct IpnOutput {
  std::vector<Var> experts;
  Var target_gate, source_gate;
  Var target_mixture, source_mixture;
  Var p_target, p_source;
};

struct SsnOutput {
  Var hidden;  // E_hid
  Var scene;   // E_scene, unset when the config disables scene input
  Var mlp;     // H_SSN
  Var p_trans;
};

struct ForwardState {
  EmbedOutput embed;
  IpnOutput ipn;
  SsnOutput ssn;
  Var p_target, p_source, p_trans, p_whole;
};

struct Prediction {
  double p_target = 0.0;
  double p_source = 0.0;
  double p_trans = 0.0;
  double p_whole = 0.0;
  double p_whole_clamped = 0.0;
};

double Combine(double p_target, double p_source, double p_trans);
// min(1, p_whole). Throws ContractError on a negative input.
double ClampServing(double p_whole);
Prediction MakePrediction(double p_target, double p_source, double p_trans);

// Tape form of Combine honouring ForwardOptions::use_stop_gradient.
Var CombineOnTape(Var p_target, Var p_source, Var p_trans,
                  bool use_stop_gradient);

class ExitModel {
 public:
  // Freshly initialised parameters: Glorot-uniform weights, zero biases,
  // embeddings uniform in +-0.01, PReLU slopes 0.25.
  ExitModel(ModelConfig config, std::uint64_t seed);
  // Adopts `params`; their names and shapes must match the config.
  ExitModel(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  std::vector<Parameter*> EmbeddingParameters();
  std::vector<Parameter*> IpnParameters();  // experts, gates, towers
  std::vector<Parameter*> SsnParameters();

  // Trainable forward pass: parameters are watched on `tape`.
  ForwardState Forward(Tape& tape, const Batch& batch,
                       const ForwardOptions& options = {});
  EmbedOutput Embed(Tape& tape, const Batch& batch);
  IpnOutput IpnForward(Tape& tape, Var v);
  SsnOutput SsnForward(Tape& tape, const EmbedOutput& embed,
                       const Batch& batch);

  // Read-only inference; parameters enter the tape as constants.
  std::vector<Prediction> Predict(const Batch& batch,
                                  const ForwardOptions& options = {}) const;
  std::vector<Prediction> Predict(std::span<const LabeledExample> examples,
                                  const ForwardOptions& options = {},
                                  std::size_t chunk = 4096) const;

 private:
  using Binder = std::function<Var(const Parameter&)>;

  void InitParameters(std::uint64_t seed);
  void CheckParameters() const;
  ForwardState ForwardWith(Tape& tape, const Batch& batch,
                           const ForwardOptions& options,
                           const Binder& bind) const;
  EmbedOutput EmbedWith(Tape& tape, const Batch& batch,
                        const Binder& bind) const;
  IpnOutput IpnWith(Tape& tape, Var v, const Binder& bind) const;
  SsnOutput SsnWith(Tape& tape, const EmbedOutput& embed, const Batch& batch,
                    const Binder& bind) const;
  Binder WatchAll(Tape& tape);

  ModelConfig config_;
  std::vector<int> field_columns_;  // record column of each config field
  ParameterStore params_;
};

// Text checkpoint: "exit-model-v1", config echo, then named tensors.
void SaveCheckpoint(const std::filesystem::path& path, const ExitModel& model);
ExitModel LoadCheckpoint(const std::filesystem::path& path);

}  // namespace exitrec

#endif  // EXITREC_MODEL_H_
