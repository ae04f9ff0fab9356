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

#ifndef EXITREC_LABELS_H_
#define EXITREC_LABELS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "exitrec/record.h"

namespace exitrec {

// Max over per-domain source labels. Throws ContractError on an empty list.
std::uint8_t AggregateSource(std::span<const std::uint8_t> labels);

// Group consistency interest per item: Jaccard overlap of the item's
// target-domain and source-domain payer sets.
class GciMap {
 public:
  explicit GciMap(double default_value = 0.0);

  double Lookup(std::int32_t item) const;
  void Set(std::int32_t item, double eta);  // ContractError outside [0, 1]
  bool Contains(std::int32_t item) const { return values_.contains(item); }
  double default_value() const { return default_value_; }
  const std::map<std::int32_t, double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  // Text form: header with the default value, then "item eta" per line with
  // eta printed to 6 decimals.
  void Save(const std::filesystem::path& path) const;
  static GciMap Load(const std::filesystem::path& path);

  friend bool operator==(const GciMap&, const GciMap&) = default;

 private:
  double default_value_;
  std::map<std::int32_t, double> values_;
};

// Partial payer sets. Accumulators built over disjoint shards merge by set
// union into exactly the single-pass result.
class GciAccumulator {
 public:
  void Add(const InteractionRecord& record);
  void Merge(const GciAccumulator& other);
  GciMap Finish(double default_value = 0.0) const;

 private:
  struct Payers {
    std::unordered_set<std::int32_t> target;
    std::unordered_set<std::int32_t> source;
  };
  std::unordered_map<std::int32_t, Payers> payers_;
};

GciMap ComputeGci(std::span<const InteractionRecord> records);

// Interest combination label: (0,0) -> 0, (1,0) -> 1, (0,1) -> eta,
// (1,1) -> 2.
double BuildIcl(int y_target, int y_source, double eta);

enum class IclMode { kStandard, kEtaZero, kAlwaysEta };

IclMode ParseIclMode(std::string_view name);  // ConfigError when unknown
std::string_view IclModeName(IclMode mode);

// kEtaZero builds the label with eta = 0; kAlwaysEta returns y_target + eta
// for every label pair.
double BuildIclVariant(IclMode mode, int y_target, int y_source, double eta);

struct LabeledExample {
  std::array<std::int32_t, kNumFeatureColumns> features{};
  std::uint8_t y_target = 0;
  std::uint8_t y_source = 0;
  double y_icl = 0.0;
};

// Throws EncodingError when a feature id falls outside the schema vocabulary.
std::vector<LabeledExample> LabelDataset(
    std::span<const InteractionRecord> records, const GciMap& gci,
    IclMode mode, const FeatureSchema& schema);

}  // namespace exitrec

#endif  // EXITREC_LABELS_H_
