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

#include "exitrec/labels.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "exitrec/errors.h"

namespace exitrec {

std::uint8_t AggregateSource(std::span<const std::uint8_t> labels) {
  if (labels.empty()) {
    throw ContractError("aggregate_source needs at least one source label");
  }
  std::uint8_t out = 0;
  for (std::uint8_t y : labels) {
    if (y > 1) throw ContractError("source labels must be binary");
    out = std::max(out, y);
  }
  return out;
}

GciMap::GciMap(double default_value) : default_value_(default_value) {
  if (!(default_value >= 0.0 && default_value <= 1.0)) {
    throw ContractError(fmt::format("gci default {} outside [0, 1]", default_value));
  }
}

double GciMap::Lookup(std::int32_t item) const {
  auto it = values_.find(item);
  return it == values_.end() ? default_value_ : it->second;
}

void GciMap::Set(std::int32_t item, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw ContractError(fmt::format("gci of item {} is {}, outside [0, 1]", item, eta));
  }
  values_[item] = eta;
}

void GciMap::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write gci map: " + path.string());
  out << fmt::format("exit-gci-v1 default_value={:.6f}\n", default_value_);
  for (const auto& [item, eta] : values_) {
    out << fmt::format("{} {:.6f}\n", item, eta);
  }
  if (!out) throw IoError("failed writing gci map: " + path.string());
}

GciMap GciMap::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read gci map: " + path.string());
  const std::string source = path.string();
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line)) {
    throw ParseError(source, line_no, "empty gci file");
  }
  double default_value = 0.0;
  constexpr std::string_view kPrefix = "exit-gci-v1 default_value=";
  if (line.rfind(kPrefix, 0) != 0 ||
      std::sscanf(line.c_str() + kPrefix.size(), "%lf", &default_value) != 1) {
    throw ParseError(source, line_no, "missing exit-gci-v1 header");
  }
  GciMap map(default_value);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::int32_t item = 0;
    double eta = 0.0;
    std::string rest;
    if (!(row >> item >> eta) || (row >> rest)) {
      throw ParseError(source, line_no, "expected 'item eta'");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) {
      throw ParseError(source, line_no, "eta outside [0, 1]");
    }
    map.Set(item, eta);
  }
  return map;
}

void GciAccumulator::Add(const InteractionRecord& record) {
  const bool target = record.y_target != 0;
  const bool source = AggregateSource(record.y_sources) != 0;
  if (!target && !source) return;
  Payers& p = payers_[record.item_id()];
  if (target) p.target.insert(record.user_id());
  if (source) p.source.insert(record.user_id());
}

void GciAccumulator::Merge(const GciAccumulator& other) {
  for (const auto& [item, theirs] : other.payers_) {
    Payers& mine = payers_[item];
    mine.target.insert(theirs.target.begin(), theirs.target.end());
    mine.source.insert(theirs.source.begin(), theirs.source.end());
  }
}

GciMap GciAccumulator::Finish(double default_value) const {
  GciMap map(default_value);
  for (const auto& [item, p] : payers_) {
    std::size_t both = 0;
    for (std::int32_t user : p.target) both += p.source.contains(user) ? 1 : 0;
    const std::size_t either = p.target.size() + p.source.size() - both;
    if (either == 0) continue;
    map.Set(item, static_cast<double>(both) / static_cast<double>(either));
  }
  return map;
}

GciMap ComputeGci(std::span<const InteractionRecord> records) {
  GciAccumulator acc;
  for (const InteractionRecord& r : records) acc.Add(r);
  return acc.Finish();
}

double BuildIcl(int y_target, int y_source, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw ContractError(fmt::format("eta {} outside [0, 1]", eta));
  }
  if ((y_target != 0 && y_target != 1) || (y_source != 0 && y_source != 1)) {
    throw ContractError("icl labels must be binary");
  }
  if (y_source == 0) return y_target;
  return y_target == 1 ? 2.0 : eta;
}

IclMode ParseIclMode(std::string_view name) {
  if (name == "standard") return IclMode::kStandard;
  if (name == "eta_zero") return IclMode::kEtaZero;
  if (name == "always_eta") return IclMode::kAlwaysEta;
  throw ConfigError(fmt::format(
      "unknown icl mode '{}' (expected standard, eta_zero or always_eta)", name));
}

std::string_view IclModeName(IclMode mode) {
  switch (mode) {
    case IclMode::kStandard:
      return "standard";
    case IclMode::kEtaZero:
      return "eta_zero";
    case IclMode::kAlwaysEta:
      return "always_eta";
  }
  return "?";
}

double BuildIclVariant(IclMode mode, int y_target, int y_source, double eta) {
  switch (mode) {
    case IclMode::kStandard:
      return BuildIcl(y_target, y_source, eta);
    case IclMode::kEtaZero:
      BuildIcl(y_target, y_source, eta);  // validates the inputs
      return BuildIcl(y_target, y_source, 0.0);
    case IclMode::kAlwaysEta:
      BuildIcl(y_target, y_source, eta);
      return y_target + eta;
  }
  throw ConfigError("unknown icl mode");
}

std::vector<LabeledExample> LabelDataset(
    std::span<const InteractionRecord> records, const GciMap& gci,
    IclMode mode, const FeatureSchema& schema) {
  if (schema.size() != kNumFeatureColumns) {
    throw EncodingError(fmt::format("schema has {} fields, records carry {}",
                                    schema.size(), int{kNumFeatureColumns}));
  }
  std::vector<LabeledExample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const InteractionRecord& r = records[i];
    LabeledExample ex;
    for (int c = 0; c < kNumFeatureColumns; ++c) {
      const std::int32_t id = r.features[c];
      if (id < 0 || id >= schema[c].vocab_size) {
        throw EncodingError(fmt::format(
            "record {}: {} id {} has no vocabulary entry (size {})", i,
            schema[c].name, id, schema[c].vocab_size));
      }
      ex.features[c] = id;
    }
    ex.y_target = r.y_target;
    ex.y_source = AggregateSource(r.y_sources);
    ex.y_icl = BuildIclVariant(mode, ex.y_target, ex.y_source,
                               gci.Lookup(r.item_id()));
    out.push_back(ex);
  }
  return out;
}

}  // namespace exitrec
