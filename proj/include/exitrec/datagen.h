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

// Synthetic multi-domain purchase logs with a known interest model.
//
// Users fall into segments (age x gender x occupation); every exposure lands
// in a scene bucket (hour bucket x weekend flag). For each
// (segment, category, scene) cell the world fixes a per-source-domain purchase
// probability q, a transfer probability t and an own target-domain rate o.
// One exposure draws y_i ~ Bernoulli(q) per source domain, and the target
// purchase fires either on its own or, when any source label fired, with
// probability t. Categories with transferability 0 are never bought in the
// target domain, so their payer sets across domains are disjoint.

#ifndef EXITREC_DATAGEN_H_
#define EXITREC_DATAGEN_H_

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "exitrec/record.h"

namespace exitrec {

struct CategorySpec {
  std::string name;
  double transferability = 0.0;  // tau in [0, 1]
};

std::vector<CategorySpec> DefaultCategories();

struct WorldConfig {
  std::int32_t n_users = 2000;
  std::int32_t n_items = 500;
  std::int32_t n_source_domains = 2;

  std::int32_t n_ages = 6;
  std::int32_t n_genders = 2;
  std::int32_t n_occupations = 5;
  std::int32_t n_hours = 24;
  std::int32_t n_weekdays = 7;
  std::int32_t n_pages = 4;
  std::int32_t n_connections = 3;
  std::int32_t subcategories_per_category = 3;
  std::int32_t leaves_per_subcategory = 3;
  std::int32_t n_businesses = 3;
  std::int32_t n_hour_buckets = 4;

  std::vector<CategorySpec> categories = DefaultCategories();

  std::int64_t n_exposures = 250000;

  // Share of (segment, category) pairs with a strong latent interest.
  double interest_density = 0.3;
  // Per-domain source purchase probability at full affinity.
  double source_rate = 0.6;
  // Own target-domain purchase rate at full affinity and transferability.
  double own_target_rate = 0.05;
  // Source boost of positive categories inside their designated scenes.
  double scene_boost = 1.5;
  // Transfer multiplier outside a category's designated scenes.
  double off_scene_transfer = 0.7;

  std::uint64_t seed = 42;

  // Throws ConfigError.
  void Validate() const;

  std::int32_t n_segments() const { return n_ages * n_genders * n_occupations; }
  std::int32_t n_scenes() const { return n_hour_buckets * 2; }
  std::int32_t n_categories() const {
    return static_cast<std::int32_t>(categories.size());
  }
};

FeatureSchema SchemaFor(const WorldConfig& config);

struct CellKey {
  std::int32_t segment = 0;
  std::int32_t category = 0;
  std::int32_t scene = 0;
};

struct GroundTruthCell {
  double p_target = 0.0;   // probability of a target purchase per exposure
  double p_source = 0.0;   // per source domain
  double own_target = 0.0;
  double transfer = 0.0;
  bool designated = false;
};

// True purchase model keyed by (segment, category, scene).
class GroundTruth {
 public:
  GroundTruth() = default;
  GroundTruth(const WorldConfig& config, std::vector<GroundTruthCell> cells);

  const GroundTruthCell& cell(const CellKey& key) const;
  GroundTruthCell& mutable_cell(const CellKey& key);
  CellKey KeyFor(const InteractionRecord& record) const;
  double TargetProbability(const InteractionRecord& record) const {
    return cell(KeyFor(record)).p_target;
  }
  // Probability that at least one source domain fires.
  double AggregatedSource(const GroundTruthCell& cell) const;

  std::int32_t n_segments() const { return n_segments_; }
  std::int32_t n_categories() const {
    return static_cast<std::int32_t>(categories_.size());
  }
  std::int32_t n_scenes() const { return n_scenes_; }
  std::int32_t n_source_domains() const { return n_source_domains_; }
  const std::vector<CategorySpec>& categories() const { return categories_; }
  const std::vector<GroundTruthCell>& cells() const { return cells_; }

  void Save(const std::filesystem::path& path) const;
  static GroundTruth Load(const std::filesystem::path& path);

  friend bool operator==(const GroundTruth& a, const GroundTruth& b);

 private:
  std::size_t Index(const CellKey& key) const;

  std::int32_t n_ages_ = 0, n_genders_ = 0, n_occupations_ = 0;
  std::int32_t n_hours_ = 0, n_weekdays_ = 0, n_hour_buckets_ = 0;
  std::int32_t n_segments_ = 0, n_scenes_ = 0, n_source_domains_ = 0;
  std::vector<CategorySpec> categories_;
  std::vector<GroundTruthCell> cells_;
};

struct UserProfile {
  std::int32_t age = 0, gender = 0, occupation = 0;
};

struct ItemProfile {
  std::int32_t category = 0, subcategory = 0, leaf = 0, business = 0;
};

// Fixed population and purchase model; a pure function of the config.
struct World {
  WorldConfig config;
  std::vector<UserProfile> users;
  std::vector<ItemProfile> items;
  GroundTruth truth;

  // Record for (user, item, context) with zero labels.
  InteractionRecord Compose(std::int32_t user, std::int32_t item,
                            std::int32_t hour, std::int32_t weekday,
                            std::int32_t page, std::int32_t connection) const;
  // Draws labels for `record` from the ground truth.
  void SampleLabels(InteractionRecord& record, std::mt19937_64& rng) const;
};

World BuildWorld(const WorldConfig& config);

struct GeneratedData {
  std::vector<InteractionRecord> records;
  GroundTruth truth;
};

// Uniform exposures over (user, item) with a uniform context.
GeneratedData Generate(const WorldConfig& config);

// Disjoint train/test partition keyed by a hash of (seed, record position).
std::pair<std::vector<InteractionRecord>, std::vector<InteractionRecord>>
Split(const std::vector<InteractionRecord>& records, double train_fraction,
      std::uint64_t seed);

// A simulated recommendation request: one user in one context facing a set of
// candidate items.
struct Request {
  std::vector<InteractionRecord> candidates;
};

std::vector<Request> MakeRequests(const World& world, std::int32_t n_requests,
                                  std::int32_t n_candidates, std::uint64_t seed);

struct LogData {
  std::int32_t n_source_domains = 0;
  std::vector<InteractionRecord> records;
};

void WriteLog(const std::filesystem::path& path,
              const std::vector<InteractionRecord>& records,
              std::int32_t n_source_domains);
// Throws ParseError naming the offending line; an empty file yields no
// records.
LogData ReadLog(const std::filesystem::path& path);

struct DatasetStats {
  std::size_t samples = 0;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t target_purchases = 0;
  std::size_t source_purchases = 0;  // aggregated over source domains
  std::vector<std::size_t> per_domain_purchases;
};

DatasetStats ComputeStats(const std::vector<InteractionRecord>& records);

std::uint64_t SplitMix64(std::uint64_t x);

}  // namespace exitrec

#endif  // EXITREC_DATAGEN_H_
