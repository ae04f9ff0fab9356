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

#include "exitrec/datagen.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "exitrec/errors.h"

namespace exitrec {
namespace {

constexpr double kPositiveTransferability = 0.8;
constexpr std::uint64_t kExposureStream = 0x6a09e667f3bcc909ULL;
constexpr std::uint64_t kRequestStream = 0xbb67ae8584caa73bULL;

std::int32_t UniformInt(std::mt19937_64& rng, std::int32_t n) {
  return std::uniform_int_distribution<std::int32_t>(0, n - 1)(rng);
}

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool Bernoulli(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

std::int32_t HourBucket(std::int32_t hour, std::int32_t n_hours,
                        std::int32_t n_buckets) {
  return hour * n_buckets / n_hours;
}

void RequirePositive(std::int64_t value, const char* name) {
  if (value <= 0) {
    throw ConfigError(fmt::format("world.{} must be positive, got {}", name,
                                  value));
  }
}

void RequireUnit(double value, const char* name) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ConfigError(fmt::format("world.{} must lie in [0, 1], got {}", name,
                                  value));
  }
}

std::vector<std::string> SplitFields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
bool ParseNumber(std::string_view text, T& out) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<CategorySpec> DefaultCategories() {
  return {{"food", 0.9},        {"group_deal", 0.8}, {"hotel", 0.5},
          {"entertainment", 0.4}, {"flowers", 0.05}, {"medicine", 0.0}};
}

void WorldConfig::Validate() const {
  RequirePositive(n_users, "n_users");
  RequirePositive(n_items, "n_items");
  RequirePositive(n_source_domains, "n_source_domains");
  RequirePositive(n_ages, "n_ages");
  RequirePositive(n_genders, "n_genders");
  RequirePositive(n_occupations, "n_occupations");
  RequirePositive(n_hours, "n_hours");
  RequirePositive(n_pages, "n_pages");
  RequirePositive(n_connections, "n_connections");
  RequirePositive(subcategories_per_category, "subcategories_per_category");
  RequirePositive(leaves_per_subcategory, "leaves_per_subcategory");
  RequirePositive(n_businesses, "n_businesses");
  RequirePositive(n_hour_buckets, "n_hour_buckets");
  RequirePositive(n_exposures, "n_exposures");
  if (n_weekdays < 3) {
    throw ConfigError("world.n_weekdays must be at least 3 (two weekend days)");
  }
  if (n_hour_buckets > n_hours) {
    throw ConfigError("world.n_hour_buckets cannot exceed world.n_hours");
  }
  if (categories.empty()) throw ConfigError("world.categories is empty");
  for (const CategorySpec& c : categories) {
    if (!(c.transferability >= 0.0 && c.transferability <= 1.0)) {
      throw ConfigError(fmt::format(
          "transferability of category '{}' must lie in [0, 1], got {}",
          c.name, c.transferability));
    }
  }
  RequireUnit(interest_density, "interest_density");
  RequireUnit(own_target_rate, "own_target_rate");
  RequireUnit(off_scene_transfer, "off_scene_transfer");
  if (!(source_rate >= 0.0)) throw ConfigError("world.source_rate must be >= 0");
  if (!(scene_boost >= 0.0)) throw ConfigError("world.scene_boost must be >= 0");
}

FeatureSchema SchemaFor(const WorldConfig& config) {
  const std::int32_t n_sub =
      config.n_categories() * config.subcategories_per_category;
  const std::int32_t vocab[kNumFeatureColumns] = {
      config.n_users,
      config.n_items,
      config.n_ages,
      config.n_genders,
      config.n_occupations,
      config.n_categories(),
      n_sub,
      n_sub * config.leaves_per_subcategory,
      config.n_businesses,
      config.n_hours,
      config.n_weekdays,
      config.n_pages,
      config.n_connections};
  FeatureSchema schema;
  for (int i = 0; i < kNumFeatureColumns; ++i) {
    schema.push_back({std::string(kFeatureColumnNames[i]),
                      GroupOf(static_cast<FeatureColumn>(i)), vocab[i]});
  }
  return schema;
}

GroundTruth::GroundTruth(const WorldConfig& config,
                         std::vector<GroundTruthCell> cells)
    : n_ages_(config.n_ages),
      n_genders_(config.n_genders),
      n_occupations_(config.n_occupations),
      n_hours_(config.n_hours),
      n_weekdays_(config.n_weekdays),
      n_hour_buckets_(config.n_hour_buckets),
      n_segments_(config.n_segments()),
      n_scenes_(config.n_scenes()),
      n_source_domains_(config.n_source_domains),
      categories_(config.categories),
      cells_(std::move(cells)) {
  if (cells_.size() != static_cast<std::size_t>(n_segments_) *
                           categories_.size() * n_scenes_) {
    throw ContractError("ground truth cell count does not match the grid");
  }
}

std::size_t GroundTruth::Index(const CellKey& key) const {
  if (key.segment < 0 || key.segment >= n_segments_ || key.category < 0 ||
      key.category >= n_categories() || key.scene < 0 ||
      key.scene >= n_scenes_) {
    throw IndexError(fmt::format("ground truth cell ({}, {}, {}) out of range",
                                 key.segment, key.category, key.scene));
  }
  return (static_cast<std::size_t>(key.segment) * categories_.size() +
          key.category) *
             n_scenes_ +
         key.scene;
}

const GroundTruthCell& GroundTruth::cell(const CellKey& key) const {
  return cells_[Index(key)];
}

GroundTruthCell& GroundTruth::mutable_cell(const CellKey& key) {
  return cells_[Index(key)];
}

CellKey GroundTruth::KeyFor(const InteractionRecord& r) const {
  const auto& f = r.features;
  CellKey key;
  key.segment = (f[kAge] * n_genders_ + f[kGender]) * n_occupations_ +
                f[kOccupation];
  key.category = f[kCategory1];
  const bool weekend = f[kWeekday] >= n_weekdays_ - 2;
  key.scene = HourBucket(f[kHour], n_hours_, n_hour_buckets_) * 2 +
              (weekend ? 1 : 0);
  return key;
}

double GroundTruth::AggregatedSource(const GroundTruthCell& cell) const {
  return 1.0 - std::pow(1.0 - cell.p_source, n_source_domains_);
}

void GroundTruth::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ground truth: " + path.string());
  out << "exit-ground-truth-v1\n";
  out << fmt::format(
      "grid ages={} genders={} occupations={} hours={} weekdays={} "
      "hour_buckets={} source_domains={}\n",
      n_ages_, n_genders_, n_occupations_, n_hours_, n_weekdays_,
      n_hour_buckets_, n_source_domains_);
  for (std::size_t c = 0; c < categories_.size(); ++c) {
    out << fmt::format("category {} {} {:.17g}\n", c, categories_[c].name,
                       categories_[c].transferability);
  }
  out << "# cell segment category scene p_target p_source own_target "
         "transfer designated\n";
  for (std::int32_t s = 0; s < n_segments_; ++s) {
    for (std::int32_t c = 0; c < n_categories(); ++c) {
      for (std::int32_t b = 0; b < n_scenes_; ++b) {
        const GroundTruthCell& g = cell({s, c, b});
        out << fmt::format("cell {} {} {} {:.17g} {:.17g} {:.17g} {:.17g} {}\n",
                           s, c, b, g.p_target, g.p_source, g.own_target,
                           g.transfer, g.designated ? 1 : 0);
      }
    }
  }
  if (!out) throw IoError("failed writing ground truth: " + path.string());
}

GroundTruth GroundTruth::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read ground truth: " + path.string());
  const std::string source = path.string();
  std::string line;
  long line_no = 0;
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line[0] != '#') return true;
    }
    return false;
  };
  if (!next() || line != "exit-ground-truth-v1") {
    throw ParseError(source, line_no, "missing exit-ground-truth-v1 header");
  }
  if (!next()) throw ParseError(source, line_no, "missing grid line");
  WorldConfig config;
  config.categories.clear();
  {
    std::istringstream grid(line);
    std::string word;
    grid >> word;
    if (word != "grid") throw ParseError(source, line_no, "expected grid line");
    while (grid >> word) {
      const auto eq = word.find('=');
      std::int32_t value = 0;
      if (eq == std::string::npos ||
          !ParseNumber(std::string_view(word).substr(eq + 1), value)) {
        throw ParseError(source, line_no, "bad grid entry '" + word + "'");
      }
      const std::string key = word.substr(0, eq);
      if (key == "ages") config.n_ages = value;
      else if (key == "genders") config.n_genders = value;
      else if (key == "occupations") config.n_occupations = value;
      else if (key == "hours") config.n_hours = value;
      else if (key == "weekdays") config.n_weekdays = value;
      else if (key == "hour_buckets") config.n_hour_buckets = value;
      else if (key == "source_domains") config.n_source_domains = value;
      else throw ParseError(source, line_no, "unknown grid key '" + key + "'");
    }
  }
  std::vector<GroundTruthCell> cells;
  std::vector<CellKey> keys;
  while (next()) {
    std::istringstream row(line);
    std::string kind;
    row >> kind;
    if (kind == "category") {
      std::size_t index = 0;
      CategorySpec spec;
      if (!(row >> index >> spec.name >> spec.transferability) ||
          index != config.categories.size()) {
        throw ParseError(source, line_no, "bad category line");
      }
      config.categories.push_back(spec);
    } else if (kind == "cell") {
      CellKey key;
      GroundTruthCell g;
      int designated = 0;
      if (!(row >> key.segment >> key.category >> key.scene >> g.p_target >>
            g.p_source >> g.own_target >> g.transfer >> designated)) {
        throw ParseError(source, line_no, "bad cell line");
      }
      g.designated = designated != 0;
      keys.push_back(key);
      cells.push_back(g);
    } else {
      throw ParseError(source, line_no, "unknown record '" + kind + "'");
    }
  }
  const std::size_t expected = static_cast<std::size_t>(config.n_segments()) *
                               config.categories.size() * config.n_scenes();
  if (cells.size() != expected) {
    throw ParseError(source, line_no,
                     fmt::format("expected {} cells, found {}", expected,
                                 cells.size()));
  }
  GroundTruth truth(config, std::vector<GroundTruthCell>(expected));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    truth.mutable_cell(keys[i]) = cells[i];
  }
  return truth;
}

bool operator==(const GroundTruth& a, const GroundTruth& b) {
  if (a.n_ages_ != b.n_ages_ || a.n_genders_ != b.n_genders_ ||
      a.n_occupations_ != b.n_occupations_ || a.n_hours_ != b.n_hours_ ||
      a.n_weekdays_ != b.n_weekdays_ || a.n_hour_buckets_ != b.n_hour_buckets_ ||
      a.n_source_domains_ != b.n_source_domains_ ||
      a.categories_.size() != b.categories_.size() ||
      a.cells_.size() != b.cells_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.categories_.size(); ++i) {
    if (a.categories_[i].name != b.categories_[i].name ||
        a.categories_[i].transferability != b.categories_[i].transferability) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.cells_.size(); ++i) {
    const GroundTruthCell& x = a.cells_[i];
    const GroundTruthCell& y = b.cells_[i];
    if (x.p_target != y.p_target || x.p_source != y.p_source ||
        x.own_target != y.own_target || x.transfer != y.transfer ||
        x.designated != y.designated) {
      return false;
    }
  }
  return true;
}

World BuildWorld(const WorldConfig& config) {
  config.Validate();
  World world;
  world.config = config;
  std::mt19937_64 rng(config.seed);

  world.users.resize(config.n_users);
  for (UserProfile& u : world.users) {
    u.age = UniformInt(rng, config.n_ages);
    u.gender = UniformInt(rng, config.n_genders);
    u.occupation = UniformInt(rng, config.n_occupations);
  }
  world.items.resize(config.n_items);
  for (ItemProfile& item : world.items) {
    item.category = UniformInt(rng, config.n_categories());
    item.subcategory = item.category * config.subcategories_per_category +
                       UniformInt(rng, config.subcategories_per_category);
    item.leaf = item.subcategory * config.leaves_per_subcategory +
                UniformInt(rng, config.leaves_per_subcategory);
    item.business = item.category % config.n_businesses;
  }

  const std::int32_t n_seg = config.n_segments();
  const std::int32_t n_cat = config.n_categories();
  const std::int32_t n_scene = config.n_scenes();

  // Latent source-side affinity and an independent target-side affinity per
  // (segment, category).
  std::vector<double> source_affinity(static_cast<std::size_t>(n_seg) * n_cat);
  std::vector<double> target_affinity(source_affinity.size());
  for (std::size_t i = 0; i < source_affinity.size(); ++i) {
    const bool strong = Bernoulli(rng, config.interest_density);
    source_affinity[i] = strong ? Uniform(rng, 0.6, 1.0) : Uniform(rng, 0.0, 0.15);
    target_affinity[i] = Uniform(rng, 0.0, 1.0);
  }
  std::vector<bool> designated(static_cast<std::size_t>(n_cat) * n_scene);
  for (std::size_t i = 0; i < designated.size(); ++i) {
    designated[i] = Bernoulli(rng, 0.5);
  }

  std::vector<GroundTruthCell> cells(static_cast<std::size_t>(n_seg) * n_cat *
                                     n_scene);
  for (std::int32_t s = 0; s < n_seg; ++s) {
    for (std::int32_t c = 0; c < n_cat; ++c) {
      const double tau = config.categories[c].transferability;
      const std::size_t pair = static_cast<std::size_t>(s) * n_cat + c;
      for (std::int32_t b = 0; b < n_scene; ++b) {
        const bool in_scene = designated[static_cast<std::size_t>(c) * n_scene + b];
        const double boost =
            (in_scene && tau >= kPositiveTransferability) ? config.scene_boost
                                                          : 1.0;
        GroundTruthCell g;
        g.designated = in_scene;
        g.p_source =
            std::min(0.95, config.source_rate * source_affinity[pair] * boost);
        g.transfer = tau * (in_scene ? 1.0 : config.off_scene_transfer);
        g.own_target = config.own_target_rate * target_affinity[pair] * tau;
        const double any_source =
            1.0 - std::pow(1.0 - g.p_source, config.n_source_domains);
        g.p_target = 1.0 - (1.0 - g.own_target) * (1.0 - any_source * g.transfer);
        cells[(pair)*n_scene + b] = g;
      }
    }
  }
  world.truth = GroundTruth(config, std::move(cells));
  return world;
}

InteractionRecord World::Compose(std::int32_t user, std::int32_t item,
                                 std::int32_t hour, std::int32_t weekday,
                                 std::int32_t page,
                                 std::int32_t connection) const {
  InteractionRecord r;
  const UserProfile& u = users.at(user);
  const ItemProfile& m = items.at(item);
  r.features[kUserId] = user;
  r.features[kItemId] = item;
  r.features[kAge] = u.age;
  r.features[kGender] = u.gender;
  r.features[kOccupation] = u.occupation;
  r.features[kCategory1] = m.category;
  r.features[kCategory2] = m.subcategory;
  r.features[kCategory3] = m.leaf;
  r.features[kBusiness] = m.business;
  r.features[kHour] = hour;
  r.features[kWeekday] = weekday;
  r.features[kPage] = page;
  r.features[kConnection] = connection;
  r.y_sources.assign(config.n_source_domains, 0);
  return r;
}

void World::SampleLabels(InteractionRecord& record,
                         std::mt19937_64& rng) const {
  const GroundTruthCell& g = truth.cell(truth.KeyFor(record));
  record.y_sources.assign(config.n_source_domains, 0);
  bool any_source = false;
  for (auto& y : record.y_sources) {
    y = Bernoulli(rng, g.p_source) ? 1 : 0;
    any_source = any_source || y;
  }
  const bool own = Bernoulli(rng, g.own_target);
  const bool transferred = Bernoulli(rng, g.transfer);
  record.y_target = (own || (any_source && transferred)) ? 1 : 0;
}

GeneratedData Generate(const WorldConfig& config) {
  World world = BuildWorld(config);
  std::mt19937_64 rng(SplitMix64(config.seed ^ kExposureStream));
  GeneratedData data;
  data.records.reserve(config.n_exposures);
  for (std::int64_t e = 0; e < config.n_exposures; ++e) {
    const std::int32_t user = UniformInt(rng, config.n_users);
    const std::int32_t item = UniformInt(rng, config.n_items);
    const std::int32_t hour = UniformInt(rng, config.n_hours);
    const std::int32_t weekday = UniformInt(rng, config.n_weekdays);
    const std::int32_t page = UniformInt(rng, config.n_pages);
    const std::int32_t connection = UniformInt(rng, config.n_connections);
    InteractionRecord r =
        world.Compose(user, item, hour, weekday, page, connection);
    world.SampleLabels(r, rng);
    data.records.push_back(std::move(r));
  }
  data.truth = std::move(world.truth);
  return data;
}

std::pair<std::vector<InteractionRecord>, std::vector<InteractionRecord>>
Split(const std::vector<InteractionRecord>& records, double train_fraction,
      std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractError(
        fmt::format("train_fraction must lie in (0, 1), got {}", train_fraction));
  }
  std::pair<std::vector<InteractionRecord>, std::vector<InteractionRecord>> out;
  const std::uint64_t salt = SplitMix64(seed);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::uint64_t h = SplitMix64(salt ^ SplitMix64(i));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    (u < train_fraction ? out.first : out.second).push_back(records[i]);
  }
  return out;
}

std::vector<Request> MakeRequests(const World& world, std::int32_t n_requests,
                                  std::int32_t n_candidates,
                                  std::uint64_t seed) {
  const WorldConfig& c = world.config;
  if (n_candidates <= 0 || n_candidates > c.n_items) {
    throw ContractError(fmt::format(
        "candidates per request must lie in [1, {}], got {}", c.n_items,
        n_candidates));
  }
  std::mt19937_64 rng(SplitMix64(seed ^ kRequestStream));
  std::vector<std::int32_t> all_items(c.n_items);
  for (std::int32_t i = 0; i < c.n_items; ++i) all_items[i] = i;
  std::vector<Request> requests(n_requests);
  for (Request& request : requests) {
    const std::int32_t user = UniformInt(rng, c.n_users);
    const std::int32_t hour = UniformInt(rng, c.n_hours);
    const std::int32_t weekday = UniformInt(rng, c.n_weekdays);
    const std::int32_t page = UniformInt(rng, c.n_pages);
    const std::int32_t connection = UniformInt(rng, c.n_connections);
    // Partial Fisher-Yates: the first n_candidates slots are a uniform sample.
    for (std::int32_t k = 0; k < n_candidates; ++k) {
      const std::int32_t j =
          k + UniformInt(rng, c.n_items - k);
      std::swap(all_items[k], all_items[j]);
      request.candidates.push_back(
          world.Compose(user, all_items[k], hour, weekday, page, connection));
    }
  }
  return requests;
}

void WriteLog(const std::filesystem::path& path,
              const std::vector<InteractionRecord>& records,
              std::int32_t n_source_domains) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write log: " + path.string());
  std::string header;
  for (int i = 0; i < kNumFeatureColumns; ++i) {
    header += kFeatureColumnNames[i];
    header += ',';
  }
  header += "y_t";
  for (std::int32_t d = 1; d <= n_source_domains; ++d) {
    header += ",y_s" + std::to_string(d);
  }
  header += '\n';
  out << header;
  std::string line;
  char buf[16];
  for (const InteractionRecord& r : records) {
    if (static_cast<std::int32_t>(r.y_sources.size()) != n_source_domains) {
      throw ContractError("record carries " + std::to_string(r.y_sources.size()) +
                          " source labels, log declares " +
                          std::to_string(n_source_domains));
    }
    line.clear();
    for (int i = 0; i < kNumFeatureColumns; ++i) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), r.features[i]);
      line.append(buf, end);
      line += ',';
    }
    line += static_cast<char>('0' + r.y_target);
    for (std::uint8_t y : r.y_sources) {
      line += ',';
      line += static_cast<char>('0' + y);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("failed writing log: " + path.string());
}

LogData ReadLog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read log: " + path.string());
  const std::string source = path.string();
  LogData data;
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) return data;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = SplitFields(line, ',');
  const std::size_t label_start = kNumFeatureColumns;
  if (header.size() < label_start + 2) {
    throw ParseError(source, line_no, "header names too few columns");
  }
  for (int i = 0; i < kNumFeatureColumns; ++i) {
    if (header[i] != kFeatureColumnNames[i]) {
      throw ParseError(source, line_no,
                       fmt::format("header column {} is '{}', expected '{}'",
                                   i + 1, header[i], kFeatureColumnNames[i]));
    }
  }
  if (header[label_start] != "y_t") {
    throw ParseError(source, line_no, "header is missing y_t");
  }
  data.n_source_domains = static_cast<std::int32_t>(header.size() - label_start - 1);
  for (std::int32_t d = 0; d < data.n_source_domains; ++d) {
    if (header[label_start + 1 + d] != "y_s" + std::to_string(d + 1)) {
      throw ParseError(source, line_no,
                       "source label columns must be y_s1..y_sn in order");
    }
  }

  const std::size_t n_columns = header.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    InteractionRecord r;
    r.y_sources.resize(data.n_source_domains);
    std::size_t column = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field(
          line.data() + start,
          (comma == std::string::npos ? line.size() : comma) - start);
      if (column >= n_columns) {
        throw ParseError(source, line_no,
                         fmt::format("expected {} columns, found more", n_columns));
      }
      if (column < label_start) {
        std::int32_t value = 0;
        if (!ParseNumber(field, value) || value < 0) {
          throw ParseError(source, line_no,
                           fmt::format("column '{}' is not a feature id: '{}'",
                                       header[column], field));
        }
        r.features[column] = value;
      } else {
        int value = 0;
        if (!ParseNumber(field, value) || (value != 0 && value != 1)) {
          throw ParseError(source, line_no,
                           fmt::format("label '{}' must be 0 or 1, got '{}'",
                                       header[column], field));
        }
        if (column == label_start) {
          r.y_target = static_cast<std::uint8_t>(value);
        } else {
          r.y_sources[column - label_start - 1] = static_cast<std::uint8_t>(value);
        }
      }
      ++column;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (column != n_columns) {
      throw ParseError(source, line_no,
                       fmt::format("expected {} columns, found {}", n_columns,
                                   column));
    }
    data.records.push_back(std::move(r));
  }
  return data;
}

DatasetStats ComputeStats(const std::vector<InteractionRecord>& records) {
  DatasetStats stats;
  stats.samples = records.size();
  std::set<std::int32_t> users, items;
  for (const InteractionRecord& r : records) {
    users.insert(r.user_id());
    items.insert(r.item_id());
    stats.target_purchases += r.y_target;
    if (stats.per_domain_purchases.size() < r.y_sources.size()) {
      stats.per_domain_purchases.resize(r.y_sources.size());
    }
    bool any = false;
    for (std::size_t d = 0; d < r.y_sources.size(); ++d) {
      stats.per_domain_purchases[d] += r.y_sources[d];
      any = any || r.y_sources[d];
    }
    stats.source_purchases += any ? 1 : 0;
  }
  stats.users = users.size();
  stats.items = items.size();
  return stats;
}

}  // namespace exitrec
