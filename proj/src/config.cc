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

#include "exitrec/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "exitrec/errors.h"

namespace exitrec {
namespace {

namespace pt = boost::property_tree;

struct Key {
  const char* section;
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> SplitList(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T ParseNumber(const std::string& value) {
  T out{};
  const std::string v = Trim(value);
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + value + "' is not a valid number");
  }
  return out;
}

bool ParseBool(const std::string& value) {
  const std::string v = Trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + value + "' is not a boolean");
}

std::vector<std::int32_t> ParseIntList(const std::string& value) {
  std::vector<std::int32_t> out;
  for (const std::string& item : SplitList(value)) {
    out.push_back(ParseNumber<std::int32_t>(item));
  }
  return out;
}

std::vector<CategorySpec> ParseCategories(const std::string& value) {
  std::vector<CategorySpec> out;
  for (const std::string& item : SplitList(value)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("category '" + item + "' must be written name:tau");
    }
    out.push_back({Trim(item.substr(0, colon)),
                   ParseNumber<double>(item.substr(colon + 1))});
  }
  return out;
}

std::string FormatCategories(const std::vector<CategorySpec>& categories) {
  std::vector<std::string> parts;
  for (const CategorySpec& c : categories) {
    parts.push_back(fmt::format("{}:{}", c.name, c.transferability));
  }
  return fmt::format("{}", fmt::join(parts, ","));
}

std::string FormatVariants(const std::vector<Variant>& variants) {
  std::vector<std::string_view> names;
  for (Variant v : variants) names.push_back(VariantName(v));
  return fmt::format("{}", fmt::join(names, ","));
}

std::string FormatBool(bool b) { return b ? "true" : "false"; }

#define EXITREC_NUM(section, member, name)                                  \
  Key {                                                                     \
    section, name,                                                          \
        [](RunConfig& c, const std::string& v) {                            \
          c.member = ParseNumber<std::decay_t<decltype(c.member)>>(v);      \
        },                                                                  \
        [](const RunConfig& c) { return fmt::format("{}", c.member); }      \
  }

#define EXITREC_BOOL(section, member, name)                                 \
  Key {                                                                     \
    section, name,                                                          \
        [](RunConfig& c, const std::string& v) { c.member = ParseBool(v); }, \
        [](const RunConfig& c) { return FormatBool(c.member); }             \
  }

#define EXITREC_INTS(section, member, name)                                 \
  Key {                                                                     \
    section, name,                                                          \
        [](RunConfig& c, const std::string& v) {                            \
          c.member = ParseIntList(v);                                       \
        },                                                                  \
        [](const RunConfig& c) {                                            \
          return fmt::format("{}", fmt::join(c.member, ","));               \
        }                                                                   \
  }

const std::vector<Key>& Registry() {
  static const std::vector<Key> keys = {
      EXITREC_NUM("world", world.n_users, "n_users"),
      EXITREC_NUM("world", world.n_items, "n_items"),
      EXITREC_NUM("world", world.n_source_domains, "n_source_domains"),
      EXITREC_NUM("world", world.n_ages, "n_ages"),
      EXITREC_NUM("world", world.n_genders, "n_genders"),
      EXITREC_NUM("world", world.n_occupations, "n_occupations"),
      EXITREC_NUM("world", world.n_hours, "n_hours"),
      EXITREC_NUM("world", world.n_weekdays, "n_weekdays"),
      EXITREC_NUM("world", world.n_pages, "n_pages"),
      EXITREC_NUM("world", world.n_connections, "n_connections"),
      EXITREC_NUM("world", world.subcategories_per_category,
                  "subcategories_per_category"),
      EXITREC_NUM("world", world.leaves_per_subcategory, "leaves_per_subcategory"),
      EXITREC_NUM("world", world.n_businesses, "n_businesses"),
      EXITREC_NUM("world", world.n_hour_buckets, "n_hour_buckets"),
      Key{"world", "categories",
          [](RunConfig& c, const std::string& v) {
            c.world.categories = ParseCategories(v);
          },
          [](const RunConfig& c) { return FormatCategories(c.world.categories); }},
      EXITREC_NUM("world", world.n_exposures, "n_exposures"),
      EXITREC_NUM("world", world.interest_density, "interest_density"),
      EXITREC_NUM("world", world.source_rate, "source_rate"),
      EXITREC_NUM("world", world.own_target_rate, "own_target_rate"),
      EXITREC_NUM("world", world.scene_boost, "scene_boost"),
      EXITREC_NUM("world", world.off_scene_transfer, "off_scene_transfer"),
      EXITREC_NUM("world", world.seed, "seed"),

      EXITREC_NUM("model", model.embedding_dim, "embedding_dim"),
      EXITREC_NUM("model", model.num_experts, "num_experts"),
      EXITREC_INTS("model", model.expert_hidden, "expert_hidden"),
      EXITREC_INTS("model", model.tower_hidden, "tower_hidden"),
      EXITREC_NUM("model", model.ssn_compressed_width, "ssn_compressed_width"),
      EXITREC_INTS("model", model.ssn_hidden, "ssn_hidden"),
      Key{"model", "scene_fields",
          [](RunConfig& c, const std::string& v) {
            c.model.scene_fields = SplitList(v);
          },
          [](const RunConfig& c) {
            return fmt::format("{}", fmt::join(c.model.scene_fields, ","));
          }},
      EXITREC_BOOL("model", model.use_scene, "use_scene"),

      EXITREC_NUM("train", train.lambda.target, "lambda1"),
      EXITREC_NUM("train", train.lambda.source, "lambda2"),
      EXITREC_NUM("train", train.lambda.icl, "lambda3"),
      EXITREC_NUM("train", train.batch_size, "batch_size"),
      EXITREC_NUM("train", train.epochs, "epochs"),
      EXITREC_NUM("train", train.learning_rate, "learning_rate"),
      EXITREC_NUM("train", train.seed, "seed"),
      EXITREC_BOOL("train", train.stop_gradient, "stop_gradient"),
      Key{"train", "icl_mode",
          [](RunConfig& c, const std::string& v) {
            c.train.icl_mode = ParseIclMode(Trim(v));
          },
          [](const RunConfig& c) {
            return std::string(IclModeName(c.train.icl_mode));
          }},
      Key{"train", "variant",
          [](RunConfig& c, const std::string& v) {
            c.train.variant = ParseVariant(Trim(v));
          },
          [](const RunConfig& c) {
            return std::string(VariantName(c.train.variant));
          }},
      EXITREC_NUM("train", train.convergence_tolerance, "convergence_tolerance"),
      EXITREC_NUM("train", train.patience, "patience"),

      EXITREC_NUM("eval", eval.exposure.top_k, "top_k"),
      EXITREC_NUM("eval", eval.exposure.nfr_max_transferability,
                  "nfr_max_transferability"),
      EXITREC_NUM("eval", eval.exposure.nfr_interest_threshold,
                  "nfr_interest_threshold"),
      EXITREC_NUM("eval", eval.experiment.train_fraction, "train_fraction"),
      EXITREC_NUM("eval", eval.experiment.n_requests, "n_requests"),
      EXITREC_NUM("eval", eval.experiment.n_candidates, "n_candidates"),
      Key{"eval", "variants",
          [](RunConfig& c, const std::string& v) {
            c.eval.variants.clear();
            for (const std::string& name : SplitList(v)) {
              c.eval.variants.push_back(ParseVariant(name));
            }
          },
          [](const RunConfig& c) { return FormatVariants(c.eval.variants); }},
      EXITREC_BOOL("eval", eval.parallel, "parallel"),

      Key{"paths", "data_dir",
          [](RunConfig& c, const std::string& v) { c.paths.data_dir = Trim(v); },
          [](const RunConfig& c) { return c.paths.data_dir.string(); }},
      Key{"paths", "out_dir",
          [](RunConfig& c, const std::string& v) { c.paths.out_dir = Trim(v); },
          [](const RunConfig& c) { return c.paths.out_dir.string(); }},
  };
  return keys;
}

#undef EXITREC_NUM
#undef EXITREC_BOOL
#undef EXITREC_INTS

const Key* FindKey(const std::string& section, const std::string& name) {
  for (const Key& key : Registry()) {
    if (section == key.section && name == key.name) return &key;
  }
  return nullptr;
}

}  // namespace

RunConfig RunConfig::Parse(std::string_view text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.line(), e.message()));
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(fmt::format("{}: key '{}' must appear inside a section",
                                    source, section));
    }
    for (const auto& [name, value] : body) {
      const Key* key = FindKey(section, name);
      if (key == nullptr) {
        throw ConfigError(fmt::format("{}: unknown key '{}' in section [{}]",
                                      source, name, section));
      }
      try {
        key->set(config, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: [{}] {}: {}", source, section, name,
                                      e.what()));
      }
    }
  }
  config.Validate();
  return config;
}

RunConfig RunConfig::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return Parse(buffer.str(), path.string());
}

void RunConfig::SetSeed(std::uint64_t seed) {
  world.seed = seed;
  train.seed = seed;
}

void RunConfig::Validate() const {
  world.Validate();
  train.Validate();
  ResolvedModel().Validate();
  if (eval.exposure.top_k < 1) throw ConfigError("eval.top_k must be >= 1");
  const double f = eval.experiment.train_fraction;
  if (!(f > 0.0 && f < 1.0)) {
    throw ConfigError("eval.train_fraction must lie in (0, 1)");
  }
  if (eval.experiment.n_requests < 0 || eval.experiment.n_candidates < 1) {
    throw ConfigError("eval.n_requests must be >= 0 and eval.n_candidates >= 1");
  }
  if (eval.variants.empty()) throw ConfigError("eval.variants is empty");
}

ModelConfig RunConfig::ResolvedModel() const {
  ModelConfig resolved = model;
  resolved.fields = SchemaFor(world);
  return resolved;
}

std::string RunConfig::ToIni() const {
  std::string out;
  const char* current = "";
  for (const Key& key : Registry()) {
    if (std::string_view(current) != key.section) {
      if (!out.empty()) out += '\n';
      out += fmt::format("[{}]\n", key.section);
      current = key.section;
    }
    out += fmt::format("{} = {}\n", key.name, key.get(*this));
  }
  return out;
}

void RunConfig::Echo(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError(fmt::format("cannot create directory {}: {}", dir.string(),
                              ec.message()));
  }
  const std::filesystem::path path = dir / "config.ini";
  std::ofstream out(path);
  out << ToIni();
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace exitrec
