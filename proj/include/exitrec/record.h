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

#ifndef EXITREC_RECORD_H_
#define EXITREC_RECORD_H_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace exitrec {

// Feature columns of an interaction, in log-file order.
enum FeatureColumn : int {
  kUserId = 0,
  kItemId,
  kAge,
  kGender,
  kOccupation,
  kCategory1,
  kCategory2,
  kCategory3,
  kBusiness,
  kHour,
  kWeekday,
  kPage,
  kConnection,
  kNumFeatureColumns,
};

inline constexpr std::array<std::string_view, kNumFeatureColumns>
    kFeatureColumnNames = {"user_id", "item_id",  "age",     "gender",
                           "occupation", "cat1",  "cat2",    "cat3",
                           "business", "hour",    "weekday", "page",
                           "connection"};

enum class FieldGroup { kUser, kItem, kContext };

struct FeatureField {
  std::string name;
  FieldGroup group = FieldGroup::kUser;
  std::int32_t vocab_size = 0;

  friend bool operator==(const FeatureField&, const FeatureField&) = default;
};

// Vocabulary and grouping of every feature column, in column order.
using FeatureSchema = std::vector<FeatureField>;

FieldGroup GroupOf(FeatureColumn column);
std::string_view GroupName(FieldGroup group);
int ColumnIndex(std::string_view name);  // -1 when unknown

// Scene fields fed to the scene selector, by column name.
std::vector<std::string> DefaultSceneFields();

// One exposure of an item to a user with its per-domain purchase labels.
struct InteractionRecord {
  std::array<std::int32_t, kNumFeatureColumns> features{};
  std::uint8_t y_target = 0;
  std::vector<std::uint8_t> y_sources;

  std::int32_t user_id() const { return features[kUserId]; }
  std::int32_t item_id() const { return features[kItemId]; }

  friend bool operator==(const InteractionRecord&,
                         const InteractionRecord&) = default;
};

}  // namespace exitrec

#endif  // EXITREC_RECORD_H_
