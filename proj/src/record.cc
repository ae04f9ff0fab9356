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

#include "exitrec/record.h"

namespace exitrec {

FieldGroup GroupOf(FeatureColumn column) {
  switch (column) {
    case kUserId:
    case kAge:
    case kGender:
    case kOccupation:
      return FieldGroup::kUser;
    case kItemId:
    case kCategory1:
    case kCategory2:
    case kCategory3:
    case kBusiness:
      return FieldGroup::kItem;
    default:
      return FieldGroup::kContext;
  }
}

std::string_view GroupName(FieldGroup group) {
  switch (group) {
    case FieldGroup::kUser:
      return "user";
    case FieldGroup::kItem:
      return "item";
    case FieldGroup::kContext:
      return "context";
  }
  return "?";
}

int ColumnIndex(std::string_view name) {
  for (int i = 0; i < kNumFeatureColumns; ++i) {
    if (kFeatureColumnNames[i] == name) return i;
  }
  return -1;
}

std::vector<std::string> DefaultSceneFields() {
  return {"gender", "occupation", "age",     "cat1", "cat2",      "cat3",
          "business", "hour",     "weekday", "page", "connection"};
}

}  // namespace exitrec
