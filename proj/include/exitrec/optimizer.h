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

#ifndef EXITREC_OPTIMIZER_H_
#define EXITREC_OPTIMIZER_H_

#include <cstdint>
#include <span>
#include <vector>

#include "exitrec/tensor.h"

namespace exitrec {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment estimates for one parameter list; moments[i] matches params[i].
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState For(std::span<Parameter* const> params,
                       AdamOptions options = {});
};

// One bias-corrected Adam update of every parameter from its grad. Does not
// zero the gradients.
void AdamStep(std::span<Parameter* const> params, AdamState& state);

}  // namespace exitrec

#endif  // EXITREC_OPTIMIZER_H_
