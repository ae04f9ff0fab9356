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

#include "exitrec/optimizer.h"

#include <cmath>
#include <string>

#include "exitrec/errors.h"

namespace exitrec {

AdamState AdamState::For(std::span<Parameter* const> params,
                         AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const Parameter* p : params) {
    state.first_moment.emplace_back(p->value.shape());
    state.second_moment.emplace_back(p->value.shape());
  }
  return state;
}

void AdamStep(std::span<Parameter* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw DimensionError("adam: state tracks " +
                         std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!p.grad.SameShape(p.value) ||
        !state.first_moment[i].SameShape(p.value) ||
        !state.second_moment[i].SameShape(p.value)) {
      throw DimensionError("adam: shape mismatch for parameter " + p.name);
    }
  }

  const AdamOptions& opt = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    double* m = state.first_moment[i].raw();
    double* v = state.second_moment[i].raw();
    double* w = p.value.raw();
    const double* g = p.grad.raw();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
}

}  // namespace exitrec
