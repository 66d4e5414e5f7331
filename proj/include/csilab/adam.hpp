// SPDX-License-Identifier: Apache-2.0
//
// csilab - link-level laboratory for Release-17 Type-II CSI feedback
// Copyright (C) 2026 the csilab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <cmath>
#include <vector>

#include "csilab/tensor.hpp"

namespace csilab {

template <typename S>
struct AdamState {
  uint64_t step = 0;
  double lr = 3e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<S>> m;  // first moments, one per parameter
  std::vector<std::vector<S>> v;  // second moments

  void init(const std::vector<ParamTensor<S>*>& params) {
    m.clear();
    v.clear();
    for (const auto* p : params) {
      m.emplace_back(p->numel(), S(0));
      v.emplace_back(p->numel(), S(0));
    }
    step = 0;
  }
};

// Standard bias-corrected Adam update from the gradients currently held in
// each ParamTensor.
template <typename S>
void adam_step(const std::vector<ParamTensor<S>*>& params, AdamState<S>& state) {
  if (state.m.size() != params.size()) throw ConfigError("adam_step: state not initialized");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor<S>& p = *params[pi];
    if (!p.requires_grad) continue;
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (size_t i = 0; i < p.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = static_cast<S>(state.beta1 * m[i] + (1.0 - state.beta1) * g);
      v[i] = static_cast<S>(state.beta2 * v[i] + (1.0 - state.beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.values[i] -= static_cast<S>(state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

}  // namespace csilab
