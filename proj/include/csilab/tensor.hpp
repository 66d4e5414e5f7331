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

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "csilab/common.hpp"
#include "csilab/rng.hpp"

namespace csilab {

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

// A learnable (or stateful) real tensor with a paired gradient buffer.
template <typename S>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<S> values;
  std::vector<S> grad;
  bool requires_grad = true;

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<int> sh, bool rg = true)
      : name(std::move(n)), shape(std::move(sh)), requires_grad(rg) {
    values.assign(shape_numel(shape), S(0));
    grad.assign(values.size(), S(0));
  }

  size_t numel() const { return values.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
  void fill(S v) { std::fill(values.begin(), values.end(), v); }

  // Kaiming-uniform fan-in init with the LeakyReLU gain.
  void kaiming_uniform(int fan_in, Rng& rng, double negative_slope = 0.1) {
    const double gain = std::sqrt(2.0 / (1.0 + negative_slope * negative_slope));
    const double bound = gain * std::sqrt(3.0 / fan_in);
    for (auto& v : values) v = static_cast<S>(rng.uniform(-bound, bound));
  }
};

}  // namespace csilab
