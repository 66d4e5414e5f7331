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

#include <functional>
#include <string>
#include <vector>

#include "csilab/tape.hpp"

namespace csilab {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

// Central finite differences at 64-bit against the tape's backward pass.
// Relative error per element is |a - n| / max(|a| + |n|, 1e-3); the floor
// keeps finite-difference rounding noise at near-zero gradients from
// dominating while the absolute numerator still flags dropped terms. The
// result reports the worst element over all checked parameters.
//
// build must be deterministic: it is re-run for every perturbed evaluation
// (seed any dropout streams inside it). analytic_scale != 1 emulates a
// corrupted backward and is used by the negative control.
GradCheckResult check_gradients(
    const std::string& name, const std::vector<ParamTensor<double>*>& params,
    const std::function<Tape<double>::Id(Tape<double>&)>& build, double tolerance = 1e-4,
    double step = 1e-4, double analytic_scale = 1.0);

// Finite-difference checks for every differentiable tape op at the shipped
// tolerances, plus the deliberately-corrupted negative control (which must
// report pass = false).
std::vector<GradCheckResult> run_neuro_gradcheck_suite(uint64_t seed);

}  // namespace csilab
