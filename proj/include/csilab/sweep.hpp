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

#include <optional>
#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/nets.hpp"
#include "csilab/scenario.hpp"

namespace csilab {

enum class EvalMode {
  TypeiiBaseline,   // power selection on noisy UL + standard quantizer
  PerfectUlBound,   // power selection on clean UL + standard quantizer
  DlSelect,         // learned port selection + standard quantizer
  DlRecon,          // noisy power selection + learned reconstruction
  DlBoth,           // learned selection + learned reconstruction
  PerfectCsiBound,  // ZF on the true downlink channels
};

EvalMode parse_eval_mode(const std::string& name);
std::string eval_mode_name(EvalMode mode);

struct SweepSpec {
  EvalMode mode = EvalMode::TypeiiBaseline;
  std::vector<double> snr_list_db = {5.0};
  std::vector<int> p_list = {32};
  std::string dataset_path;
  std::string selector_path;       // modes dl-select / dl-both
  std::string reconstructor_path;  // modes dl-recon / dl-both
  std::string out_path;
  double zf_ridge = 0.0;
  uint64_t seed = 0;  // provenance column only

  void validate() const;
};

struct EvalRow {
  std::string mode;
  double snr_db = 0.0;
  int num_ports = 0;
  uint64_t n_drops = 0;
  double pn_mean = 0.0, pn_std = 0.0;
  double r_avg_mean = 0.0, r_avg_std = 0.0;
  uint64_t seed = 0;
};

// Runs the sweep over (snr, P) on every drop of the dataset. Per-drop P_N
// is the mean over its UEs; the CSV aggregates mean/std across drops.
// Drops whose ZF solve is singular are skipped (counted out of n_drops).
std::vector<EvalRow> run_eval(const SweepSpec& spec);

// CSV with a '#'-prefixed JSON manifest line, then one row per (snr, P).
void write_eval_csv(const std::string& path, const SweepSpec& spec,
                    const std::vector<EvalRow>& rows);

// One evaluated drop (exposed for tests and the payload tool).
struct DropEval {
  double pn = 0.0;
  double r_avg = 0.0;
  bool ok = false;
};
DropEval evaluate_drop(const Drop& drop, const ScenarioConfig& cfg, EvalMode mode,
                       double snr_db, int num_ports, SelectorNetwork<float>* selector,
                       ReconstructorNetwork<float>* reconstructor, double zf_ridge);

}  // namespace csilab
