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

#include "csilab/adam.hpp"
#include "csilab/channel.hpp"
#include "csilab/nets.hpp"
#include "csilab/scenario.hpp"

namespace csilab {

// Training configuration. The JSON key names (epochs, lr, batch_size,
// gamma, w_shortcut, mu, switch_delta, switch_patience, seed, snr_list, P)
// are frozen interface.
struct TrainConfig {
  int epochs = 50;
  double lr = 1e-4;
  int batch_size = 64;
  double gamma = 2.0;        // focal-loss focusing parameter
  double w_shortcut = 0.05;  // reconstructor shortcut weight
  double mu = 2000.0;        // stage-2 MSE weight
  double switch_delta = 0.02;
  int switch_patience = 5;
  uint64_t seed = 1;
  std::vector<double> snr_list = {-5, 0, 5, 10, 15};  // selector training SNR mix
  int num_ports = 32;                                 // P

  std::vector<int> channels = {64, 128, 128, 128, 128};
  double val_snr_db = 5.0;        // SNR used for validation metrics
  double recon_input_snr_db = 5.0;  // uplink SNR feeding reconstructor inputs
  bool stage1_only = false;

  // Keys present in the JSON override the base (preset) values.
  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig from_json_text(const std::string& text, const TrainConfig& base);
  static TrainConfig from_json_file(const std::string& path);
  static TrainConfig from_json_file(const std::string& path, const TrainConfig& base);
  std::string to_json_text() const;
};

// Fires after `patience` consecutive epochs whose validation R_avg
// improvement stays below `delta`.
class StageSwitchRule {
 public:
  StageSwitchRule(double delta, int patience) : delta_(delta), patience_(patience) {}

  // Feed the per-epoch improvement directly; returns true on the epoch the
  // switch fires (once).
  bool observe_improvement(double improvement) {
    if (fired_) return false;
    streak_ = (improvement < delta_) ? streak_ + 1 : 0;
    if (streak_ >= patience_) {
      fired_ = true;
      return true;
    }
    return false;
  }
  // Feed the validation metric itself; the first call sets the baseline.
  bool observe(double r_avg) {
    if (!has_prev_) {
      has_prev_ = true;
      prev_ = r_avg;
      return false;
    }
    const double imp = r_avg - prev_;
    prev_ = r_avg;
    return observe_improvement(imp);
  }
  bool fired() const { return fired_; }

 private:
  double delta_;
  int patience_;
  int streak_ = 0;
  bool fired_ = false;
  bool has_prev_ = false;
  double prev_ = 0.0;
};

struct EpochRow {
  int epoch = 0;
  int stage = 1;
  double train_loss = 0.0;
  double val_primary = 0.0;    // selector: P_N; reconstructor: R_avg
  double val_secondary = 0.0;  // selector: label accuracy; reconstructor: MSE
};

struct TrainResult {
  std::vector<EpochRow> history;
  int switch_epoch = -1;  // -1: switch never fired
  int best_epoch = 0;
  uint64_t zf_skipped = 0;  // stage-2 drops skipped due to singular Gram
};

// ---- checkpoints -----------------------------------------------------------
// "CSCK" format: magic, u32 version, u32 manifest_len, manifest JSON
// (architecture name, shapes, seed, epoch, optimizer hyperparameters, RNG
// state), then raw little-endian float32 blobs in declaration order
// (parameters, BatchNorm running stats, Adam moments when present).

struct CheckpointInfo {
  std::string architecture;  // "selector" | "reconstructor"
  NetArch arch;
  uint64_t seed = 0;
  int epoch = 0;
  double w_shortcut = 0.05;
};

CheckpointInfo read_checkpoint_info(const std::string& path);

// best_params, when given, is the flattened best-validation snapshot; it
// is stored alongside the last-epoch state so one file serves both resume
// (last state + optimizer + RNG) and evaluation (best parameters).
void save_checkpoint(const std::string& path, SelectorNetwork<float>& net, uint64_t seed,
                     int epoch, const AdamState<float>* adam, const Rng* train_rng,
                     const std::vector<float>* best_params = nullptr);
void save_checkpoint(const std::string& path, ReconstructorNetwork<float>& net, uint64_t seed,
                     int epoch, const AdamState<float>* adam, const Rng* train_rng,
                     const std::vector<float>* best_params = nullptr);
// Net must be constructed with the checkpoint's architecture.
void load_checkpoint(const std::string& path, SelectorNetwork<float>& net,
                     AdamState<float>* adam, Rng* train_rng, int* epoch);
void load_checkpoint(const std::string& path, ReconstructorNetwork<float>& net,
                     AdamState<float>* adam, Rng* train_rng, int* epoch);

// Loaders for evaluation: prefer the best-validation parameters when the
// checkpoint carries them.
SelectorNetwork<float> load_selector(const std::string& path);
ReconstructorNetwork<float> load_reconstructor(const std::string& path);

// ---- trainers ----------------------------------------------------------------

// Labels are the top-P ports of the clean uplink grid; inputs draw their
// SNR uniformly from cfg.snr_list per sample and epoch. Resuming from a
// checkpoint reproduces the non-resumed trajectory exactly in
// single-threaded mode.
TrainResult train_selector(SelectorNetwork<float>& net, const std::vector<Drop>& train_drops,
                           const std::vector<Drop>& val_drops, const ScenarioConfig& cfg,
                           const TrainConfig& tc,
                           const std::optional<std::string>& resume_path = std::nullopt,
                           const std::optional<std::string>& checkpoint_out = std::nullopt);

// Stage 1 minimizes the grid MSE; the run switches to the combined
// -R_avg + mu*MSE objective when validation R_avg improves by less than
// switch_delta for switch_patience consecutive epochs.
TrainResult train_reconstructor(ReconstructorNetwork<float>& net,
                                const std::vector<Drop>& train_drops,
                                const std::vector<Drop>& val_drops, const ScenarioConfig& cfg,
                                const TrainConfig& tc,
                                const std::optional<std::string>& resume_path = std::nullopt,
                                const std::optional<std::string>& checkpoint_out = std::nullopt);

// Validation helpers shared with the sweep harness.
double validate_selector_pn(SelectorNetwork<float>& net, const std::vector<Drop>& val_drops,
                            const ScenarioConfig& cfg, int num_ports, double snr_db);
struct ReconValidation {
  double r_avg = 0.0;
  double mse = 0.0;
  uint64_t skipped = 0;
};
ReconValidation validate_reconstructor(ReconstructorNetwork<float>& net,
                                       const std::vector<Drop>& val_drops,
                                       const ScenarioConfig& cfg, const TrainConfig& tc);

}  // namespace csilab
