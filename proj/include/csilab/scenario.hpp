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

#include <string>
#include <vector>

#include "csilab/common.hpp"

namespace csilab {

// Single-sector FDD MU-MIMO scenario. Defaults reproduce the standard UMa
// setup this laboratory targets: 3.4/3.5 GHz UL/DL, 4x4 dual-polarized UPA
// (32 TX ports), 8 subbands, 5 UEs, 32 selected ports, 5/3/4-bit quantizer.
struct ScenarioConfig {
  // Carriers and users
  double f_c_ul_hz = 3.4e9;
  double f_c_dl_hz = 3.5e9;
  int num_ues = 5;  // K

  // Dual-polarized UPA: N_Tx = 2 * n_h * n_v
  int n_h = 4;
  int n_v = 4;

  // OFDM numerology: each subband spans n_rb_per_subband RBs of 12
  // subcarriers. n_rb_per_subband is not pinned by the scenario tables;
  // 1 keeps the delay window wide enough that the clustered profile stays
  // compressible on the M-point delay grid.
  int num_subbands = 8;  // M
  int n_rb_per_subband = 1;
  double subcarrier_spacing_hz = 15e3;

  // Geometry
  double sector_deg = 120.0;
  double h_bs_m = 25.0;
  double ue_height_min_m = 1.5;
  double ue_height_max_m = 22.5;
  double ue_distance_min_m = 35.0;
  double ue_distance_max_m = 250.0;

  // Link budget
  double p_tx_dbm = 35.0;
  double noise_figure_db = 5.0;

  // Clustered multipath model
  int num_clusters_los = 12;
  int num_clusters_nlos = 20;
  int rays_per_cluster = 20;
  double cluster_delay_spread_los_ns = 98.3;
  double cluster_delay_spread_nlos_ns = 406.5;
  double ray_delay_spread_ns = 4.7;
  double cluster_angle_spread_los_deg = 13.2;
  double cluster_angle_spread_nlos_deg = 27.4;
  double ray_angle_spread_los_deg = 5.0;
  double ray_angle_spread_nlos_deg = 2.0;
  double rician_k_db = 9.0;
  double shadow_std_db = 3.0;
  // Cluster powers decay as exp(-cluster_power_decay * tau / DS); zenith
  // spreads are the azimuth spreads divided by zenith_spread_ratio. Both
  // control how much channel power the top angular-delay ports capture.
  double cluster_power_decay = 3.0;
  double zenith_spread_ratio = 6.0;

  // Pathloss: PL(dB) = alpha + 10*beta*log10(d_3d) + 20*log10(f_c/GHz)
  double pl_alpha_los = 28.0;
  double pl_beta_los = 2.2;
  double pl_alpha_nlos = 13.54;
  double pl_beta_nlos = 3.908;

  // Type-II codebook
  int num_ports = 32;    // P
  int q_wideband = 5;    // Q_w
  int q_amp = 3;         // Q_n,a
  int q_phase = 4;       // Q_n,p
  int oversample_h = 1;  // O_h
  int oversample_v = 1;  // O_v

  int n_tx() const { return 2 * n_h * n_v; }
  double subband_bandwidth_hz() const {
    return n_rb_per_subband * 12.0 * subcarrier_spacing_hz;
  }
  // Subband-m center frequency offset from the carrier.
  double subband_offset_hz(int m) const {
    return (m - 0.5 * (num_subbands - 1)) * subband_bandwidth_hz();
  }

  // Throws ConfigError on any violated invariant.
  void validate() const;

  // Parses a JSON object; unknown keys are rejected so typos never
  // silently fall back to defaults.
  static ScenarioConfig from_json_text(const std::string& text);
  static ScenarioConfig from_json_file(const std::string& path);
  std::string to_json_text() const;
};

}  // namespace csilab
