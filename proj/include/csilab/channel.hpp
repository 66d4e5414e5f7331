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

#include <vector>

#include "csilab/common.hpp"
#include "csilab/rng.hpp"
#include "csilab/scenario.hpp"

namespace csilab {

// One ray inside a cluster. Delay/angle offsets are shared by UL and DL;
// only the initial phases (one per polarization block) differ per link,
// which is what realizes angular-delay partial reciprocity.
struct RayGeom {
  double delay_offset_s = 0.0;
  double azimuth_offset_rad = 0.0;
  double zenith_offset_rad = 0.0;
  double phase_ul[2] = {0.0, 0.0};
  double phase_dl[2] = {0.0, 0.0};
};

struct Cluster {
  double delay_s = 0.0;
  double power = 0.0;  // linear; all clusters of a geometry sum to 1
  double mean_azimuth_rad = 0.0;
  double mean_zenith_rad = 0.0;
  bool specular = false;  // Ricean LOS path (single ray, zero offsets)
  std::vector<RayGeom> rays;
};

struct UEGeometry {
  double distance_m = 0.0;  // ground distance BS->UE
  double azimuth_rad = 0.0;
  double height_m = 0.0;
  bool is_los = false;
  std::vector<Cluster> clusters;

  double distance_3d_m(double h_bs_m) const;
};

struct UESample {
  UEGeometry geometry;
  ChannelMatrix h_ul_clean;
  ChannelMatrix h_dl;
  // Aligned with the SNR list the drop was generated for.
  std::vector<ChannelMatrix> h_ul_noisy;
};

struct Drop {
  uint64_t drop_id = 0;
  std::vector<double> snr_list_db;
  std::vector<UESample> ues;
};

// Distance-dependent LOS probability (UMa outdoor core term).
double los_probability(double distance_m);

// PL(dB) = alpha + 10*beta*log10(d_3d) + 20*log10(f_c/GHz), constants per
// LOS state from the config.
double pathloss_db(const ScenarioConfig& cfg, const UEGeometry& geom, double f_c_hz);

UEGeometry draw_geometry(const ScenarioConfig& cfg, Rng& rng);

// Sum of per-ray contributions g_r * a(theta_r) * exp(-j*2*pi*f_m*tau_r)
// per subband, where f_m is the subband center offset from the carrier and
// a() is the dual-polarization UPA steering vector at the link's carrier.
ChannelMatrix synthesize_channel(const UEGeometry& geom, const ScenarioConfig& cfg, Link link);

// Adds i.i.d. circular complex Gaussian noise with per-element variance
// ||H||_F^2 / (N_Tx*M*10^(snr/10)). An infinite snr_db returns H unchanged.
ChannelMatrix add_measurement_noise(const ChannelMatrix& h, double snr_db, Rng& rng);

// K UEs drawn from counter-derived substreams of (master_seed, drop_id):
// bit-identical for the same tuple regardless of scheduling.
Drop make_drop(const ScenarioConfig& cfg, uint64_t master_seed, uint64_t drop_id,
               const std::vector<double>& snr_list_db);

}  // namespace csilab
