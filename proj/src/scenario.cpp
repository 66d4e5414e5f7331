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

#include "csilab/scenario.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace csilab {

void ScenarioConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("scenario config: " + what);
  };
  require(f_c_ul_hz > 0 && f_c_dl_hz > 0, "carrier frequencies must be positive");
  require(f_c_ul_hz != f_c_dl_hz, "FDD requires f_c_ul != f_c_dl");
  require(num_ues >= 1, "num_ues >= 1");
  require(n_h >= 1 && n_v >= 1, "antenna counts >= 1");
  require(num_subbands >= 1, "num_subbands >= 1");
  require(n_rb_per_subband >= 1, "n_rb_per_subband >= 1");
  require(subcarrier_spacing_hz > 0, "subcarrier spacing > 0");
  require(sector_deg > 0 && sector_deg <= 360.0, "sector in (0, 360]");
  require(ue_height_min_m <= ue_height_max_m, "UE height range ordered");
  require(ue_distance_min_m > 0 && ue_distance_min_m <= ue_distance_max_m,
          "UE distance range ordered and positive");
  require(num_clusters_los >= 1 && num_clusters_nlos >= 1, "cluster counts >= 1");
  require(rays_per_cluster >= 1, "rays_per_cluster >= 1");
  require(cluster_delay_spread_los_ns > 0 && cluster_delay_spread_nlos_ns > 0,
          "cluster delay spreads > 0");
  require(cluster_angle_spread_los_deg > 0 && cluster_angle_spread_nlos_deg > 0,
          "cluster angle spreads > 0");
  require(cluster_power_decay > 0 && zenith_spread_ratio > 0,
          "power decay and zenith ratio > 0");
  require(num_ports >= 1 && num_ports <= n_tx() * num_subbands,
          "num_ports in [1, N_Tx*M]");
  require(q_wideband >= 1 && q_amp >= 1 && q_phase >= 1, "quantizer bits >= 1");
  require(oversample_h >= 1 && oversample_v >= 1, "oversampling factors >= 1");
}

namespace {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ScenarioConfig ScenarioConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scenario config: top level must be an object");

  static const std::vector<std::string> known = {
      "f_c_ul_hz", "f_c_dl_hz", "num_ues", "n_h", "n_v", "num_subbands",
      "n_rb_per_subband", "subcarrier_spacing_hz", "sector_deg", "h_bs_m",
      "ue_height_min_m", "ue_height_max_m", "ue_distance_min_m",
      "ue_distance_max_m", "p_tx_dbm", "noise_figure_db", "num_clusters_los",
      "num_clusters_nlos", "rays_per_cluster", "cluster_delay_spread_los_ns",
      "cluster_delay_spread_nlos_ns", "ray_delay_spread_ns",
      "cluster_angle_spread_los_deg", "cluster_angle_spread_nlos_deg",
      "ray_angle_spread_los_deg", "ray_angle_spread_nlos_deg", "rician_k_db",
      "shadow_std_db", "cluster_power_decay", "zenith_spread_ratio", "pl_alpha_los", "pl_beta_los", "pl_alpha_nlos",
      "pl_beta_nlos", "num_ports", "q_wideband", "q_amp", "q_phase",
      "oversample_h", "oversample_v"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("scenario config: unknown key '" + it.key() + "'");
  }

  ScenarioConfig c;
  read_key(j, "f_c_ul_hz", c.f_c_ul_hz);
  read_key(j, "f_c_dl_hz", c.f_c_dl_hz);
  read_key(j, "num_ues", c.num_ues);
  read_key(j, "n_h", c.n_h);
  read_key(j, "n_v", c.n_v);
  read_key(j, "num_subbands", c.num_subbands);
  read_key(j, "n_rb_per_subband", c.n_rb_per_subband);
  read_key(j, "subcarrier_spacing_hz", c.subcarrier_spacing_hz);
  read_key(j, "sector_deg", c.sector_deg);
  read_key(j, "h_bs_m", c.h_bs_m);
  read_key(j, "ue_height_min_m", c.ue_height_min_m);
  read_key(j, "ue_height_max_m", c.ue_height_max_m);
  read_key(j, "ue_distance_min_m", c.ue_distance_min_m);
  read_key(j, "ue_distance_max_m", c.ue_distance_max_m);
  read_key(j, "p_tx_dbm", c.p_tx_dbm);
  read_key(j, "noise_figure_db", c.noise_figure_db);
  read_key(j, "num_clusters_los", c.num_clusters_los);
  read_key(j, "num_clusters_nlos", c.num_clusters_nlos);
  read_key(j, "rays_per_cluster", c.rays_per_cluster);
  read_key(j, "cluster_delay_spread_los_ns", c.cluster_delay_spread_los_ns);
  read_key(j, "cluster_delay_spread_nlos_ns", c.cluster_delay_spread_nlos_ns);
  read_key(j, "ray_delay_spread_ns", c.ray_delay_spread_ns);
  read_key(j, "cluster_angle_spread_los_deg", c.cluster_angle_spread_los_deg);
  read_key(j, "cluster_angle_spread_nlos_deg", c.cluster_angle_spread_nlos_deg);
  read_key(j, "ray_angle_spread_los_deg", c.ray_angle_spread_los_deg);
  read_key(j, "ray_angle_spread_nlos_deg", c.ray_angle_spread_nlos_deg);
  read_key(j, "rician_k_db", c.rician_k_db);
  read_key(j, "shadow_std_db", c.shadow_std_db);
  read_key(j, "cluster_power_decay", c.cluster_power_decay);
  read_key(j, "zenith_spread_ratio", c.zenith_spread_ratio);
  read_key(j, "pl_alpha_los", c.pl_alpha_los);
  read_key(j, "pl_beta_los", c.pl_beta_los);
  read_key(j, "pl_alpha_nlos", c.pl_alpha_nlos);
  read_key(j, "pl_beta_nlos", c.pl_beta_nlos);
  read_key(j, "num_ports", c.num_ports);
  read_key(j, "q_wideband", c.q_wideband);
  read_key(j, "q_amp", c.q_amp);
  read_key(j, "q_phase", c.q_phase);
  read_key(j, "oversample_h", c.oversample_h);
  read_key(j, "oversample_v", c.oversample_v);
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("scenario config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

std::string ScenarioConfig::to_json_text() const {
  nlohmann::json j;
  j["f_c_ul_hz"] = f_c_ul_hz;
  j["f_c_dl_hz"] = f_c_dl_hz;
  j["num_ues"] = num_ues;
  j["n_h"] = n_h;
  j["n_v"] = n_v;
  j["num_subbands"] = num_subbands;
  j["n_rb_per_subband"] = n_rb_per_subband;
  j["subcarrier_spacing_hz"] = subcarrier_spacing_hz;
  j["sector_deg"] = sector_deg;
  j["h_bs_m"] = h_bs_m;
  j["ue_height_min_m"] = ue_height_min_m;
  j["ue_height_max_m"] = ue_height_max_m;
  j["ue_distance_min_m"] = ue_distance_min_m;
  j["ue_distance_max_m"] = ue_distance_max_m;
  j["p_tx_dbm"] = p_tx_dbm;
  j["noise_figure_db"] = noise_figure_db;
  j["num_clusters_los"] = num_clusters_los;
  j["num_clusters_nlos"] = num_clusters_nlos;
  j["rays_per_cluster"] = rays_per_cluster;
  j["cluster_delay_spread_los_ns"] = cluster_delay_spread_los_ns;
  j["cluster_delay_spread_nlos_ns"] = cluster_delay_spread_nlos_ns;
  j["ray_delay_spread_ns"] = ray_delay_spread_ns;
  j["cluster_angle_spread_los_deg"] = cluster_angle_spread_los_deg;
  j["cluster_angle_spread_nlos_deg"] = cluster_angle_spread_nlos_deg;
  j["ray_angle_spread_los_deg"] = ray_angle_spread_los_deg;
  j["ray_angle_spread_nlos_deg"] = ray_angle_spread_nlos_deg;
  j["rician_k_db"] = rician_k_db;
  j["shadow_std_db"] = shadow_std_db;
  j["cluster_power_decay"] = cluster_power_decay;
  j["zenith_spread_ratio"] = zenith_spread_ratio;
  j["pl_alpha_los"] = pl_alpha_los;
  j["pl_beta_los"] = pl_beta_los;
  j["pl_alpha_nlos"] = pl_alpha_nlos;
  j["pl_beta_nlos"] = pl_beta_nlos;
  j["num_ports"] = num_ports;
  j["q_wideband"] = q_wideband;
  j["q_amp"] = q_amp;
  j["q_phase"] = q_phase;
  j["oversample_h"] = oversample_h;
  j["oversample_v"] = oversample_v;
  return j.dump(2);
}

}  // namespace csilab
