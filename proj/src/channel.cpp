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

#include "csilab/channel.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace csilab {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Fixed ray offset angles for 20 rays per cluster, normalized to unit RMS
// (Laplacian quantiles, the standard CDL table).
constexpr std::array<double, 20> kRayOffsets20 = {
    0.0447, -0.0447, 0.1413, -0.1413, 0.2492, -0.2492, 0.3715, -0.3715,
    0.5129, -0.5129, 0.6797, -0.6797, 0.8844, -0.8844, 1.1481, -1.1481,
    1.5195, -1.5195, 2.1551, -2.1551};

std::vector<double> ray_offsets(int n_rays) {
  if (n_rays == 20)
    return std::vector<double>(kRayOffsets20.begin(), kRayOffsets20.end());
  // General case: +/- Laplacian quantiles rescaled to unit RMS.
  std::vector<double> off(n_rays, 0.0);
  const int half = n_rays / 2;
  double sq = 0.0;
  for (int i = 0; i < half; ++i) {
    const double p = (i + 0.5) / n_rays;  // upper-tail mass
    const double q = -std::log(2.0 * p) / std::sqrt(2.0);
    off[2 * i] = q;
    off[2 * i + 1] = -q;
    sq += 2.0 * q * q;
  }
  const double rms = std::sqrt(sq / n_rays);
  if (rms > 0)
    for (auto& o : off) o /= rms;
  return off;
}

double wrap_pi(double a) {
  a = std::fmod(a + M_PI, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a - M_PI;
}

}  // namespace

double UEGeometry::distance_3d_m(double h_bs_m) const {
  const double dh = height_m - h_bs_m;
  return std::sqrt(distance_m * distance_m + dh * dh);
}

double los_probability(double distance_m) {
  const double d = std::max(distance_m, 1e-3);
  const double e = std::exp(-d / 63.0);
  return std::min(18.0 / d, 1.0) * (1.0 - e) + e;
}

double pathloss_db(const ScenarioConfig& cfg, const UEGeometry& geom, double f_c_hz) {
  const double d3 = geom.distance_3d_m(cfg.h_bs_m);
  const double f_ghz = f_c_hz / 1e9;
  const double alpha = geom.is_los ? cfg.pl_alpha_los : cfg.pl_alpha_nlos;
  const double beta = geom.is_los ? cfg.pl_beta_los : cfg.pl_beta_nlos;
  return alpha + 10.0 * beta * std::log10(d3) + 20.0 * std::log10(f_ghz);
}

UEGeometry draw_geometry(const ScenarioConfig& cfg, Rng& rng) {
  UEGeometry g;
  // Uniform over the sector annulus area.
  const double d2min = cfg.ue_distance_min_m * cfg.ue_distance_min_m;
  const double d2max = cfg.ue_distance_max_m * cfg.ue_distance_max_m;
  g.distance_m = std::sqrt(rng.uniform(d2min, d2max));
  const double half_sector = 0.5 * cfg.sector_deg * M_PI / 180.0;
  g.azimuth_rad = rng.uniform(-half_sector, half_sector);
  g.height_m = rng.uniform(cfg.ue_height_min_m, cfg.ue_height_max_m);
  g.is_los = rng.uniform() < los_probability(g.distance_m);

  const int n_clusters = g.is_los ? cfg.num_clusters_los : cfg.num_clusters_nlos;
  const double ds_s =
      1e-9 * (g.is_los ? cfg.cluster_delay_spread_los_ns : cfg.cluster_delay_spread_nlos_ns);
  const double cluster_as_rad = (M_PI / 180.0) * (g.is_los ? cfg.cluster_angle_spread_los_deg
                                                           : cfg.cluster_angle_spread_nlos_deg);
  const double ray_as_rad = (M_PI / 180.0) *
      (g.is_los ? cfg.ray_angle_spread_los_deg : cfg.ray_angle_spread_nlos_deg);
  const double ray_ds_s = 1e-9 * cfg.ray_delay_spread_ns;

  const double zenith_los =
      std::acos(std::clamp((g.height_m - cfg.h_bs_m) / g.distance_3d_m(cfg.h_bs_m), -1.0, 1.0));

  // Cluster delays: i.i.d. exponential, sorted, first shifted to zero.
  std::vector<double> delays(n_clusters);
  for (auto& d : delays) d = rng.exponential(ds_s);
  std::sort(delays.begin(), delays.end());
  const double d0 = delays.front();
  for (auto& d : delays) d -= d0;

  // Powers: exponential delay profile with lognormal shadowing, renormalized.
  std::vector<double> powers(n_clusters);
  double psum = 0.0;
  for (int c = 0; c < n_clusters; ++c) {
    const double shadow_db = cfg.shadow_std_db * rng.gaussian();
    powers[c] = std::exp(-cfg.cluster_power_decay * delays[c] / ds_s) *
                std::pow(10.0, -shadow_db / 10.0);
    psum += powers[c];
  }
  for (auto& p : powers) p /= psum;

  const auto az_offsets = ray_offsets(cfg.rays_per_cluster);

  g.clusters.reserve(n_clusters + 1);
  for (int c = 0; c < n_clusters; ++c) {
    Cluster cl;
    cl.delay_s = delays[c];
    cl.power = powers[c];
    cl.mean_azimuth_rad = wrap_pi(g.azimuth_rad + cluster_as_rad * rng.gaussian());
    cl.mean_zenith_rad = std::clamp(
        zenith_los + (cluster_as_rad / cfg.zenith_spread_ratio) * rng.gaussian(), 0.0, M_PI);

    // Random azimuth/zenith coupling of the fixed offsets, as in CDL.
    std::vector<int> perm(cfg.rays_per_cluster);
    for (int r = 0; r < cfg.rays_per_cluster; ++r) perm[r] = r;
    for (int r = cfg.rays_per_cluster - 1; r > 0; --r)
      std::swap(perm[r], perm[static_cast<int>(rng.below(r + 1))]);

    cl.rays.resize(cfg.rays_per_cluster);
    for (int r = 0; r < cfg.rays_per_cluster; ++r) {
      RayGeom& ray = cl.rays[r];
      ray.delay_offset_s = rng.exponential(ray_ds_s);
      ray.azimuth_offset_rad = ray_as_rad * az_offsets[r];
      ray.zenith_offset_rad = (ray_as_rad / cfg.zenith_spread_ratio) * az_offsets[perm[r]];
      for (int b = 0; b < 2; ++b) {
        ray.phase_ul[b] = rng.uniform(0.0, kTwoPi);
        ray.phase_dl[b] = rng.uniform(0.0, kTwoPi);
      }
    }
    g.clusters.push_back(std::move(cl));
  }

  if (g.is_los) {
    // Ricean specular path at the LOS direction, zero delay.
    const double k_lin = db_to_linear(cfg.rician_k_db);
    for (auto& cl : g.clusters) cl.power *= 1.0 / (k_lin + 1.0);
    Cluster spec;
    spec.delay_s = 0.0;
    spec.power = k_lin / (k_lin + 1.0);
    spec.mean_azimuth_rad = g.azimuth_rad;
    spec.mean_zenith_rad = zenith_los;
    spec.specular = true;
    spec.rays.resize(1);
    for (int b = 0; b < 2; ++b) {
      spec.rays[0].phase_ul[b] = rng.uniform(0.0, kTwoPi);
      spec.rays[0].phase_dl[b] = rng.uniform(0.0, kTwoPi);
    }
    g.clusters.insert(g.clusters.begin(), std::move(spec));
  }
  return g;
}

ChannelMatrix synthesize_channel(const UEGeometry& geom, const ScenarioConfig& cfg, Link link) {
  const int n_tx = cfg.n_tx();
  const int n_pol = cfg.n_h * cfg.n_v;
  const int m_sub = cfg.num_subbands;
  const double f_c = (link == Link::Uplink) ? cfg.f_c_ul_hz : cfg.f_c_dl_hz;
  const double lambda = kSpeedOfLight / f_c;
  // Element spacing is physical: half-wave at the downlink carrier. The
  // UL/DL steering vectors then differ only through the wavelength.
  const double spacing = kSpeedOfLight / (2.0 * cfg.f_c_dl_hz);

  const double amp = std::pow(10.0, -pathloss_db(cfg, geom, f_c) / 20.0);

  ChannelMatrix h(n_tx, m_sub, arma::fill::zeros);
  arma::cx_vec steer(n_pol);

  for (const auto& cl : geom.clusters) {
    const double ray_power = cl.power / static_cast<double>(cl.rays.size());
    const double gain_mag = amp * std::sqrt(ray_power);
    for (const auto& ray : cl.rays) {
      const double az = cl.mean_azimuth_rad + ray.azimuth_offset_rad;
      const double ze = cl.mean_zenith_rad + ray.zenith_offset_rad;
      const double tau = cl.delay_s + ray.delay_offset_s;

      // UPA in the y-z plane, boresight +x: phase 2*pi/lambda * (u . p).
      const double ky = kTwoPi / lambda * spacing * std::sin(ze) * std::sin(az);
      const double kz = kTwoPi / lambda * spacing * std::cos(ze);
      for (int ih = 0; ih < cfg.n_h; ++ih)
        for (int iv = 0; iv < cfg.n_v; ++iv)
          steer(ih * cfg.n_v + iv) = std::polar(1.0, ky * ih + kz * iv);

      const double* phases = (link == Link::Uplink) ? ray.phase_ul : ray.phase_dl;
      const cxd g0 = std::polar(gain_mag, phases[0]);
      const cxd g1 = std::polar(gain_mag, phases[1]);

      for (int m = 0; m < m_sub; ++m) {
        const cxd dphase = std::polar(1.0, -kTwoPi * cfg.subband_offset_hz(m) * tau);
        const cxd c0 = g0 * dphase;
        const cxd c1 = g1 * dphase;
        for (int i = 0; i < n_pol; ++i) {
          h(i, m) += c0 * steer(i);
          h(n_pol + i, m) += c1 * steer(i);
        }
      }
    }
  }
  return h;
}

ChannelMatrix add_measurement_noise(const ChannelMatrix& h, double snr_db, Rng& rng) {
  if (!h.is_finite()) throw NumericalError("add_measurement_noise: non-finite input");
  if (std::isinf(snr_db) && snr_db > 0) return h;
  const double sig_power = std::pow(arma::norm(h, "fro"), 2);
  const double var =
      sig_power / (static_cast<double>(h.n_rows * h.n_cols) * db_to_linear(snr_db));
  const double s = std::sqrt(var / 2.0);
  ChannelMatrix out(h.n_rows, h.n_cols);
  for (arma::uword j = 0; j < h.n_cols; ++j)
    for (arma::uword i = 0; i < h.n_rows; ++i)
      out(i, j) = h(i, j) + cxd(s * rng.gaussian(), s * rng.gaussian());
  return out;
}

Drop make_drop(const ScenarioConfig& cfg, uint64_t master_seed, uint64_t drop_id,
               const std::vector<double>& snr_list_db) {
  Drop drop;
  drop.drop_id = drop_id;
  drop.snr_list_db = snr_list_db;
  drop.ues.resize(cfg.num_ues);
  for (int k = 0; k < cfg.num_ues; ++k) {
    UESample& ue = drop.ues[k];
    Rng geo_rng = Rng::substream(master_seed, drop_id, static_cast<uint64_t>(k), 0);
    ue.geometry = draw_geometry(cfg, geo_rng);
    ue.h_ul_clean = synthesize_channel(ue.geometry, cfg, Link::Uplink);
    ue.h_dl = synthesize_channel(ue.geometry, cfg, Link::Downlink);
    ue.h_ul_noisy.reserve(snr_list_db.size());
    for (size_t s = 0; s < snr_list_db.size(); ++s) {
      Rng noise_rng = Rng::substream(master_seed, drop_id, static_cast<uint64_t>(k), 1 + s);
      ue.h_ul_noisy.push_back(add_measurement_noise(ue.h_ul_clean, snr_list_db[s], noise_rng));
    }
  }
  return drop;
}

}  // namespace csilab
