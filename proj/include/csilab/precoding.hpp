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
#include "csilab/scenario.hpp"
#include "csilab/typeii.hpp"

namespace csilab {

struct PrecodingSet {
  std::vector<arma::cx_mat> v;  // per subband, N_Tx x K
  double p_tx_w = 0.0;
};

struct RateReport {
  arma::mat rates;  // K x M, bits/s/Hz
  double r_avg = 0.0;
  double noise_power_w = 0.0;
};

// Zero-forcing directions U_m = A_m^H (A_m A_m^H)^-1 where row k of A_m is
// the unit-normalized hhat_{k,m}^H; each column carries power p_tx/(M*K).
// Rank deficiency raises NumericalError naming the subband; ridge > 0 adds
// explicit diagonal loading instead (never applied silently).
PrecodingSet zf_precode(const std::vector<ChannelMatrix>& h_hat, double p_tx_w,
                        double ridge = 0.0);

// log2(1 + |h^H v_k|^2 / (sum_{j!=k} |h^H v_j|^2 + sigma2)).
double user_rate(const arma::cx_vec& h_true, const arma::cx_mat& v_m, int k, double sigma2);

RateReport average_sum_rate(const std::vector<ChannelMatrix>& h_true, const PrecodingSet& pset,
                            double sigma2);

// sigma^2 = k_B * T0 * B_subband * 10^(NF/10), T0 = 290 K.
double noise_power(const ScenarioConfig& cfg);

// Selected-port power over total grid power, in [0, 1].
double normalized_port_power(const AngularDelayGrid& grid, const PortIndexSet& ports);

}  // namespace csilab
