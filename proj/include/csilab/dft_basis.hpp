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

#include <utility>

#include "csilab/common.hpp"
#include "csilab/scenario.hpp"

namespace csilab {

// DFT convention used throughout: unnormalized bases with leading entry 1,
//   w^(h)_t[n] = exp(j*2*pi*t*n / (O_h*N_h)),  t = theta1*O_h + q_h,
// so W_A^H * W_A = N_h*N_v * I and W_D^H * W_D = M * I. The inverse
// transform absorbs the 1/(N_h*N_v*M) factor; Parseval reads
//   ||H||_F^2 = N_h*N_v*M * ||Htilde||_F^2.

struct AngularBasis {
  arma::cx_mat d;    // N_h*N_v x N_h*N_v Kronecker DFT columns
  arma::cx_mat w_a;  // N_Tx x N_Tx block-diagonal diag(D, D)
  int n_h = 0, n_v = 0;
  int oversample_h = 1, oversample_v = 1;
  int q_h = 0, q_v = 0;  // rotation indices, 0 <= q < O
};

struct DelayBasis {
  arma::cx_mat w_d;  // M x M DFT matrix
};

struct AngularDelayGrid {
  GridMatrix g;  // N_Tx x M
};

// Column (theta1, theta2) of D is w^(h)_{theta1*O_h+q_h} (x) w^(v)_{theta2*O_v+q_v},
// stored at column index theta1*N_v + theta2 (matching the antenna index
// convention h_index*N_v + v_index; polarization blocks stacked [pol0; pol1]).
AngularBasis build_angular_basis(int n_h, int n_v, int oversample_h, int oversample_v,
                                 int q_h, int q_v);

DelayBasis build_delay_basis(int m);

// Htilde = W_A^H * H * W_D / (N_h*N_v*M), the unique solution of
// H = W_A * Htilde * W_D^H.
AngularDelayGrid to_angular_delay(const ChannelMatrix& h, const AngularBasis& ab,
                                  const DelayBasis& db);

ChannelMatrix from_angular_delay(const AngularDelayGrid& grid, const AngularBasis& ab,
                                 const DelayBasis& db);

// Exhaustive search over the O_h*O_v rotations: maximizes the sum of the
// P largest per-port powers of the transformed uplink CSI; ties go to the
// lexicographically smallest (q_h, q_v).
std::pair<int, int> select_rotation(const ChannelMatrix& h_ul, const ScenarioConfig& cfg,
                                    int num_ports);

}  // namespace csilab
