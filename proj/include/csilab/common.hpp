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

#include <armadillo>
#include <complex>
#include <stdexcept>
#include <string>

namespace csilab {

using cxd = std::complex<double>;

// Downlink or uplink CSI of one UE: N_Tx rows (antennas), M columns (subbands).
using ChannelMatrix = arma::cx_mat;

// Angular-delay-domain CSI, same dimensions as the antenna-frequency matrix.
using GridMatrix = arma::cx_mat;

enum class Link { Uplink, Downlink };

constexpr double kBoltzmann = 1.380649e-23;  // J/K
constexpr double kT0Kelvin = 290.0;
constexpr double kSpeedOfLight = 299792458.0;  // m/s

// Exit-code contract of the CLI: 0 ok, 2 config, 3 numerical, 4 format.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double dbm_to_watt(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }

}  // namespace csilab
