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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/common.hpp"
#include "csilab/dft_basis.hpp"

namespace csilab {

// Ordered set of P distinct (angular, delay) ports. Canonical order is
// descending selection metric with row-major tie-break, which fixes the
// payload layout bit-exactly.
struct PortIndexSet {
  int n_rows = 0;  // N_Tx
  int n_cols = 0;  // M
  std::vector<std::pair<int, int>> ports;

  int size() const { return static_cast<int>(ports.size()); }
  int linear_index(int p) const { return ports[p].first * n_cols + ports[p].second; }
  // Polarization block of port p: 0 for angular index < N_Tx/2, else 1.
  int polarization(int p) const { return ports[p].first < n_rows / 2 ? 0 : 1; }
  void validate() const;
};

struct PortCoefficients {
  arma::cx_vec c;  // length P, aligned with PortIndexSet order
};

// Quantized report. Wire format (MSB-first within bytes):
//   [sci: ceil(log2 P)] [wideband: Q_w] [per non-SCI port in set order:
//   amp Q_n,a, phase Q_n,p] [zero padding to a byte boundary]
struct FeedbackPayload {
  struct Entry {
    uint32_t amp_idx = 0;
    uint32_t phase_idx = 0;
  };
  int num_ports = 0;  // P
  int q_wideband = 5;
  int q_amp = 3;
  int q_phase = 4;
  int sci = 0;                  // index into the PortIndexSet, [0, P)
  uint32_t wideband_idx = 0;    // Q_w-bit code
  std::vector<Entry> entries;   // P-1 entries, set order with SCI skipped

  int total_bits() const;
  std::vector<uint8_t> serialize() const;
  static FeedbackPayload deserialize(const std::vector<uint8_t>& bytes, int num_ports,
                                     int q_wideband, int q_amp, int q_phase);
  bool operator==(const FeedbackPayload& other) const;
};

// Codebook tables. Wideband ratio: 2^(-i/4) with the all-ones index meaning
// exactly zero; narrowband amplitude: 2^(-j/2) with the all-ones index zero;
// phase: uniform 2*pi*q/2^Q_n,p.
double wideband_value(uint32_t idx, int q_wideband);
double amp_value(uint32_t idx, int q_amp);
double phase_value(uint32_t idx, int q_phase);

// The P ports with the largest |G|^2, ties row-major.
PortIndexSet select_ports_by_power(const AngularDelayGrid& grid, int num_ports);

// c_p = w_A^H * H_dl * w_D per selected port (the trace form
// Tr(H * (w_A w_D^H)^H) reduced by the trace identity).
PortCoefficients measure_port_coefficients(const ChannelMatrix& h_dl, const PortIndexSet& ports,
                                           const AngularBasis& ab, const DelayBasis& db);

// Two-stage quantization: SCI normalization, wideband polarization ratio,
// per-port log-amplitude and uniform-phase codes. Throws NumericalError on
// an all-zero coefficient vector.
FeedbackPayload quantize_feedback(const PortCoefficients& c, const PortIndexSet& ports,
                                  int q_wideband, int q_amp, int q_phase);

PortCoefficients dequantize_feedback(const FeedbackPayload& payload, const PortIndexSet& ports);

// H = sum_p cbar_p * w_A,p * w_D,p^H, realized through the sparse grid and
// the inverse transform (the two forms agree identically).
ChannelMatrix reconstruct_typeii(const PortCoefficients& cbar, const PortIndexSet& ports,
                                 const AngularBasis& ab, const DelayBasis& db);

struct PipelineOptions {
  bool bypass_quantization = false;
};

struct UEPipelineResult {
  bool ok = false;
  std::string error;
  ChannelMatrix h_hat;
  PortCoefficients coefficients;
  PortCoefficients dequantized;
  FeedbackPayload payload;  // meaningful only when quantization ran
};

// measure -> quantize -> dequantize -> reconstruct for each UE of a drop.
// Degenerate UEs (all-zero coefficients) are skipped with ok=false.
std::vector<UEPipelineResult> run_codebook_pipeline(
    const Drop& drop, const ScenarioConfig& cfg, const std::vector<PortIndexSet>& selections,
    const std::vector<std::pair<int, int>>& rotations, const PipelineOptions& options);

}  // namespace csilab
