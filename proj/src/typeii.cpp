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

#include "csilab/typeii.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace csilab {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

int ceil_log2(int n) {
  int bits = 0;
  while ((1 << bits) < n) ++bits;
  return bits;
}

// MSB-first bit packing.
class BitWriter {
 public:
  void put(uint32_t value, int bits) {
    for (int i = bits - 1; i >= 0; --i) {
      if (bit_ == 0) bytes_.push_back(0);
      bytes_.back() |= static_cast<uint8_t>(((value >> i) & 1u) << (7 - bit_));
      bit_ = (bit_ + 1) % 8;
    }
  }
  std::vector<uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<uint8_t> bytes_;
  int bit_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}
  uint32_t get(int bits) {
    uint32_t v = 0;
    for (int i = 0; i < bits; ++i) {
      const size_t byte = pos_ / 8;
      if (byte >= bytes_.size()) throw FormatError("payload: truncated bit stream");
      v = (v << 1) | ((bytes_[byte] >> (7 - pos_ % 8)) & 1u);
      ++pos_;
    }
    return v;
  }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

void PortIndexSet::validate() const {
  if (ports.empty()) throw ConfigError("PortIndexSet: empty");
  std::set<std::pair<int, int>> seen;
  for (const auto& [a, d] : ports) {
    if (a < 0 || a >= n_rows || d < 0 || d >= n_cols)
      throw ConfigError("PortIndexSet: port index out of range");
    if (!seen.insert({a, d}).second) throw ConfigError("PortIndexSet: duplicate port");
  }
}

int FeedbackPayload::total_bits() const {
  return ceil_log2(num_ports) + q_wideband + (num_ports - 1) * (q_amp + q_phase);
}

std::vector<uint8_t> FeedbackPayload::serialize() const {
  BitWriter w;
  w.put(static_cast<uint32_t>(sci), ceil_log2(num_ports));
  w.put(wideband_idx, q_wideband);
  for (const auto& e : entries) {
    w.put(e.amp_idx, q_amp);
    w.put(e.phase_idx, q_phase);
  }
  return w.take();
}

FeedbackPayload FeedbackPayload::deserialize(const std::vector<uint8_t>& bytes, int num_ports,
                                             int q_wideband, int q_amp, int q_phase) {
  FeedbackPayload p;
  p.num_ports = num_ports;
  p.q_wideband = q_wideband;
  p.q_amp = q_amp;
  p.q_phase = q_phase;
  BitReader r(bytes);
  p.sci = static_cast<int>(r.get(ceil_log2(num_ports)));
  if (p.sci >= num_ports) throw FormatError("payload: SCI out of range");
  p.wideband_idx = r.get(q_wideband);
  p.entries.resize(num_ports - 1);
  for (auto& e : p.entries) {
    e.amp_idx = r.get(q_amp);
    e.phase_idx = r.get(q_phase);
  }
  return p;
}

bool FeedbackPayload::operator==(const FeedbackPayload& other) const {
  if (num_ports != other.num_ports || q_wideband != other.q_wideband ||
      q_amp != other.q_amp || q_phase != other.q_phase || sci != other.sci ||
      wideband_idx != other.wideband_idx || entries.size() != other.entries.size())
    return false;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].amp_idx != other.entries[i].amp_idx ||
        entries[i].phase_idx != other.entries[i].phase_idx)
      return false;
  return true;
}

double wideband_value(uint32_t idx, int q_wideband) {
  const uint32_t zero_code = (1u << q_wideband) - 1u;
  if (idx > zero_code) throw FormatError("wideband index out of range");
  if (idx == zero_code) return 0.0;
  return std::pow(2.0, -static_cast<double>(idx) / 4.0);
}

double amp_value(uint32_t idx, int q_amp) {
  const uint32_t zero_code = (1u << q_amp) - 1u;
  if (idx > zero_code) throw FormatError("amplitude index out of range");
  if (idx == zero_code) return 0.0;
  return std::pow(2.0, -static_cast<double>(idx) / 2.0);
}

double phase_value(uint32_t idx, int q_phase) {
  const uint32_t n = 1u << q_phase;
  if (idx >= n) throw FormatError("phase index out of range");
  return kTwoPi * static_cast<double>(idx) / static_cast<double>(n);
}

PortIndexSet select_ports_by_power(const AngularDelayGrid& grid, int num_ports) {
  const int n_rows = static_cast<int>(grid.g.n_rows);
  const int n_cols = static_cast<int>(grid.g.n_cols);
  const int total = n_rows * n_cols;
  if (num_ports < 1 || num_ports > total)
    throw ConfigError("select_ports_by_power: P out of range");

  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> power(total);
  for (int n = 0; n < total; ++n) {
    const int a = n / n_cols, d = n % n_cols;
    power[n] = std::norm(grid.g(a, d));
  }
  std::stable_sort(idx.begin(), idx.end(), [&](int lhs, int rhs) {
    if (power[lhs] != power[rhs]) return power[lhs] > power[rhs];
    return lhs < rhs;
  });

  PortIndexSet set;
  set.n_rows = n_rows;
  set.n_cols = n_cols;
  set.ports.reserve(num_ports);
  for (int i = 0; i < num_ports; ++i)
    set.ports.emplace_back(idx[i] / n_cols, idx[i] % n_cols);
  return set;
}

PortCoefficients measure_port_coefficients(const ChannelMatrix& h_dl, const PortIndexSet& ports,
                                           const AngularBasis& ab, const DelayBasis& db) {
  if (h_dl.n_rows != ab.w_a.n_rows || h_dl.n_cols != db.w_d.n_rows)
    throw NumericalError("measure_port_coefficients: shape mismatch");
  PortCoefficients out;
  out.c.set_size(ports.size());
  for (int p = 0; p < ports.size(); ++p) {
    const auto& [a, d] = ports.ports[p];
    out.c(p) = arma::as_scalar(ab.w_a.col(a).t() * h_dl * db.w_d.col(d));
  }
  return out;
}

namespace {

// Single quantization pass: SCI = strongest coefficient (ties to the
// smallest index), wideband ratio, per-port codes.
FeedbackPayload quantize_core(const PortCoefficients& c, const PortIndexSet& ports,
                              int q_wideband, int q_amp, int q_phase) {
  const int P = ports.size();
  if (static_cast<int>(c.c.n_elem) != P)
    throw NumericalError("quantize_feedback: coefficient/port length mismatch");

  // SCI: globally strongest coefficient. Ties (which occur exactly on
  // already-quantized inputs) prefer a port whose value is exactly 1+0j,
  // then the smallest index; this keeps requantization of a codebook
  // point from rotating the report.
  int sci = -1;
  double best = -1.0;
  for (int p = 0; p < P; ++p) {
    const double a = std::abs(c.c(p));
    if (a > best) {
      best = a;
      sci = p;
    } else if (a == best && c.c(p) == cxd(1.0, 0.0) && c.c(sci) != cxd(1.0, 0.0)) {
      sci = p;
    }
  }
  if (best <= 0.0) throw NumericalError("quantize_feedback: all-zero coefficients");

  FeedbackPayload payload;
  payload.num_ports = P;
  payload.q_wideband = q_wideband;
  payload.q_amp = q_amp;
  payload.q_phase = q_phase;
  payload.sci = sci;

  const arma::cx_vec d = c.c / c.c(sci);
  const int pol_sci = ports.polarization(sci);

  // Wideband code: ratio of the weaker polarization's maximum amplitude to
  // the SCI amplitude, nearest in the log2 domain.
  const uint32_t wb_zero = (1u << q_wideband) - 1u;
  double weaker_max = 0.0;
  bool weaker_present = false;
  for (int p = 0; p < P; ++p) {
    if (ports.polarization(p) != pol_sci) {
      weaker_present = true;
      weaker_max = std::max(weaker_max, std::abs(d(p)));
    }
  }
  if (!weaker_present || weaker_max <= 0.0) {
    payload.wideband_idx = wb_zero;
  } else {
    const double x = -4.0 * std::log2(weaker_max);
    const long i = std::lround(x);
    payload.wideband_idx =
        static_cast<uint32_t>(std::clamp<long>(i, 0, static_cast<long>(wb_zero) - 1));
  }
  const double wb_ref = wideband_value(payload.wideband_idx, q_wideband);

  const uint32_t amp_zero = (1u << q_amp) - 1u;
  const uint32_t phase_n = 1u << q_phase;
  payload.entries.reserve(P - 1);
  for (int p = 0; p < P; ++p) {
    if (p == sci) continue;
    FeedbackPayload::Entry e;
    const double ref = (ports.polarization(p) == pol_sci) ? 1.0 : wb_ref;
    const double mag = std::abs(d(p));
    if (ref <= 0.0 || mag <= 0.0) {
      e.amp_idx = amp_zero;
      e.phase_idx = 0;
    } else {
      const double x = -2.0 * std::log2(mag / ref);
      // Nearest finite code; underflow past the smallest finite code by
      // more than half a step maps to the zero code.
      if (x >= static_cast<double>(amp_zero - 1) + 0.5) {
        e.amp_idx = amp_zero;
      } else {
        e.amp_idx = static_cast<uint32_t>(
            std::clamp<long>(std::lround(x), 0, static_cast<long>(amp_zero) - 1));
      }
      const double step = kTwoPi / static_cast<double>(phase_n);
      long q = std::lround(std::arg(d(p)) / step);
      q %= static_cast<long>(phase_n);
      if (q < 0) q += phase_n;
      e.phase_idx = static_cast<uint32_t>(q);
    }
    payload.entries.push_back(e);
  }
  return payload;
}

}  // namespace

FeedbackPayload quantize_feedback(const PortCoefficients& c, const PortIndexSet& ports,
                                  int q_wideband, int q_amp, int q_phase) {
  // Canonicalization: when a non-SCI port dequantizes to the exact SCI
  // amplitude (wideband and amplitude codes of 0), the payload
  // representing those values is ambiguous. Re-deriving the codes from
  // the dequantized point makes the quantizer an exact projection:
  // quantize(dequantize(quantize(c))) == quantize(c) bit for bit.
  const FeedbackPayload provisional = quantize_core(c, ports, q_wideband, q_amp, q_phase);
  const PortCoefficients on_grid = dequantize_feedback(provisional, ports);
  return quantize_core(on_grid, ports, q_wideband, q_amp, q_phase);
}

PortCoefficients dequantize_feedback(const FeedbackPayload& payload, const PortIndexSet& ports) {
  const int P = ports.size();
  if (payload.num_ports != P) throw FormatError("dequantize_feedback: port count mismatch");
  if (payload.sci < 0 || payload.sci >= P) throw FormatError("dequantize_feedback: bad SCI");
  if (static_cast<int>(payload.entries.size()) != P - 1)
    throw FormatError("dequantize_feedback: entry count mismatch");

  const int pol_sci = ports.polarization(payload.sci);
  const double wb_ref = wideband_value(payload.wideband_idx, payload.q_wideband);

  PortCoefficients out;
  out.c.set_size(P);
  int e = 0;
  for (int p = 0; p < P; ++p) {
    if (p == payload.sci) {
      out.c(p) = cxd(1.0, 0.0);
      continue;
    }
    const auto& entry = payload.entries[e++];
    const double ref = (ports.polarization(p) == pol_sci) ? 1.0 : wb_ref;
    const double mag = ref * amp_value(entry.amp_idx, payload.q_amp);
    out.c(p) = (mag == 0.0) ? cxd(0.0, 0.0)
                            : std::polar(mag, phase_value(entry.phase_idx, payload.q_phase));
  }
  return out;
}

ChannelMatrix reconstruct_typeii(const PortCoefficients& cbar, const PortIndexSet& ports,
                                 const AngularBasis& ab, const DelayBasis& db) {
  if (static_cast<int>(cbar.c.n_elem) != ports.size())
    throw NumericalError("reconstruct_typeii: coefficient/port length mismatch");
  AngularDelayGrid grid;
  grid.g.zeros(ports.n_rows, ports.n_cols);
  for (int p = 0; p < ports.size(); ++p)
    grid.g(ports.ports[p].first, ports.ports[p].second) = cbar.c(p);
  return from_angular_delay(grid, ab, db);
}

std::vector<UEPipelineResult> run_codebook_pipeline(
    const Drop& drop, const ScenarioConfig& cfg, const std::vector<PortIndexSet>& selections,
    const std::vector<std::pair<int, int>>& rotations, const PipelineOptions& options) {
  if (selections.size() != drop.ues.size() || rotations.size() != drop.ues.size())
    throw ConfigError("run_codebook_pipeline: one selection/rotation per UE required");

  const DelayBasis db = build_delay_basis(cfg.num_subbands);
  std::vector<UEPipelineResult> results(drop.ues.size());
  for (size_t k = 0; k < drop.ues.size(); ++k) {
    UEPipelineResult& res = results[k];
    const auto [qh, qv] = rotations[k];
    const AngularBasis ab =
        build_angular_basis(cfg.n_h, cfg.n_v, cfg.oversample_h, cfg.oversample_v, qh, qv);
    try {
      res.coefficients =
          measure_port_coefficients(drop.ues[k].h_dl, selections[k], ab, db);
      if (options.bypass_quantization) {
        // Unquantized ablation: report grid-unit coefficients so that
        // all-port selection reconstructs H exactly (the trace form
        // carries the N_h*N_v*M Parseval factor).
        res.dequantized.c =
            res.coefficients.c / (static_cast<double>(cfg.n_h * cfg.n_v) * cfg.num_subbands);
      } else {
        res.payload = quantize_feedback(res.coefficients, selections[k], cfg.q_wideband,
                                        cfg.q_amp, cfg.q_phase);
        res.dequantized = dequantize_feedback(res.payload, selections[k]);
      }
      res.h_hat = reconstruct_typeii(res.dequantized, selections[k], ab, db);
      res.ok = true;
    } catch (const std::exception& ex) {
      res.ok = false;
      res.error = ex.what();
    }
  }
  return results;
}

}  // namespace csilab
