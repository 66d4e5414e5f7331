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

#include "csilab/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "csilab/dataset.hpp"
#include "csilab/precoding.hpp"
#include "csilab/training.hpp"
#include "csilab/typeii.hpp"

namespace csilab {

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "typeii-baseline") return EvalMode::TypeiiBaseline;
  if (name == "perfect-ul-bound") return EvalMode::PerfectUlBound;
  if (name == "dl-select") return EvalMode::DlSelect;
  if (name == "dl-recon") return EvalMode::DlRecon;
  if (name == "dl-both") return EvalMode::DlBoth;
  if (name == "perfect-csi-bound") return EvalMode::PerfectCsiBound;
  throw ConfigError("unknown eval mode '" + name + "'");
}

std::string eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::TypeiiBaseline: return "typeii-baseline";
    case EvalMode::PerfectUlBound: return "perfect-ul-bound";
    case EvalMode::DlSelect: return "dl-select";
    case EvalMode::DlRecon: return "dl-recon";
    case EvalMode::DlBoth: return "dl-both";
    case EvalMode::PerfectCsiBound: return "perfect-csi-bound";
  }
  throw ConfigError("bad eval mode");
}

void SweepSpec::validate() const {
  if (dataset_path.empty()) throw ConfigError("eval: dataset path required");
  std::ifstream f(dataset_path);
  if (!f) throw ConfigError("eval: dataset '" + dataset_path + "' does not exist");
  const bool needs_selector = mode == EvalMode::DlSelect || mode == EvalMode::DlBoth;
  const bool needs_recon = mode == EvalMode::DlRecon || mode == EvalMode::DlBoth;
  if (needs_selector) {
    std::ifstream s(selector_path);
    if (!s) throw ConfigError("eval: mode requires --selector checkpoint");
  }
  if (needs_recon) {
    std::ifstream r(reconstructor_path);
    if (!r) throw ConfigError("eval: mode requires --reconstructor checkpoint");
  }
  if (p_list.empty() || snr_list_db.empty()) throw ConfigError("eval: empty sweep axes");
}

namespace {

bool mode_needs_selector(EvalMode m) {
  return m == EvalMode::DlSelect || m == EvalMode::DlBoth;
}
bool mode_needs_reconstructor(EvalMode m) {
  return m == EvalMode::DlRecon || m == EvalMode::DlBoth;
}

int snr_index_of(const std::vector<double>& list, double snr_db) {
  for (size_t i = 0; i < list.size(); ++i)
    if (std::abs(list[i] - snr_db) < 1e-9) return static_cast<int>(i);
  throw ConfigError("eval: SNR " + std::to_string(snr_db) +
                    " dB not stored in the dataset");
}

}  // namespace

DropEval evaluate_drop(const Drop& drop, const ScenarioConfig& cfg, EvalMode mode,
                       double snr_db, int num_ports, SelectorNetwork<float>* selector,
                       ReconstructorNetwork<float>* reconstructor, double zf_ridge) {
  const DelayBasis db = build_delay_basis(cfg.num_subbands);
  const double sigma2 = noise_power(cfg);
  const double p_tx = dbm_to_watt(cfg.p_tx_dbm);

  DropEval out;
  std::vector<ChannelMatrix> h_true;
  for (const auto& ue : drop.ues) h_true.push_back(ue.h_dl);

  if (mode == EvalMode::PerfectCsiBound) {
    try {
      const auto pset = zf_precode(h_true, p_tx, zf_ridge);
      out.r_avg = average_sum_rate(h_true, pset, sigma2).r_avg;
      out.pn = 1.0;
      out.ok = true;
    } catch (const NumericalError&) {
      out.ok = false;
    }
    return out;
  }

  const int snr_idx = snr_index_of(drop.snr_list_db, snr_db);
  std::vector<ChannelMatrix> h_hat(drop.ues.size());
  double pn_sum = 0.0;

  for (size_t k = 0; k < drop.ues.size(); ++k) {
    const auto& ue = drop.ues[k];
    // Selection CSI source and rotation per mode.
    const ChannelMatrix& sel_csi =
        (mode == EvalMode::PerfectUlBound) ? ue.h_ul_clean : ue.h_ul_noisy[snr_idx];
    const auto [qh, qv] = select_rotation(sel_csi, cfg, num_ports);
    const AngularBasis ab =
        build_angular_basis(cfg.n_h, cfg.n_v, cfg.oversample_h, cfg.oversample_v, qh, qv);

    PortIndexSet ports;
    if (mode == EvalMode::DlSelect || mode == EvalMode::DlBoth) {
      const auto planes = preprocess_selector_input<float>(sel_csi, ab, db);
      Tape<float> tape;
      Rng dummy(0);
      auto x = tape.leaf({1, 2, cfg.n_tx(), cfg.num_subbands}, planes.data());
      auto o = selector->forward(tape, x, false, dummy);
      ports = top_p_ports(tape.node(o).val, cfg.n_tx(), cfg.num_subbands, num_ports);
    } else {
      ports = select_ports_by_power(to_angular_delay(sel_csi, ab, db), num_ports);
    }

    pn_sum += normalized_port_power(to_angular_delay(ue.h_dl, ab, db), ports);

    try {
      const auto coeff = measure_port_coefficients(ue.h_dl, ports, ab, db);
      const auto payload =
          quantize_feedback(coeff, ports, cfg.q_wideband, cfg.q_amp, cfg.q_phase);
      const auto cbar = dequantize_feedback(payload, ports);
      if (mode == EvalMode::DlRecon || mode == EvalMode::DlBoth) {
        const auto planes = preprocess_reconstructor_input<float>(cbar, ports);
        Tape<float> tape;
        Rng dummy(0);
        auto x = tape.leaf({1, 2, cfg.n_tx(), cfg.num_subbands}, planes.data());
        auto o = reconstructor->forward(tape, x, false, dummy);
        const auto& val = tape.node(o).val;
        GridMatrix g(cfg.n_tx(), cfg.num_subbands);
        const int nm = cfg.n_tx() * cfg.num_subbands;
        for (int r = 0; r < cfg.n_tx(); ++r)
          for (int c = 0; c < cfg.num_subbands; ++c)
            g(r, c) = cxd(val[r * cfg.num_subbands + c], val[nm + r * cfg.num_subbands + c]);
        h_hat[k] = from_angular_delay({g}, ab, db);
      } else {
        h_hat[k] = reconstruct_typeii(cbar, ports, ab, db);
      }
    } catch (const NumericalError&) {
      out.ok = false;
      return out;  // degenerate UE: drop unusable for the joint rate
    }
  }

  out.pn = pn_sum / static_cast<double>(drop.ues.size());
  try {
    const auto pset = zf_precode(h_hat, p_tx, zf_ridge);
    out.r_avg = average_sum_rate(h_true, pset, sigma2).r_avg;
    out.ok = true;
  } catch (const NumericalError&) {
    out.ok = false;
  }
  return out;
}

std::vector<EvalRow> run_eval(const SweepSpec& spec) {
  spec.validate();
  DatasetReader reader(spec.dataset_path);
  const ScenarioConfig cfg = reader.manifest().scenario;
  const std::vector<Drop> drops = reader.read_all();

  SelectorNetwork<float> selector;
  ReconstructorNetwork<float> reconstructor;
  SelectorNetwork<float>* sel_ptr = nullptr;
  ReconstructorNetwork<float>* rec_ptr = nullptr;
  if (mode_needs_selector(spec.mode)) {
    selector = load_selector(spec.selector_path);
    sel_ptr = &selector;
  }
  if (mode_needs_reconstructor(spec.mode)) {
    reconstructor = load_reconstructor(spec.reconstructor_path);
    rec_ptr = &reconstructor;
  }

  std::vector<EvalRow> rows;
  for (double snr : spec.snr_list_db) {
    for (int p : spec.p_list) {
      double pn_s = 0, pn_s2 = 0, r_s = 0, r_s2 = 0;
      uint64_t n = 0;
      for (const auto& drop : drops) {
        const DropEval e =
            evaluate_drop(drop, cfg, spec.mode, snr, p, sel_ptr, rec_ptr, spec.zf_ridge);
        if (!e.ok) continue;
        pn_s += e.pn;
        pn_s2 += e.pn * e.pn;
        r_s += e.r_avg;
        r_s2 += e.r_avg * e.r_avg;
        ++n;
      }
      EvalRow row;
      row.mode = eval_mode_name(spec.mode);
      row.snr_db = snr;
      row.num_ports = p;
      row.n_drops = n;
      row.seed = spec.seed;
      if (n > 0) {
        row.pn_mean = pn_s / n;
        row.r_avg_mean = r_s / n;
        if (n > 1) {
          row.pn_std = std::sqrt(std::max(0.0, (pn_s2 - pn_s * pn_s / n) / (n - 1.0)));
          row.r_avg_std = std::sqrt(std::max(0.0, (r_s2 - r_s * r_s / n) / (n - 1.0)));
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_eval_csv(const std::string& path, const SweepSpec& spec,
                    const std::vector<EvalRow>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("eval: cannot open '" + path + "' for writing");
  nlohmann::json j;
  j["mode"] = eval_mode_name(spec.mode);
  j["dataset"] = spec.dataset_path;
  j["snr_list_db"] = spec.snr_list_db;
  j["p_list"] = spec.p_list;
  j["seed"] = spec.seed;
  j["zf_ridge"] = spec.zf_ridge;
  if (!spec.selector_path.empty()) j["selector"] = spec.selector_path;
  if (!spec.reconstructor_path.empty()) j["reconstructor"] = spec.reconstructor_path;
  os << "# " << j.dump() << "\n";
  os << "mode,snr_db,P,n_drops,P_N_mean,P_N_std,R_avg_mean,R_avg_std,seed\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%d,%llu,%.10g,%.10g,%.10g,%.10g,%llu\n",
                  r.mode.c_str(), r.snr_db, r.num_ports,
                  static_cast<unsigned long long>(r.n_drops), r.pn_mean, r.pn_std,
                  r.r_avg_mean, r.r_avg_std, static_cast<unsigned long long>(r.seed));
    os << buf;
  }
  os.close();
  if (!os) throw FormatError("eval: write failed");
}

}  // namespace csilab
