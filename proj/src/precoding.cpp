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

#include "csilab/precoding.hpp"

#include <cmath>
#include <string>

namespace csilab {

PrecodingSet zf_precode(const std::vector<ChannelMatrix>& h_hat, double p_tx_w, double ridge) {
  if (h_hat.empty()) throw ConfigError("zf_precode: no channels");
  const int k_ues = static_cast<int>(h_hat.size());
  const int n_tx = static_cast<int>(h_hat[0].n_rows);
  const int m_sub = static_cast<int>(h_hat[0].n_cols);
  if (k_ues > n_tx) throw ConfigError("zf_precode: K must not exceed N_Tx");
  for (const auto& h : h_hat)
    if (static_cast<int>(h.n_rows) != n_tx || static_cast<int>(h.n_cols) != m_sub)
      throw NumericalError("zf_precode: inconsistent channel shapes");

  const double p_col = p_tx_w / (static_cast<double>(m_sub) * k_ues);

  PrecodingSet out;
  out.p_tx_w = p_tx_w;
  out.v.resize(m_sub);
  for (int m = 0; m < m_sub; ++m) {
    arma::cx_mat a(k_ues, n_tx);
    for (int k = 0; k < k_ues; ++k) {
      arma::cx_vec h = h_hat[k].col(m);
      const double nrm = arma::norm(h);
      if (!(nrm > 0.0) || !h.is_finite())
        throw NumericalError("zf_precode: degenerate channel for UE " + std::to_string(k) +
                             " on subband " + std::to_string(m));
      a.row(k) = (h / nrm).t();
    }
    arma::cx_mat gram = a * a.t();
    if (ridge > 0.0) gram.diag() += ridge;
    const double rc = arma::rcond(gram);
    if (!(rc > 1e-13))
      throw NumericalError("zf_precode: singular stacked channel on subband " +
                           std::to_string(m));
    arma::cx_mat x;
    if (!arma::solve(x, gram, a, arma::solve_opts::no_approx))
      throw NumericalError("zf_precode: solve failed on subband " + std::to_string(m));
    arma::cx_mat u = x.t();  // N_Tx x K, equals A^H * gram^-1
    for (int k = 0; k < k_ues; ++k) {
      const double nrm = arma::norm(u.col(k));
      if (!(nrm > 0.0))
        throw NumericalError("zf_precode: zero direction on subband " + std::to_string(m));
      u.col(k) *= std::sqrt(p_col) / nrm;
    }
    out.v[m] = std::move(u);
  }
  return out;
}

double user_rate(const arma::cx_vec& h_true, const arma::cx_mat& v_m, int k, double sigma2) {
  if (!(sigma2 > 0.0)) throw ConfigError("user_rate: sigma2 must be positive");
  double signal = 0.0, interference = 0.0;
  for (arma::uword j = 0; j < v_m.n_cols; ++j) {
    const double p = std::norm(arma::cdot(h_true, v_m.col(j)));
    if (static_cast<int>(j) == k)
      signal = p;
    else
      interference += p;
  }
  return std::log2(1.0 + signal / (interference + sigma2));
}

RateReport average_sum_rate(const std::vector<ChannelMatrix>& h_true, const PrecodingSet& pset,
                            double sigma2) {
  const int k_ues = static_cast<int>(h_true.size());
  const int m_sub = static_cast<int>(pset.v.size());
  RateReport report;
  report.noise_power_w = sigma2;
  report.rates.set_size(k_ues, m_sub);
  for (int m = 0; m < m_sub; ++m)
    for (int k = 0; k < k_ues; ++k)
      report.rates(k, m) = user_rate(h_true[k].col(m), pset.v[m], k, sigma2);
  report.r_avg = arma::accu(report.rates) / static_cast<double>(m_sub);
  return report;
}

double noise_power(const ScenarioConfig& cfg) {
  return kBoltzmann * kT0Kelvin * cfg.subband_bandwidth_hz() *
         db_to_linear(cfg.noise_figure_db);
}

double normalized_port_power(const AngularDelayGrid& grid, const PortIndexSet& ports) {
  const double total = std::pow(arma::norm(grid.g, "fro"), 2);
  if (!(total > 0.0)) throw NumericalError("normalized_port_power: zero-power grid");
  double captured = 0.0;
  for (const auto& [a, d] : ports.ports) captured += std::norm(grid.g(a, d));
  return captured / total;
}

}  // namespace csilab
