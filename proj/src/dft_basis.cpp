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

#include "csilab/dft_basis.hpp"

#include <algorithm>
#include <vector>

namespace csilab {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

arma::cx_vec dft_column(int n, int index, int oversample) {
  arma::cx_vec w(n);
  for (int i = 0; i < n; ++i)
    w(i) = std::polar(1.0, kTwoPi * index * i / (oversample * static_cast<double>(n)));
  return w;
}
}  // namespace

AngularBasis build_angular_basis(int n_h, int n_v, int oversample_h, int oversample_v,
                                 int q_h, int q_v) {
  if (n_h < 1 || n_v < 1 || oversample_h < 1 || oversample_v < 1)
    throw ConfigError("build_angular_basis: sizes and factors must be >= 1");
  if (q_h < 0 || q_h >= oversample_h || q_v < 0 || q_v >= oversample_v)
    throw ConfigError("build_angular_basis: rotation index out of range");

  AngularBasis ab;
  ab.n_h = n_h;
  ab.n_v = n_v;
  ab.oversample_h = oversample_h;
  ab.oversample_v = oversample_v;
  ab.q_h = q_h;
  ab.q_v = q_v;

  const int n_pol = n_h * n_v;
  ab.d.set_size(n_pol, n_pol);
  for (int t1 = 0; t1 < n_h; ++t1) {
    const arma::cx_vec wh = dft_column(n_h, t1 * oversample_h + q_h, oversample_h);
    for (int t2 = 0; t2 < n_v; ++t2) {
      const arma::cx_vec wv = dft_column(n_v, t2 * oversample_v + q_v, oversample_v);
      arma::cx_vec col(n_pol);
      for (int ih = 0; ih < n_h; ++ih)
        for (int iv = 0; iv < n_v; ++iv) col(ih * n_v + iv) = wh(ih) * wv(iv);
      ab.d.col(t1 * n_v + t2) = col;
    }
  }
  ab.w_a.zeros(2 * n_pol, 2 * n_pol);
  ab.w_a.submat(0, 0, n_pol - 1, n_pol - 1) = ab.d;
  ab.w_a.submat(n_pol, n_pol, 2 * n_pol - 1, 2 * n_pol - 1) = ab.d;
  return ab;
}

DelayBasis build_delay_basis(int m) {
  if (m < 1) throw ConfigError("build_delay_basis: M >= 1");
  DelayBasis db;
  db.w_d.set_size(m, m);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < m; ++k)
      db.w_d(i, k) = std::polar(1.0, kTwoPi * i * k / static_cast<double>(m));
  return db;
}

AngularDelayGrid to_angular_delay(const ChannelMatrix& h, const AngularBasis& ab,
                                  const DelayBasis& db) {
  if (h.n_rows != ab.w_a.n_rows || h.n_cols != db.w_d.n_rows)
    throw NumericalError("to_angular_delay: shape mismatch");
  const double scale =
      static_cast<double>(ab.n_h * ab.n_v) * static_cast<double>(db.w_d.n_rows);
  AngularDelayGrid grid;
  grid.g = (ab.w_a.t() * h * db.w_d) / scale;
  return grid;
}

ChannelMatrix from_angular_delay(const AngularDelayGrid& grid, const AngularBasis& ab,
                                 const DelayBasis& db) {
  if (grid.g.n_rows != ab.w_a.n_rows || grid.g.n_cols != db.w_d.n_rows)
    throw NumericalError("from_angular_delay: shape mismatch");
  return ab.w_a * grid.g * db.w_d.t();
}

std::pair<int, int> select_rotation(const ChannelMatrix& h_ul, const ScenarioConfig& cfg,
                                    int num_ports) {
  const DelayBasis db = build_delay_basis(cfg.num_subbands);
  double best = -1.0;
  std::pair<int, int> best_q{0, 0};
  for (int qh = 0; qh < cfg.oversample_h; ++qh) {
    for (int qv = 0; qv < cfg.oversample_v; ++qv) {
      const AngularBasis ab =
          build_angular_basis(cfg.n_h, cfg.n_v, cfg.oversample_h, cfg.oversample_v, qh, qv);
      const AngularDelayGrid grid = to_angular_delay(h_ul, ab, db);
      arma::vec powers = arma::vectorise(arma::square(arma::abs(grid.g)));
      std::sort(powers.begin(), powers.end(), std::greater<double>());
      const int p = std::min<int>(num_ports, powers.n_elem);
      double captured = 0.0;
      for (int i = 0; i < p; ++i) captured += powers(i);
      // Strict improvement only, so earlier (lexicographic) rotations win ties.
      if (captured > best) {
        best = captured;
        best_q = {qh, qv};
      }
    }
  }
  return best_q;
}

}  // namespace csilab
