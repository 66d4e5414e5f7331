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

#include "csilab/nets.hpp"

#include <algorithm>
#include <numeric>

namespace csilab {

namespace {
constexpr int kStrides[5][2] = {{1, 1}, {3, 1}, {3, 3}, {3, 3}, {3, 3}};
}

template <typename S>
ConvTrunk<S>::ConvTrunk(const NetArch& arch, Rng& init_rng) {
  if (arch.channels.size() != 5) throw ConfigError("ConvTrunk: five conv blocks expected");
  int c_in = 2;
  for (int i = 0; i < 5; ++i) {
    ConvBlock<S> b;
    const int c_out = arch.channels[i];
    b.kernel = ParamTensor<S>("conv" + std::to_string(i + 1) + ".kernel", {c_out, c_in, 3, 3});
    b.kernel.kaiming_uniform(c_in * 9, init_rng);
    b.gamma = ParamTensor<S>("bn" + std::to_string(i + 1) + ".gamma", {c_out});
    b.gamma.fill(S(1));
    b.beta = ParamTensor<S>("bn" + std::to_string(i + 1) + ".beta", {c_out});
    b.bn = BatchNormState<S>(c_out);
    b.stride_h = kStrides[i][0];
    b.stride_w = kStrides[i][1];
    blocks.push_back(std::move(b));
    c_in = c_out;
  }
}

template <typename S>
typename Tape<S>::Id ConvTrunk<S>::forward(Tape<S>& tape, typename Tape<S>::Id x,
                                           PoolKind pool, bool train) {
  auto y = x;
  for (auto& b : blocks) {
    y = tape.conv2d_circular(y, tape.param(b.kernel), b.stride_h, b.stride_w);
    y = tape.batchnorm2d(y, tape.param(b.gamma), tape.param(b.beta), b.bn, train);
    y = tape.leaky_relu(y, S(0.1));
  }
  return tape.global_pool(y, pool);
}

template <typename S>
std::vector<ParamTensor<S>*> ConvTrunk<S>::parameters() {
  std::vector<ParamTensor<S>*> out;
  for (auto& b : blocks) {
    out.push_back(&b.kernel);
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
  }
  return out;
}

template <typename S>
SelectorNetwork<S>::SelectorNetwork(const NetArch& a, uint64_t init_seed) : arch(a) {
  Rng rng(init_seed);
  trunk = ConvTrunk<S>(arch, rng);
  const int z = arch.channels.back();
  fc_w = ParamTensor<S>("fc.w", {z, arch.ports()});
  fc_w.kaiming_uniform(z, rng);
  fc_b = ParamTensor<S>("fc.b", {arch.ports()});
}

template <typename S>
typename Tape<S>::Id SelectorNetwork<S>::forward(Tape<S>& tape, typename Tape<S>::Id x,
                                                 bool train, Rng& dropout_rng) {
  auto feats = trunk.forward(tape, x, PoolKind::Max, train);
  feats = tape.dropout(feats, dropout_rate, train, dropout_rng);
  return tape.sigmoid(tape.dense(feats, tape.param(fc_w), tape.param(fc_b)));
}

template <typename S>
std::vector<ParamTensor<S>*> SelectorNetwork<S>::parameters() {
  auto out = trunk.parameters();
  out.push_back(&fc_w);
  out.push_back(&fc_b);
  return out;
}

template <typename S>
ReconstructorNetwork<S>::ReconstructorNetwork(const NetArch& a, uint64_t init_seed) : arch(a) {
  Rng rng(init_seed);
  trunk = ConvTrunk<S>(arch, rng);
  const int z = arch.channels.back();
  // The reconstruction target is complex: the head emits 2*N_Tx*M reals
  // (real/imag planes), not N_Tx*M.
  fc_w = ParamTensor<S>("fc.w", {z, 2 * arch.ports()});
  fc_w.kaiming_uniform(z, rng);
  fc_b = ParamTensor<S>("fc.b", {2 * arch.ports()});
}

template <typename S>
typename Tape<S>::Id ReconstructorNetwork<S>::forward(Tape<S>& tape, typename Tape<S>::Id x,
                                                      bool train, Rng& dropout_rng) {
  const auto& in_shape = tape.node(x).shape;
  const int n = in_shape[0];
  const int l = 2 * arch.ports();
  auto feats = trunk.forward(tape, x, PoolKind::Avg, train);
  feats = tape.dropout(feats, dropout_rate, train, dropout_rng);
  auto branch = tape.dense(feats, tape.param(fc_w), tape.param(fc_b));
  auto flat_in = tape.reshape(x, {n, l});
  auto out = tape.scale_add(flat_in, branch, shortcut_weight);
  return tape.reshape(out, {n, 2, arch.n_tx, arch.m_sub});
}

template <typename S>
std::vector<ParamTensor<S>*> ReconstructorNetwork<S>::parameters() {
  auto out = trunk.parameters();
  out.push_back(&fc_w);
  out.push_back(&fc_b);
  return out;
}

// ---- pre/post-processing ---------------------------------------------------

template <typename S>
std::vector<S> preprocess_selector_input(const ChannelMatrix& h_ul, const AngularBasis& ab,
                                         const DelayBasis& db) {
  const AngularDelayGrid grid = to_angular_delay(h_ul, ab, db);
  const int n = static_cast<int>(grid.g.n_rows), m = static_cast<int>(grid.g.n_cols);
  double max_mod = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) max_mod = std::max(max_mod, std::abs(grid.g(i, j)));
  if (!(max_mod > 0.0)) throw NumericalError("preprocess_selector_input: zero input");
  std::vector<S> out(2 * static_cast<size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      out[static_cast<size_t>(i) * m + j] = static_cast<S>(grid.g(i, j).real() / max_mod);
      out[static_cast<size_t>(n) * m + static_cast<size_t>(i) * m + j] =
          static_cast<S>(grid.g(i, j).imag() / max_mod);
    }
  return out;
}

template <typename S>
std::vector<S> preprocess_reconstructor_input(const PortCoefficients& cbar,
                                              const PortIndexSet& ports) {
  GridMatrix g(ports.n_rows, ports.n_cols, arma::fill::zeros);
  for (int p = 0; p < ports.size(); ++p)
    g(ports.ports[p].first, ports.ports[p].second) = cbar.c(p);
  return normalized_grid_planes<S>(g);
}

template <typename S>
std::vector<S> normalized_grid_planes(const GridMatrix& g) {
  const double fro = arma::norm(g, "fro");
  if (!(fro > 0.0)) throw NumericalError("normalized_grid_planes: zero grid");
  const int n = static_cast<int>(g.n_rows), m = static_cast<int>(g.n_cols);
  std::vector<S> out(2 * static_cast<size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      out[static_cast<size_t>(i) * m + j] = static_cast<S>(g(i, j).real() / fro);
      out[static_cast<size_t>(n) * m + static_cast<size_t>(i) * m + j] =
          static_cast<S>(g(i, j).imag() / fro);
    }
  return out;
}

template <typename S>
std::vector<S> make_port_label(const PortIndexSet& ports) {
  std::vector<S> label(static_cast<size_t>(ports.n_rows) * ports.n_cols, S(0));
  for (int p = 0; p < ports.size(); ++p) label[ports.linear_index(p)] = S(1);
  return label;
}

namespace {
template <typename T>
PortIndexSet top_p_impl(const std::vector<T>& pri, int n_tx, int m_sub, int num_ports) {
  const int total = n_tx * m_sub;
  if (static_cast<int>(pri.size()) != total)
    throw ConfigError("top_p_ports: priority length mismatch");
  if (num_ports < 1 || num_ports > total) throw ConfigError("top_p_ports: P out of range");
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (pri[a] != pri[b]) return pri[a] > pri[b];
    return a < b;
  });
  PortIndexSet set;
  set.n_rows = n_tx;
  set.n_cols = m_sub;
  for (int i = 0; i < num_ports; ++i) set.ports.emplace_back(idx[i] / m_sub, idx[i] % m_sub);
  return set;
}
}  // namespace

PortIndexSet top_p_ports(const std::vector<float>& p, int n_tx, int m_sub, int num_ports) {
  return top_p_impl(p, n_tx, m_sub, num_ports);
}
PortIndexSet top_p_ports(const std::vector<double>& p, int n_tx, int m_sub, int num_ports) {
  return top_p_impl(p, n_tx, m_sub, num_ports);
}

// ---- losses -----------------------------------------------------------------

template <typename S>
typename Tape<S>::Id mse_loss(Tape<S>& tape, const std::vector<typename Tape<S>::Id>& grids_hat,
                              const std::vector<std::vector<S>>& grids_perfect) {
  if (grids_hat.empty() || grids_hat.size() != grids_perfect.size())
    throw NumericalError("mse_loss: UE count mismatch");
  const auto& shape = tape.node(grids_hat[0]).shape;
  const S denom = static_cast<S>(grids_hat.size()) *
                  static_cast<S>(shape_numel(shape) / 2);  // K * N_Tx * M
  std::vector<typename Tape<S>::Id> terms;
  std::vector<S> weights;
  for (size_t k = 0; k < grids_hat.size(); ++k) {
    terms.push_back(tape.mse_to_const(grids_hat[k], grids_perfect[k], denom));
    weights.push_back(S(1));
  }
  return tape.weighted_sum(terms, weights);
}

template <typename S>
typename Tape<S>::Id stage2_loss(Tape<S>& tape,
                                 const std::vector<typename Tape<S>::Id>& grids_hat,
                                 const std::vector<std::vector<S>>& grids_perfect,
                                 const std::vector<ChannelMatrix>& h_true,
                                 const AngularBasis& ab, const DelayBasis& db, S sigma2,
                                 S mu, S p_tx_w) {
  const int k_ues = static_cast<int>(grids_hat.size());
  if (k_ues == 0 || h_true.size() != grids_hat.size())
    throw NumericalError("stage2_loss: UE count mismatch");
  const int n_tx = static_cast<int>(h_true[0].n_rows);
  const int m_sub = static_cast<int>(h_true[0].n_cols);

  // Constant transform matrices as paired-real nodes.
  auto to_planes = [](const arma::cx_mat& m) {
    std::vector<S> v(2 * m.n_rows * m.n_cols);
    for (arma::uword i = 0; i < m.n_rows; ++i)
      for (arma::uword j = 0; j < m.n_cols; ++j) {
        v[i * m.n_cols + j] = static_cast<S>(m(i, j).real());
        v[m.n_rows * m.n_cols + i * m.n_cols + j] = static_cast<S>(m(i, j).imag());
      }
    return v;
  };
  const auto wa = to_planes(ab.w_a);
  const arma::cx_mat wdh_mat = db.w_d.t();
  const auto wdh = to_planes(wdh_mat);
  const auto wa_id = tape.constant({2, n_tx, n_tx}, wa.data());
  const auto wdh_id = tape.constant({2, static_cast<int>(wdh_mat.n_rows), m_sub}, wdh.data());

  // Reconstructed channels per UE.
  std::vector<typename Tape<S>::Id> h_hat;
  for (int k = 0; k < k_ues; ++k)
    h_hat.push_back(tape.cmatmul(tape.cmatmul(wa_id, grids_hat[k]), wdh_id));

  // Identity for the K x K Gram solve.
  std::vector<S> eye(2 * static_cast<size_t>(k_ues) * k_ues, S(0));
  for (int i = 0; i < k_ues; ++i) eye[static_cast<size_t>(i) * k_ues + i] = S(1);
  const auto eye_id = tape.constant({2, k_ues, k_ues}, eye.data());

  const S p_col = static_cast<S>(p_tx_w / (static_cast<double>(m_sub) * k_ues));
  std::vector<typename Tape<S>::Id> rate_terms;
  std::vector<S> rate_weights;
  for (int m = 0; m < m_sub; ++m) {
    auto a = tape.rows_unit_normalize(tape.stack_conj_rows(h_hat, m));
    auto gram = tape.cmatmul(a, tape.cherm(a));
    auto gram_inv = tape.csolve(gram, eye_id);
    auto u = tape.cmatmul(tape.cherm(a), gram_inv);
    auto v = tape.cols_scale_to_norm(u, static_cast<S>(std::sqrt(p_col)));
    // True-channel rows h_k^H for this subband, as constants.
    std::vector<S> t(2 * static_cast<size_t>(k_ues) * n_tx);
    for (int k = 0; k < k_ues; ++k)
      for (int i = 0; i < n_tx; ++i) {
        t[static_cast<size_t>(k) * n_tx + i] = static_cast<S>(h_true[k](i, m).real());
        t[static_cast<size_t>(k_ues) * n_tx + static_cast<size_t>(k) * n_tx + i] =
            static_cast<S>(-h_true[k](i, m).imag());
      }
    auto t_id = tape.constant({2, k_ues, n_tx}, t.data());
    auto s = tape.cmatmul(t_id, v);
    rate_terms.push_back(tape.subband_sum_rate(s, sigma2));
    rate_weights.push_back(S(1) / static_cast<S>(m_sub));
  }
  auto r_avg = tape.weighted_sum(rate_terms, rate_weights);
  auto mse = mse_loss(tape, grids_hat, grids_perfect);
  return tape.weighted_sum({r_avg, mse}, {S(-1), mu});
}

template class ConvTrunk<float>;
template class ConvTrunk<double>;
template class SelectorNetwork<float>;
template class SelectorNetwork<double>;
template class ReconstructorNetwork<float>;
template class ReconstructorNetwork<double>;

template std::vector<float> preprocess_selector_input<float>(const ChannelMatrix&,
                                                             const AngularBasis&,
                                                             const DelayBasis&);
template std::vector<double> preprocess_selector_input<double>(const ChannelMatrix&,
                                                               const AngularBasis&,
                                                               const DelayBasis&);
template std::vector<float> preprocess_reconstructor_input<float>(const PortCoefficients&,
                                                                  const PortIndexSet&);
template std::vector<double> preprocess_reconstructor_input<double>(const PortCoefficients&,
                                                                    const PortIndexSet&);
template std::vector<float> normalized_grid_planes<float>(const GridMatrix&);
template std::vector<double> normalized_grid_planes<double>(const GridMatrix&);
template std::vector<float> make_port_label<float>(const PortIndexSet&);
template std::vector<double> make_port_label<double>(const PortIndexSet&);

template Tape<float>::Id mse_loss<float>(Tape<float>&, const std::vector<Tape<float>::Id>&,
                                         const std::vector<std::vector<float>>&);
template Tape<double>::Id mse_loss<double>(Tape<double>&, const std::vector<Tape<double>::Id>&,
                                           const std::vector<std::vector<double>>&);
template Tape<float>::Id stage2_loss<float>(Tape<float>&, const std::vector<Tape<float>::Id>&,
                                            const std::vector<std::vector<float>>&,
                                            const std::vector<ChannelMatrix>&,
                                            const AngularBasis&, const DelayBasis&, float,
                                            float, float);
template Tape<double>::Id stage2_loss<double>(Tape<double>&,
                                              const std::vector<Tape<double>::Id>&,
                                              const std::vector<std::vector<double>>&,
                                              const std::vector<ChannelMatrix>&,
                                              const AngularBasis&, const DelayBasis&, double,
                                              double, double);

}  // namespace csilab
