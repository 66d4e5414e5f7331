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

#include <string>
#include <vector>

#include "csilab/dft_basis.hpp"
#include "csilab/precoding.hpp"
#include "csilab/tape.hpp"
#include "csilab/typeii.hpp"

namespace csilab {

// Five conv blocks (3x3 kernels, circular padding, strides (1,1), (3,1),
// (3,3), (3,3), (3,3)), global pool, dense head. channels[i] is the output
// width of block i.
struct NetArch {
  int n_tx = 32;
  int m_sub = 8;
  std::vector<int> channels = {64, 128, 128, 128, 128};

  int ports() const { return n_tx * m_sub; }
  static NetArch desk(int n_tx = 32, int m_sub = 8) { return {n_tx, m_sub}; }
  static NetArch paper(int n_tx = 32, int m_sub = 8) {
    return {n_tx, m_sub, {256, 512, 512, 512, 512}};
  }
};

template <typename S>
struct ConvBlock {
  ParamTensor<S> kernel;  // [c_out, c_in, 3, 3]
  ParamTensor<S> gamma, beta;
  BatchNormState<S> bn;
  int stride_h = 1, stride_w = 1;
};

template <typename S>
class ConvTrunk {
 public:
  ConvTrunk() = default;
  ConvTrunk(const NetArch& arch, Rng& init_rng);
  // x: [N, 2, N_Tx, M] -> pooled features [N, channels.back()]
  typename Tape<S>::Id forward(Tape<S>& tape, typename Tape<S>::Id x, PoolKind pool,
                               bool train);
  std::vector<ParamTensor<S>*> parameters();
  std::vector<ConvBlock<S>> blocks;
};

// Multi-label port selector: trunk -> max pool -> dropout 0.3 -> dense ->
// sigmoid priorities in (0,1)^{N_Tx*M}.
template <typename S>
class SelectorNetwork {
 public:
  SelectorNetwork() = default;
  SelectorNetwork(const NetArch& arch, uint64_t init_seed);
  typename Tape<S>::Id forward(Tape<S>& tape, typename Tape<S>::Id x, bool train,
                               Rng& dropout_rng);
  std::vector<ParamTensor<S>*> parameters();

  NetArch arch;
  ConvTrunk<S> trunk;
  ParamTensor<S> fc_w, fc_b;
  S dropout_rate = S(0.3);
};

// Grid reconstructor: trunk -> avg pool -> dropout 0.1 -> dense to
// 2*N_Tx*M reals -> weighted shortcut out = in + w * branch.
template <typename S>
class ReconstructorNetwork {
 public:
  ReconstructorNetwork() = default;
  ReconstructorNetwork(const NetArch& arch, uint64_t init_seed);
  // x: [N, 2, N_Tx, M] normalized Type-II grids; returns same shape.
  typename Tape<S>::Id forward(Tape<S>& tape, typename Tape<S>::Id x, bool train,
                               Rng& dropout_rng);
  std::vector<ParamTensor<S>*> parameters();

  NetArch arch;
  ConvTrunk<S> trunk;
  ParamTensor<S> fc_w, fc_b;
  S dropout_rate = S(0.1);
  S shortcut_weight = S(0.05);
};

// ---- pre/post-processing -------------------------------------------------

// Angular-delay transform, max-modulus normalization, real/imag split.
// Output layout [2, N_Tx, M]. Throws NumericalError on zero input.
template <typename S>
std::vector<S> preprocess_selector_input(const ChannelMatrix& h_ul, const AngularBasis& ab,
                                         const DelayBasis& db);

// Dequantized coefficients placed on their ports, unit Frobenius norm,
// real/imag split.
template <typename S>
std::vector<S> preprocess_reconstructor_input(const PortCoefficients& cbar,
                                              const PortIndexSet& ports);

// Perfect grid scaled to unit Frobenius norm, real/imag split (the
// reconstruction label).
template <typename S>
std::vector<S> normalized_grid_planes(const GridMatrix& g);

// Binary multi-label target with exactly P ones (indices row-major a*M+d).
template <typename S>
std::vector<S> make_port_label(const PortIndexSet& ports);

// Indices of the P largest priorities, ties row-major; inverse of the
// label layout above.
PortIndexSet top_p_ports(const std::vector<float>& priorities, int n_tx, int m_sub,
                         int num_ports);
PortIndexSet top_p_ports(const std::vector<double>& priorities, int n_tx, int m_sub,
                         int num_ports);

// ---- stage-2 loss ----------------------------------------------------------

// -R_avg + mu * MSE for the K UEs of one drop, with ZF precoders built
// differentiably from the reconstructed grids and rates evaluated against
// the true channels. grid_hat entries are [2, N_Tx, M] nodes on the tape.
// Throws NumericalError when a subband Gram solve is ill-conditioned.
template <typename S>
typename Tape<S>::Id stage2_loss(Tape<S>& tape,
                                 const std::vector<typename Tape<S>::Id>& grids_hat,
                                 const std::vector<std::vector<S>>& grids_perfect,
                                 const std::vector<ChannelMatrix>& h_true,
                                 const AngularBasis& ab, const DelayBasis& db, S sigma2,
                                 S mu, S p_tx_w);

// Eq.-17 MSE between reconstructed and perfect grids (mean over UEs of the
// squared Frobenius error divided by N_Tx*M).
template <typename S>
typename Tape<S>::Id mse_loss(Tape<S>& tape, const std::vector<typename Tape<S>::Id>& grids_hat,
                              const std::vector<std::vector<S>>& grids_perfect);

extern template class ConvTrunk<float>;
extern template class ConvTrunk<double>;
extern template class SelectorNetwork<float>;
extern template class SelectorNetwork<double>;
extern template class ReconstructorNetwork<float>;
extern template class ReconstructorNetwork<double>;

}  // namespace csilab
