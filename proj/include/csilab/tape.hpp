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

#include <deque>
#include <functional>
#include <vector>

#include "csilab/common.hpp"
#include "csilab/rng.hpp"
#include "csilab/tensor.hpp"

namespace csilab {

enum class PoolKind { Max, Avg };

// Running statistics of one BatchNorm layer (not learned by gradient).
template <typename S>
struct BatchNormState {
  std::vector<S> running_mean;
  std::vector<S> running_var;
  S momentum = S(0.1);
  S epsilon = S(1e-5);

  explicit BatchNormState(int channels = 0) {
    running_mean.assign(channels, S(0));
    running_var.assign(channels, S(1));
  }
};

// Eager reverse-mode tape over dense real tensors. Complex quantities
// travel as paired-real tensors with a leading dimension of 2 (plane 0
// real, plane 1 imaginary); complex ops expand to real arithmetic inside.
template <typename S>
class Tape {
 public:
  using Id = int;

  struct Node {
    std::vector<int> shape;
    std::vector<S> val;
    std::vector<S> grad;
  };

  // ---- leaves -----------------------------------------------------------

  Id constant(std::vector<int> shape, const S* data);
  Id leaf(std::vector<int> shape, const S* data);
  // Binds a parameter: gradients accumulate into p.grad on backward().
  Id param(ParamTensor<S>& p);

  // ---- network ops ------------------------------------------------------

  // 3x3 kernel, circular padding (1,1). Output H' = floor((H-1)/s_h)+1.
  Id conv2d_circular(Id x, Id kernel, int stride_h, int stride_w);
  Id batchnorm2d(Id x, Id gamma, Id beta, BatchNormState<S>& state, bool train);
  Id leaky_relu(Id x, S slope = S(0.1));
  Id global_pool(Id x, PoolKind kind);  // [N,C,H,W] -> [N,C]
  Id dense(Id x, Id w, Id b);           // [N,Z] x [Z,O] + [O] -> [N,O]
  Id sigmoid(Id x);
  // Inverted scaling; identity in eval mode. rate in [0,1).
  Id dropout(Id x, S rate, bool train, Rng& rng);
  Id add(Id a, Id b);
  // a + w*b (the weighted shortcut).
  Id scale_add(Id a, Id b, S w);
  Id reshape(Id x, std::vector<int> shape);
  Id slice_row(Id x, int row);  // [N,L] -> [L]

  // ---- complex (paired-real) ops ----------------------------------------

  Id cmatmul(Id a, Id b);  // [2,n,k] x [2,k,m] -> [2,n,m]
  Id cherm(Id a);          // conjugate transpose, [2,n,m] -> [2,m,n]
  // X = A^-1 B with dA = -A^-H G X^H, dB = A^-H G. Throws NumericalError
  // when the condition estimate exceeds 1e8.
  Id csolve(Id a, Id b);
  // Row k of the result is conj(h_k[:, m]) for each of the K inputs
  // (shape [2, K, n]): the stacked h^H rows feeding the ZF Gram matrix.
  Id stack_conj_rows(const std::vector<Id>& h, int m);
  Id rows_unit_normalize(Id a);             // complex rows scaled to unit norm
  Id cols_scale_to_norm(Id a, S norm);      // complex columns scaled to given norm

  // ---- losses / reductions (scalar outputs, shape [1]) ------------------

  Id bce_loss(Id o, const std::vector<S>& labels);
  Id focal_bce_loss(Id o, const std::vector<S>& labels, int num_ports, S gamma);
  // sum((x - target)^2) / denom; complex tensors reduce their modulus
  // squared through the paired-real planes automatically.
  Id mse_to_const(Id x, const std::vector<S>& target, S denom);
  // s[k, j] = h_k^H v_j for one subband -> sum_k log2(1 + S/(I + sigma2)).
  Id subband_sum_rate(Id s, S sigma2);
  Id weighted_sum(const std::vector<Id>& scalars, const std::vector<S>& weights);

  // ---- execution --------------------------------------------------------

  void backward(Id root);

  const Node& node(Id id) const { return nodes_[id]; }
  Node& mutable_node(Id id) { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

 private:
  Id new_node(std::vector<int> shape);
  static int dim(const Node& n, int i) { return n.shape[i]; }

  // Deque: growing the arena must not invalidate references taken by
  // in-flight ops or captured closures.
  std::deque<Node> nodes_;
  std::vector<std::function<void()>> tape_;
  std::vector<std::pair<Id, ParamTensor<S>*>> bound_params_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace csilab
