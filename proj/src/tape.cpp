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

#include "csilab/tape.hpp"

#include <cmath>
#include <memory>

namespace csilab {

namespace {
constexpr double kLn2 = 0.69314718055994530941723212145818;
constexpr double kClampEps = 1e-7;  // sigmoid outputs clamped before logs
}  // namespace

template <typename S>
typename Tape<S>::Id Tape<S>::new_node(std::vector<int> shape) {
  Node n;
  n.shape = std::move(shape);
  n.val.assign(shape_numel(n.shape), S(0));
  n.grad.assign(n.val.size(), S(0));
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename S>
typename Tape<S>::Id Tape<S>::constant(std::vector<int> shape, const S* data) {
  const Id id = new_node(std::move(shape));
  std::copy(data, data + nodes_[id].val.size(), nodes_[id].val.begin());
  return id;
}

template <typename S>
typename Tape<S>::Id Tape<S>::leaf(std::vector<int> shape, const S* data) {
  return constant(std::move(shape), data);
}

template <typename S>
typename Tape<S>::Id Tape<S>::param(ParamTensor<S>& p) {
  const Id id = constant(p.shape, p.values.data());
  if (p.requires_grad) bound_params_.push_back({id, &p});
  return id;
}

// ---- conv2d -------------------------------------------------------------

template <typename S>
typename Tape<S>::Id Tape<S>::conv2d_circular(Id x_id, Id k_id, int stride_h, int stride_w) {
  const Node& x = nodes_[x_id];
  const Node& k = nodes_[k_id];
  if (x.shape.size() != 4 || k.shape.size() != 4 || k.shape[2] != 3 || k.shape[3] != 3)
    throw NumericalError("conv2d_circular: expects NCHW input and Cout x Cin x 3x3 kernel");
  const int n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int co = k.shape[0];
  if (k.shape[1] != ci) throw NumericalError("conv2d_circular: channel mismatch");
  const int ho = (h - 1) / stride_h + 1;
  const int wo = (w - 1) / stride_w + 1;
  const int k9 = ci * 9;
  const int ns = n * ho * wo;

  auto cols = std::make_shared<arma::Mat<S>>(k9, ns);
  {
    const S* xv = x.val.data();
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const int c = (b * ho + i) * wo + j;
          S* col = cols->colptr(c);
          for (int cc = 0; cc < ci; ++cc) {
            const S* plane = xv + (static_cast<size_t>(b) * ci + cc) * h * w;
            for (int a = 0; a < 3; ++a) {
              const int sh = (i * stride_h + a - 1 + h) % h;
              const S* row = plane + static_cast<size_t>(sh) * w;
              for (int d = 0; d < 3; ++d) {
                const int sw = (j * stride_w + d - 1 + w) % w;
                col[cc * 9 + a * 3 + d] = row[sw];
              }
            }
          }
        }
  }

  const Id out = new_node({n, co, ho, wo});
  {
    arma::Mat<S> kmat(const_cast<S*>(k.val.data()), k9, co, false, true);
    arma::Mat<S> y = kmat.t() * (*cols);  // co x ns
    S* ov = nodes_[out].val.data();
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const int c = (b * ho + i) * wo + j;
          const S* ycol = y.colptr(c);
          for (int oc = 0; oc < co; ++oc)
            ov[((static_cast<size_t>(b) * co + oc) * ho + i) * wo + j] = ycol[oc];
        }
  }

  tape_.push_back([this, x_id, k_id, out, cols, n, ci, h, w, co, ho, wo, k9, ns,
                   stride_h, stride_w]() {
    Node& xn = nodes_[x_id];
    Node& kn = nodes_[k_id];
    const Node& on = nodes_[out];

    arma::Mat<S> dy(co, ns);
    const S* og = on.grad.data();
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const int c = (b * ho + i) * wo + j;
          S* dycol = dy.colptr(c);
          for (int oc = 0; oc < co; ++oc)
            dycol[oc] = og[((static_cast<size_t>(b) * co + oc) * ho + i) * wo + j];
        }

    arma::Mat<S> kgrad(kn.grad.data(), k9, co, false, true);
    kgrad += (*cols) * dy.t();

    arma::Mat<S> kmat(const_cast<S*>(kn.val.data()), k9, co, false, true);
    arma::Mat<S> dcols = kmat * dy;  // k9 x ns

    S* xg = xn.grad.data();
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const int c = (b * ho + i) * wo + j;
          const S* col = dcols.colptr(c);
          for (int cc = 0; cc < ci; ++cc) {
            S* plane = xg + (static_cast<size_t>(b) * ci + cc) * h * w;
            for (int a = 0; a < 3; ++a) {
              const int sh = (i * stride_h + a - 1 + h) % h;
              S* row = plane + static_cast<size_t>(sh) * w;
              for (int d = 0; d < 3; ++d) {
                const int sw = (j * stride_w + d - 1 + w) % w;
                row[sw] += col[cc * 9 + a * 3 + d];
              }
            }
          }
        }
  });
  return out;
}

// ---- batchnorm ----------------------------------------------------------

template <typename S>
typename Tape<S>::Id Tape<S>::batchnorm2d(Id x_id, Id gamma_id, Id beta_id,
                                          BatchNormState<S>& state, bool train) {
  const Node& x = nodes_[x_id];
  if (x.shape.size() != 4) throw NumericalError("batchnorm2d: expects NCHW");
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (static_cast<int>(state.running_mean.size()) != c)
    throw NumericalError("batchnorm2d: state channel mismatch");
  if (train && n < 2) throw NumericalError("batchnorm2d: train mode needs batch >= 2");

  const size_t plane = static_cast<size_t>(h) * w;
  const size_t m = static_cast<size_t>(n) * plane;
  const Id out = new_node(x.shape);

  auto xhat = std::make_shared<std::vector<S>>(x.val.size());
  auto inv_std = std::make_shared<std::vector<S>>(c);

  for (int cc = 0; cc < c; ++cc) {
    double mean, var;
    if (train) {
      double sum = 0, sq = 0;
      for (int b = 0; b < n; ++b) {
        const S* p = x.val.data() + (static_cast<size_t>(b) * c + cc) * plane;
        for (size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      mean = sum / static_cast<double>(m);
      var = sq / static_cast<double>(m) - mean * mean;
      if (var < 0) var = 0;
      state.running_mean[cc] =
          (S(1) - state.momentum) * state.running_mean[cc] + state.momentum * static_cast<S>(mean);
      state.running_var[cc] =
          (S(1) - state.momentum) * state.running_var[cc] + state.momentum * static_cast<S>(var);
    } else {
      mean = state.running_mean[cc];
      var = state.running_var[cc];
    }
    const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
    (*inv_std)[cc] = istd;
    const S g = nodes_[gamma_id].val[cc];
    const S bta = nodes_[beta_id].val[cc];
    for (int b = 0; b < n; ++b) {
      const size_t off = (static_cast<size_t>(b) * c + cc) * plane;
      const S* xp = x.val.data() + off;
      S* xh = xhat->data() + off;
      S* op = nodes_[out].val.data() + off;
      for (size_t i = 0; i < plane; ++i) {
        xh[i] = (xp[i] - static_cast<S>(mean)) * istd;
        op[i] = g * xh[i] + bta;
      }
    }
  }

  tape_.push_back([this, x_id, gamma_id, beta_id, out, xhat, inv_std, n, c, plane, m, train]() {
    Node& xn = nodes_[x_id];
    Node& gn = nodes_[gamma_id];
    Node& bn = nodes_[beta_id];
    const Node& on = nodes_[out];
    for (int cc = 0; cc < c; ++cc) {
      double dsum = 0, dxsum = 0;
      for (int b = 0; b < n; ++b) {
        const size_t off = (static_cast<size_t>(b) * c + cc) * plane;
        const S* dy = on.grad.data() + off;
        const S* xh = xhat->data() + off;
        for (size_t i = 0; i < plane; ++i) {
          dsum += dy[i];
          dxsum += static_cast<double>(dy[i]) * xh[i];
        }
      }
      gn.grad[cc] += static_cast<S>(dxsum);
      bn.grad[cc] += static_cast<S>(dsum);
      const S g = gn.val[cc];
      const S istd = (*inv_std)[cc];
      const S mean_dy = static_cast<S>(dsum / static_cast<double>(m));
      const S mean_dyxh = static_cast<S>(dxsum / static_cast<double>(m));
      for (int b = 0; b < n; ++b) {
        const size_t off = (static_cast<size_t>(b) * c + cc) * plane;
        const S* dy = on.grad.data() + off;
        const S* xh = xhat->data() + off;
        S* dx = xn.grad.data() + off;
        if (train) {
          for (size_t i = 0; i < plane; ++i)
            dx[i] += g * istd * (dy[i] - mean_dy - xh[i] * mean_dyxh);
        } else {
          for (size_t i = 0; i < plane; ++i) dx[i] += g * istd * dy[i];
        }
      }
    }
  });
  return out;
}

// ---- elementwise --------------------------------------------------------

template <typename S>
typename Tape<S>::Id Tape<S>::leaky_relu(Id x_id, S slope) {
  const Node& x = nodes_[x_id];
  const Id out = new_node(x.shape);
  for (size_t i = 0; i < x.val.size(); ++i)
    nodes_[out].val[i] = x.val[i] > S(0) ? x.val[i] : slope * x.val[i];
  tape_.push_back([this, x_id, out, slope]() {
    Node& xn = nodes_[x_id];
    const Node& on = nodes_[out];
    for (size_t i = 0; i < xn.val.size(); ++i)
      xn.grad[i] += on.grad[i] * (xn.val[i] > S(0) ? S(1) : slope);
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::global_pool(Id x_id, PoolKind kind) {
  const Node& x = nodes_[x_id];
  if (x.shape.size() != 4) throw NumericalError("global_pool: expects NCHW");
  const int n = x.shape[0], c = x.shape[1];
  const size_t plane = static_cast<size_t>(x.shape[2]) * x.shape[3];
  const Id out = new_node({n, c});
  auto argmax = std::make_shared<std::vector<size_t>>();
  if (kind == PoolKind::Max) argmax->resize(static_cast<size_t>(n) * c);

  for (int b = 0; b < n; ++b)
    for (int cc = 0; cc < c; ++cc) {
      const size_t off = (static_cast<size_t>(b) * c + cc) * plane;
      const S* p = x.val.data() + off;
      if (kind == PoolKind::Max) {
        size_t best = 0;
        for (size_t i = 1; i < plane; ++i)
          if (p[i] > p[best]) best = i;  // ties keep the first index
        (*argmax)[static_cast<size_t>(b) * c + cc] = off + best;
        nodes_[out].val[static_cast<size_t>(b) * c + cc] = p[best];
      } else {
        double s = 0;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        nodes_[out].val[static_cast<size_t>(b) * c + cc] =
            static_cast<S>(s / static_cast<double>(plane));
      }
    }

  tape_.push_back([this, x_id, out, kind, argmax, n, c, plane]() {
    Node& xn = nodes_[x_id];
    const Node& on = nodes_[out];
    for (size_t i = 0; i < on.val.size(); ++i) {
      if (kind == PoolKind::Max) {
        xn.grad[(*argmax)[i]] += on.grad[i];
      } else {
        const size_t off = i * plane;
        const S g = on.grad[i] / static_cast<S>(plane);
        for (size_t k = 0; k < plane; ++k) xn.grad[off + k] += g;
      }
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::dense(Id x_id, Id w_id, Id b_id) {
  const Node& x = nodes_[x_id];
  const Node& w = nodes_[w_id];
  const Node& b = nodes_[b_id];
  if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[0] ||
      b.shape != std::vector<int>{w.shape[1]})
    throw NumericalError("dense: shape mismatch");
  const int n = x.shape[0], z = x.shape[1], o = w.shape[1];
  const Id out = new_node({n, o});
  {
    // Row-major [N][Z] buffers alias column-major (Z x N) matrices.
    arma::Mat<S> xm(const_cast<S*>(x.val.data()), z, n, false, true);
    arma::Mat<S> wm(const_cast<S*>(w.val.data()), o, z, false, true);  // W^T
    arma::Mat<S> ym(nodes_[out].val.data(), o, n, false, true);
    ym = wm * xm;
    for (int bi = 0; bi < n; ++bi)
      for (int oi = 0; oi < o; ++oi) nodes_[out].val[static_cast<size_t>(bi) * o + oi] += b.val[oi];
  }
  tape_.push_back([this, x_id, w_id, b_id, out, n, z, o]() {
    Node& xn = nodes_[x_id];
    Node& wn = nodes_[w_id];
    Node& bn = nodes_[b_id];
    Node& on = nodes_[out];
    arma::Mat<S> dy(on.grad.data(), o, n, false, true);
    arma::Mat<S> xm(xn.val.data(), z, n, false, true);
    arma::Mat<S> wm(wn.val.data(), o, z, false, true);
    arma::Mat<S> dx(xn.grad.data(), z, n, false, true);
    arma::Mat<S> dw(wn.grad.data(), o, z, false, true);
    dx += wm.t() * dy;
    dw += dy * xm.t();
    for (int bi = 0; bi < n; ++bi)
      for (int oi = 0; oi < o; ++oi) bn.grad[oi] += on.grad[static_cast<size_t>(bi) * o + oi];
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::sigmoid(Id x_id) {
  const Node& x = nodes_[x_id];
  const Id out = new_node(x.shape);
  for (size_t i = 0; i < x.val.size(); ++i)
    nodes_[out].val[i] = S(1) / (S(1) + std::exp(-x.val[i]));
  tape_.push_back([this, x_id, out]() {
    Node& xn = nodes_[x_id];
    const Node& on = nodes_[out];
    for (size_t i = 0; i < xn.val.size(); ++i) {
      const S y = on.val[i];
      xn.grad[i] += on.grad[i] * y * (S(1) - y);
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::dropout(Id x_id, S rate, bool train, Rng& rng) {
  const Node& x = nodes_[x_id];
  if (rate < S(0) || rate >= S(1)) throw ConfigError("dropout: rate must be in [0,1)");
  const Id out = new_node(x.shape);
  if (!train || rate == S(0)) {
    nodes_[out].val = x.val;
    tape_.push_back([this, x_id, out]() {
      Node& xn = nodes_[x_id];
      const Node& on = nodes_[out];
      for (size_t i = 0; i < xn.val.size(); ++i) xn.grad[i] += on.grad[i];
    });
    return out;
  }
  auto mask = std::make_shared<std::vector<S>>(x.val.size());
  const S scale = S(1) / (S(1) - rate);
  for (size_t i = 0; i < x.val.size(); ++i) {
    (*mask)[i] = (rng.uniform() >= static_cast<double>(rate)) ? scale : S(0);
    nodes_[out].val[i] = x.val[i] * (*mask)[i];
  }
  tape_.push_back([this, x_id, out, mask]() {
    Node& xn = nodes_[x_id];
    const Node& on = nodes_[out];
    for (size_t i = 0; i < xn.val.size(); ++i) xn.grad[i] += on.grad[i] * (*mask)[i];
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::add(Id a_id, Id b_id) {
  return scale_add(a_id, b_id, S(1));
}

template <typename S>
typename Tape<S>::Id Tape<S>::scale_add(Id a_id, Id b_id, S w) {
  const Node& a = nodes_[a_id];
  const Node& b = nodes_[b_id];
  if (a.shape != b.shape) throw NumericalError("scale_add: shape mismatch");
  const Id out = new_node(a.shape);
  for (size_t i = 0; i < a.val.size(); ++i) nodes_[out].val[i] = a.val[i] + w * b.val[i];
  tape_.push_back([this, a_id, b_id, out, w]() {
    Node& an = nodes_[a_id];
    Node& bn = nodes_[b_id];
    const Node& on = nodes_[out];
    for (size_t i = 0; i < an.val.size(); ++i) {
      an.grad[i] += on.grad[i];
      bn.grad[i] += w * on.grad[i];
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::reshape(Id x_id, std::vector<int> shape) {
  const Node& x = nodes_[x_id];
  if (shape_numel(shape) != x.val.size()) throw NumericalError("reshape: element count mismatch");
  const Id out = new_node(std::move(shape));
  nodes_[out].val = x.val;
  tape_.push_back([this, x_id, out]() {
    Node& xn = nodes_[x_id];
    const Node& on = nodes_[out];
    for (size_t i = 0; i < xn.grad.size(); ++i) xn.grad[i] += on.grad[i];
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::slice_row(Id x_id, int row) {
  const Node& x = nodes_[x_id];
  if (x.shape.size() != 2 || row < 0 || row >= x.shape[0])
    throw NumericalError("slice_row: bad row");
  const int l = x.shape[1];
  const Id out = new_node({l});
  std::copy(x.val.begin() + static_cast<size_t>(row) * l,
            x.val.begin() + static_cast<size_t>(row + 1) * l, nodes_[out].val.begin());
  tape_.push_back([this, x_id, out, row, l]() {
    Node& xn = nodes_[x_id];
    const Node& on = nodes_[out];
    for (int i = 0; i < l; ++i) xn.grad[static_cast<size_t>(row) * l + i] += on.grad[i];
  });
  return out;
}

// ---- complex ops --------------------------------------------------------

template <typename S>
typename Tape<S>::Id Tape<S>::cmatmul(Id a_id, Id b_id) {
  const Node& a = nodes_[a_id];
  const Node& b = nodes_[b_id];
  if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[0] != 2 || b.shape[0] != 2 ||
      a.shape[2] != b.shape[1])
    throw NumericalError("cmatmul: shape mismatch");
  const int n = a.shape[1], k = a.shape[2], m = b.shape[2];
  const Id out = new_node({2, n, m});

  const S* ar = a.val.data();
  const S* ai = ar + static_cast<size_t>(n) * k;
  const S* br = b.val.data();
  const S* bi = br + static_cast<size_t>(k) * m;
  S* yr = nodes_[out].val.data();
  S* yi = yr + static_cast<size_t>(n) * m;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double sr = 0, si = 0;
      for (int t = 0; t < k; ++t) {
        const double arv = ar[i * k + t], aiv = ai[i * k + t];
        const double brv = br[t * m + j], biv = bi[t * m + j];
        sr += arv * brv - aiv * biv;
        si += arv * biv + aiv * brv;
      }
      yr[i * m + j] = static_cast<S>(sr);
      yi[i * m + j] = static_cast<S>(si);
    }

  tape_.push_back([this, a_id, b_id, out, n, k, m]() {
    Node& an = nodes_[a_id];
    Node& bn = nodes_[b_id];
    const Node& on = nodes_[out];
    const S* ar = an.val.data();
    const S* ai = ar + static_cast<size_t>(n) * k;
    const S* br = bn.val.data();
    const S* bi = br + static_cast<size_t>(k) * m;
    const S* gr = on.grad.data();
    const S* gi = gr + static_cast<size_t>(n) * m;
    S* dar = an.grad.data();
    S* dai = dar + static_cast<size_t>(n) * k;
    S* dbr = bn.grad.data();
    S* dbi = dbr + static_cast<size_t>(k) * m;
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < k; ++t) {
        double sr = 0, si = 0;
        for (int j = 0; j < m; ++j) {
          sr += static_cast<double>(gr[i * m + j]) * br[t * m + j] +
                static_cast<double>(gi[i * m + j]) * bi[t * m + j];
          si += -static_cast<double>(gr[i * m + j]) * bi[t * m + j] +
                static_cast<double>(gi[i * m + j]) * br[t * m + j];
        }
        dar[i * k + t] += static_cast<S>(sr);
        dai[i * k + t] += static_cast<S>(si);
      }
    for (int t = 0; t < k; ++t)
      for (int j = 0; j < m; ++j) {
        double sr = 0, si = 0;
        for (int i = 0; i < n; ++i) {
          sr += static_cast<double>(gr[i * m + j]) * ar[i * k + t] +
                static_cast<double>(gi[i * m + j]) * ai[i * k + t];
          si += -static_cast<double>(gr[i * m + j]) * ai[i * k + t] +
                static_cast<double>(gi[i * m + j]) * ar[i * k + t];
        }
        dbr[t * m + j] += static_cast<S>(sr);
        dbi[t * m + j] += static_cast<S>(si);
      }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::cherm(Id a_id) {
  const Node& a = nodes_[a_id];
  if (a.shape.size() != 3 || a.shape[0] != 2) throw NumericalError("cherm: expects [2,n,m]");
  const int n = a.shape[1], m = a.shape[2];
  const Id out = new_node({2, m, n});
  const S* ar = a.val.data();
  const S* ai = ar + static_cast<size_t>(n) * m;
  S* yr = nodes_[out].val.data();
  S* yi = yr + static_cast<size_t>(n) * m;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      yr[j * n + i] = ar[i * m + j];
      yi[j * n + i] = -ai[i * m + j];
    }
  tape_.push_back([this, a_id, out, n, m]() {
    Node& an = nodes_[a_id];
    const Node& on = nodes_[out];
    const S* gr = on.grad.data();
    const S* gi = gr + static_cast<size_t>(n) * m;
    S* dar = an.grad.data();
    S* dai = dar + static_cast<size_t>(n) * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        dar[i * m + j] += gr[j * n + i];
        dai[i * m + j] += -gi[j * n + i];
      }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::csolve(Id a_id, Id b_id) {
  const Node& a = nodes_[a_id];
  const Node& b = nodes_[b_id];
  if (a.shape.size() != 3 || a.shape[0] != 2 || a.shape[1] != a.shape[2])
    throw NumericalError("csolve: A must be [2,n,n]");
  if (b.shape.size() != 3 || b.shape[0] != 2 || b.shape[1] != a.shape[1])
    throw NumericalError("csolve: B must be [2,n,m]");
  const int n = a.shape[1], m = b.shape[2];

  // Promote to double complex internally; the graph remains paired-real.
  auto amat = std::make_shared<arma::cx_mat>(n, n);
  arma::cx_mat bmat(n, m);
  {
    const S* ar = a.val.data();
    const S* ai = ar + static_cast<size_t>(n) * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) (*amat)(i, j) = cxd(ar[i * n + j], ai[i * n + j]);
    const S* br = b.val.data();
    const S* bi = br + static_cast<size_t>(n) * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) bmat(i, j) = cxd(br[i * m + j], bi[i * m + j]);
  }
  const double rc = arma::rcond(*amat);
  if (!(rc > 1e-8)) throw NumericalError("csolve: condition estimate exceeds 1e8");
  auto xmat = std::make_shared<arma::cx_mat>();
  if (!arma::solve(*xmat, *amat, bmat, arma::solve_opts::no_approx))
    throw NumericalError("csolve: solve failed");

  const Id out = new_node({2, n, m});
  {
    S* yr = nodes_[out].val.data();
    S* yi = yr + static_cast<size_t>(n) * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        yr[i * m + j] = static_cast<S>((*xmat)(i, j).real());
        yi[i * m + j] = static_cast<S>((*xmat)(i, j).imag());
      }
  }

  tape_.push_back([this, a_id, b_id, out, amat, xmat, n, m]() {
    Node& an = nodes_[a_id];
    Node& bn = nodes_[b_id];
    const Node& on = nodes_[out];
    arma::cx_mat g(n, m);
    const S* gr = on.grad.data();
    const S* gi = gr + static_cast<size_t>(n) * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) g(i, j) = cxd(gr[i * m + j], gi[i * m + j]);
    // dB = A^-H G ; dA = -dB X^H
    arma::cx_mat db = arma::solve(amat->t(), g, arma::solve_opts::no_approx);
    arma::cx_mat da = -db * xmat->t();
    S* dbr = bn.grad.data();
    S* dbi = dbr + static_cast<size_t>(n) * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        dbr[i * m + j] += static_cast<S>(db(i, j).real());
        dbi[i * m + j] += static_cast<S>(db(i, j).imag());
      }
    S* dar = an.grad.data();
    S* dai = dar + static_cast<size_t>(n) * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        dar[i * n + j] += static_cast<S>(da(i, j).real());
        dai[i * n + j] += static_cast<S>(da(i, j).imag());
      }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::stack_conj_rows(const std::vector<Id>& h, int m) {
  if (h.empty()) throw NumericalError("stack_conj_rows: no inputs");
  const Node& h0 = nodes_[h[0]];
  if (h0.shape.size() != 3 || h0.shape[0] != 2)
    throw NumericalError("stack_conj_rows: inputs must be [2,n,M]");
  const int n = h0.shape[1], cols = h0.shape[2];
  if (m < 0 || m >= cols) throw NumericalError("stack_conj_rows: subband out of range");
  const int k = static_cast<int>(h.size());
  for (Id id : h)
    if (nodes_[id].shape != h0.shape) throw NumericalError("stack_conj_rows: shape mismatch");

  const Id out = new_node({2, k, n});
  S* yr = nodes_[out].val.data();
  S* yi = yr + static_cast<size_t>(k) * n;
  for (int kk = 0; kk < k; ++kk) {
    const Node& hn = nodes_[h[kk]];
    const S* hr = hn.val.data();
    const S* hi = hr + static_cast<size_t>(n) * cols;
    for (int i = 0; i < n; ++i) {
      yr[kk * n + i] = hr[i * cols + m];
      yi[kk * n + i] = -hi[i * cols + m];
    }
  }
  auto hs = std::make_shared<std::vector<Id>>(h);
  tape_.push_back([this, hs, out, n, cols, m, k]() {
    const Node& on = nodes_[out];
    const S* gr = on.grad.data();
    const S* gi = gr + static_cast<size_t>(k) * n;
    for (int kk = 0; kk < k; ++kk) {
      Node& hn = nodes_[(*hs)[kk]];
      S* dhr = hn.grad.data();
      S* dhi = dhr + static_cast<size_t>(n) * cols;
      for (int i = 0; i < n; ++i) {
        dhr[i * cols + m] += gr[kk * n + i];
        dhi[i * cols + m] += -gi[kk * n + i];
      }
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::rows_unit_normalize(Id a_id) {
  const Node& a = nodes_[a_id];
  if (a.shape.size() != 3 || a.shape[0] != 2)
    throw NumericalError("rows_unit_normalize: expects [2,n,m]");
  const int n = a.shape[1], m = a.shape[2];
  const Id out = new_node(a.shape);
  auto norms = std::make_shared<std::vector<double>>(n);
  const S* ar = a.val.data();
  const S* ai = ar + static_cast<size_t>(n) * m;
  S* yr = nodes_[out].val.data();
  S* yi = yr + static_cast<size_t>(n) * m;
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < m; ++j)
      s += static_cast<double>(ar[i * m + j]) * ar[i * m + j] +
           static_cast<double>(ai[i * m + j]) * ai[i * m + j];
    const double r = std::sqrt(s);
    if (!(r > 0)) throw NumericalError("rows_unit_normalize: zero row");
    (*norms)[i] = r;
    for (int j = 0; j < m; ++j) {
      yr[i * m + j] = static_cast<S>(ar[i * m + j] / r);
      yi[i * m + j] = static_cast<S>(ai[i * m + j] / r);
    }
  }
  tape_.push_back([this, a_id, out, norms, n, m]() {
    Node& an = nodes_[a_id];
    const Node& on = nodes_[out];
    const S* ar = an.val.data();
    const S* ai = ar + static_cast<size_t>(n) * m;
    const S* gr = on.grad.data();
    const S* gi = gr + static_cast<size_t>(n) * m;
    S* dar = an.grad.data();
    S* dai = dar + static_cast<size_t>(n) * m;
    for (int i = 0; i < n; ++i) {
      const double r = (*norms)[i];
      double dot = 0;  // <u, dy> over the paired-real row
      for (int j = 0; j < m; ++j)
        dot += static_cast<double>(ar[i * m + j]) * gr[i * m + j] +
               static_cast<double>(ai[i * m + j]) * gi[i * m + j];
      const double r3 = r * r * r;
      for (int j = 0; j < m; ++j) {
        dar[i * m + j] += static_cast<S>(gr[i * m + j] / r - ar[i * m + j] * dot / r3);
        dai[i * m + j] += static_cast<S>(gi[i * m + j] / r - ai[i * m + j] * dot / r3);
      }
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::cols_scale_to_norm(Id a_id, S target) {
  const Node& a = nodes_[a_id];
  if (a.shape.size() != 3 || a.shape[0] != 2)
    throw NumericalError("cols_scale_to_norm: expects [2,n,m]");
  const int n = a.shape[1], m = a.shape[2];
  const Id out = new_node(a.shape);
  auto norms = std::make_shared<std::vector<double>>(m);
  const S* ar = a.val.data();
  const S* ai = ar + static_cast<size_t>(n) * m;
  S* yr = nodes_[out].val.data();
  S* yi = yr + static_cast<size_t>(n) * m;
  for (int j = 0; j < m; ++j) {
    double s = 0;
    for (int i = 0; i < n; ++i)
      s += static_cast<double>(ar[i * m + j]) * ar[i * m + j] +
           static_cast<double>(ai[i * m + j]) * ai[i * m + j];
    const double r = std::sqrt(s);
    if (!(r > 0)) throw NumericalError("cols_scale_to_norm: zero column");
    (*norms)[j] = r;
    const double f = static_cast<double>(target) / r;
    for (int i = 0; i < n; ++i) {
      yr[i * m + j] = static_cast<S>(ar[i * m + j] * f);
      yi[i * m + j] = static_cast<S>(ai[i * m + j] * f);
    }
  }
  tape_.push_back([this, a_id, out, norms, n, m, target]() {
    Node& an = nodes_[a_id];
    const Node& on = nodes_[out];
    const S* ar = an.val.data();
    const S* ai = ar + static_cast<size_t>(n) * m;
    const S* gr = on.grad.data();
    const S* gi = gr + static_cast<size_t>(n) * m;
    S* dar = an.grad.data();
    S* dai = dar + static_cast<size_t>(n) * m;
    for (int j = 0; j < m; ++j) {
      const double r = (*norms)[j];
      double dot = 0;
      for (int i = 0; i < n; ++i)
        dot += static_cast<double>(ar[i * m + j]) * gr[i * m + j] +
               static_cast<double>(ai[i * m + j]) * gi[i * m + j];
      const double t = static_cast<double>(target);
      const double r3 = r * r * r;
      for (int i = 0; i < n; ++i) {
        dar[i * m + j] += static_cast<S>(t * (gr[i * m + j] / r - ar[i * m + j] * dot / r3));
        dai[i * m + j] += static_cast<S>(t * (gi[i * m + j] / r - ai[i * m + j] * dot / r3));
      }
    }
  });
  return out;
}

// ---- losses -------------------------------------------------------------

template <typename S>
typename Tape<S>::Id Tape<S>::bce_loss(Id o_id, const std::vector<S>& labels) {
  const Node& o = nodes_[o_id];
  if (labels.size() != o.val.size()) throw NumericalError("bce_loss: label size mismatch");
  const size_t n = o.val.size();
  const Id out = new_node({1});
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(o.val[i]), kClampEps, 1.0 - kClampEps);
    loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  nodes_[out].val[0] = static_cast<S>(loss / static_cast<double>(n));
  auto lab = std::make_shared<std::vector<S>>(labels);
  tape_.push_back([this, o_id, out, lab, n]() {
    Node& on = nodes_[o_id];
    const S g = nodes_[out].grad[0];
    for (size_t i = 0; i < n; ++i) {
      const double p = std::clamp(static_cast<double>(on.val[i]), kClampEps, 1.0 - kClampEps);
      const bool clamped = static_cast<double>(on.val[i]) != p;
      if (clamped) continue;
      const double d = -((*lab)[i] / p - (1.0 - (*lab)[i]) / (1.0 - p)) / static_cast<double>(n);
      on.grad[i] += static_cast<S>(g * d);
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::focal_bce_loss(Id o_id, const std::vector<S>& labels,
                                             int num_ports, S gamma) {
  const Node& o = nodes_[o_id];
  if (labels.size() != o.val.size()) throw NumericalError("focal_bce_loss: label size mismatch");
  if (o.shape.size() > 2) throw NumericalError("focal_bce_loss: expects [L] or [N,L]");
  const size_t n = o.val.size();
  const int l = o.shape.size() == 2 ? o.shape[1] : o.shape[0];
  // Class weights follow the port budget: positives get (N_TxM-P)/N_TxM,
  // negatives P/N_TxM.
  const double w_pos = static_cast<double>(l - num_ports) / static_cast<double>(l);
  const double w_neg = static_cast<double>(num_ports) / static_cast<double>(l);
  const double gam = static_cast<double>(gamma);

  const Id out = new_node({1});
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(o.val[i]), kClampEps, 1.0 - kClampEps);
    if (labels[i] > S(0.5))
      loss -= w_pos * std::pow(1.0 - p, gam) * std::log(p);
    else
      loss -= w_neg * std::pow(p, gam) * std::log(1.0 - p);
  }
  nodes_[out].val[0] = static_cast<S>(loss / static_cast<double>(n));
  auto lab = std::make_shared<std::vector<S>>(labels);
  tape_.push_back([this, o_id, out, lab, n, w_pos, w_neg, gam]() {
    Node& on = nodes_[o_id];
    const S g = nodes_[out].grad[0];
    for (size_t i = 0; i < n; ++i) {
      const double p = std::clamp(static_cast<double>(on.val[i]), kClampEps, 1.0 - kClampEps);
      if (static_cast<double>(on.val[i]) != p) continue;  // clamped: zero subgradient
      double d;
      if ((*lab)[i] > S(0.5)) {
        // d/dp [ (1-p)^g ln p ] = -g (1-p)^(g-1) ln p + (1-p)^g / p
        d = -w_pos * (-gam * std::pow(1.0 - p, gam - 1.0) * std::log(p) +
                      std::pow(1.0 - p, gam) / p);
      } else {
        // d/dp [ p^g ln(1-p) ] = g p^(g-1) ln(1-p) - p^g / (1-p)
        d = -w_neg * (gam * std::pow(p, gam - 1.0) * std::log(1.0 - p) -
                      std::pow(p, gam) / (1.0 - p));
      }
      on.grad[i] += static_cast<S>(g * d / static_cast<double>(n));
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::mse_to_const(Id x_id, const std::vector<S>& target, S denom) {
  const Node& x = nodes_[x_id];
  if (target.size() != x.val.size()) throw NumericalError("mse_to_const: target size mismatch");
  const Id out = new_node({1});
  double s = 0;
  for (size_t i = 0; i < x.val.size(); ++i) {
    const double d = static_cast<double>(x.val[i]) - target[i];
    s += d * d;
  }
  nodes_[out].val[0] = static_cast<S>(s / static_cast<double>(denom));
  auto tgt = std::make_shared<std::vector<S>>(target);
  tape_.push_back([this, x_id, out, tgt, denom]() {
    Node& xn = nodes_[x_id];
    const S g = nodes_[out].grad[0];
    for (size_t i = 0; i < xn.val.size(); ++i)
      xn.grad[i] += g * S(2) * (xn.val[i] - (*tgt)[i]) / denom;
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::subband_sum_rate(Id s_id, S sigma2) {
  const Node& s = nodes_[s_id];
  if (s.shape.size() != 3 || s.shape[0] != 2 || s.shape[1] != s.shape[2])
    throw NumericalError("subband_sum_rate: expects [2,K,K]");
  if (!(sigma2 > S(0))) throw ConfigError("subband_sum_rate: sigma2 must be positive");
  const int k = s.shape[1];
  const Id out = new_node({1});
  const S* sr = s.val.data();
  const S* si = sr + static_cast<size_t>(k) * k;
  double total = 0;
  for (int u = 0; u < k; ++u) {
    double sig = 0, intf = 0;
    for (int j = 0; j < k; ++j) {
      const double p = static_cast<double>(sr[u * k + j]) * sr[u * k + j] +
                       static_cast<double>(si[u * k + j]) * si[u * k + j];
      if (j == u)
        sig = p;
      else
        intf += p;
    }
    total += std::log2(1.0 + sig / (intf + static_cast<double>(sigma2)));
  }
  nodes_[out].val[0] = static_cast<S>(total);
  tape_.push_back([this, s_id, out, k, sigma2]() {
    Node& sn = nodes_[s_id];
    const S g = nodes_[out].grad[0];
    const S* sr = sn.val.data();
    const S* si = sr + static_cast<size_t>(k) * k;
    S* dsr = sn.grad.data();
    S* dsi = dsr + static_cast<size_t>(k) * k;
    for (int u = 0; u < k; ++u) {
      double sig = 0, intf = 0;
      for (int j = 0; j < k; ++j) {
        const double p = static_cast<double>(sr[u * k + j]) * sr[u * k + j] +
                         static_cast<double>(si[u * k + j]) * si[u * k + j];
        if (j == u)
          sig = p;
        else
          intf += p;
      }
      const double den = intf + static_cast<double>(sigma2);
      const double t = 1.0 + sig / den;
      const double d_sig = 1.0 / (kLn2 * t * den);
      const double d_intf = -sig / (kLn2 * t * den * den);
      for (int j = 0; j < k; ++j) {
        const double c = (j == u) ? d_sig : d_intf;
        dsr[u * k + j] += static_cast<S>(g * c * 2.0 * sr[u * k + j]);
        dsi[u * k + j] += static_cast<S>(g * c * 2.0 * si[u * k + j]);
      }
    }
  });
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::weighted_sum(const std::vector<Id>& scalars,
                                           const std::vector<S>& weights) {
  if (scalars.size() != weights.size() || scalars.empty())
    throw NumericalError("weighted_sum: size mismatch");
  const Id out = new_node({1});
  double s = 0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (nodes_[scalars[i]].val.size() != 1)
      throw NumericalError("weighted_sum: inputs must be scalars");
    s += static_cast<double>(weights[i]) * nodes_[scalars[i]].val[0];
  }
  nodes_[out].val[0] = static_cast<S>(s);
  auto ids = std::make_shared<std::vector<Id>>(scalars);
  auto ws = std::make_shared<std::vector<S>>(weights);
  tape_.push_back([this, out, ids, ws]() {
    const S g = nodes_[out].grad[0];
    for (size_t i = 0; i < ids->size(); ++i) nodes_[(*ids)[i]].grad[0] += g * (*ws)[i];
  });
  return out;
}

template <typename S>
void Tape<S>::backward(Id root) {
  if (nodes_[root].val.size() != 1)
    throw NumericalError("backward: root must be a scalar");
  nodes_[root].grad[0] = S(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  for (auto& [id, p] : bound_params_)
    for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += nodes_[id].grad[i];
}

template class Tape<float>;
template class Tape<double>;

}  // namespace csilab
