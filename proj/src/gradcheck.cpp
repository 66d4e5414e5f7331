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

#include "csilab/gradcheck.hpp"

#include <cmath>

namespace csilab {

GradCheckResult check_gradients(
    const std::string& name, const std::vector<ParamTensor<double>*>& params,
    const std::function<Tape<double>::Id(Tape<double>&)>& build, double tolerance,
    double step, double analytic_scale) {
  GradCheckResult result;
  result.name = name;
  result.tolerance = tolerance;

  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    const auto root = build(tape);
    tape.backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) {
    analytic.push_back(p->grad);
    for (auto& g : analytic.back()) g *= analytic_scale;
  }

  auto eval = [&]() {
    Tape<double> tape;
    const auto root = build(tape);
    return tape.node(root).val[0];
  };

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor<double>& p = *params[pi];
    for (size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.values[i];
      const double h = step * std::max(1.0, std::abs(saved));
      p.values[i] = saved + h;
      const double lp = eval();
      p.values[i] = saved - h;
      const double lm = eval();
      p.values[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-3);
      worst = std::max(worst, rel);
    }
  }
  result.max_rel_err = worst;
  result.pass = worst < tolerance;
  return result;
}

namespace {

ParamTensor<double> random_param(const std::string& name, std::vector<int> shape, Rng& rng,
                                 double scale = 1.0) {
  ParamTensor<double> p(name, std::move(shape));
  for (auto& v : p.values) v = scale * (rng.uniform() * 2.0 - 1.0);
  return p;
}

}  // namespace

std::vector<GradCheckResult> run_neuro_gradcheck_suite(uint64_t seed) {
  std::vector<GradCheckResult> results;
  Rng rng(seed);

  // conv2d_circular on a random 2x2x6x4 problem, both strides exercised.
  {
    auto x = random_param("x", {2, 2, 6, 4}, rng);
    auto k = random_param("k", {3, 2, 3, 3}, rng);
    auto k2 = random_param("k2", {2, 3, 3, 3}, rng);
    auto build = [&](Tape<double>& t) {
      auto y = t.conv2d_circular(t.param(x), t.param(k), 1, 1);
      auto y2 = t.conv2d_circular(y, t.param(k2), 3, 2);
      std::vector<double> target(shape_numel(t.node(y2).shape), 0.0);
      return t.mse_to_const(y2, target, 1.0);
    };
    results.push_back(check_gradients("conv2d_circular", {&x, &k, &k2}, build));
  }

  // batchnorm2d, train and eval modes.
  {
    auto x = random_param("x", {3, 2, 4, 3}, rng);
    auto g = random_param("gamma", {2}, rng);
    auto b = random_param("beta", {2}, rng);
    for (bool train : {true, false}) {
      auto build = [&, train](Tape<double>& t) {
        BatchNormState<double> st(2);  // fresh stats per evaluation
        st.running_mean = {0.3, -0.2};
        st.running_var = {1.5, 0.7};
        auto y = t.batchnorm2d(t.param(x), t.param(g), t.param(b), st, train);
        std::vector<double> target(shape_numel(t.node(y).shape), 0.1);
        return t.mse_to_const(y, target, 2.0);
      };
      results.push_back(check_gradients(train ? "batchnorm2d(train)" : "batchnorm2d(eval)",
                                        {&x, &g, &b}, build));
    }
  }

  // leaky_relu on a mixed-sign batch.
  {
    auto x = random_param("x", {4, 5}, rng, 2.0);
    auto build = [&](Tape<double>& t) {
      auto y = t.leaky_relu(t.param(x), 0.1);
      std::vector<double> target(20, 0.0);
      return t.mse_to_const(y, target, 1.0);
    };
    results.push_back(check_gradients("leaky_relu", {&x}, build));
  }

  // global max / avg pool.
  for (auto kind : {PoolKind::Max, PoolKind::Avg}) {
    auto x = random_param("x", {2, 3, 4, 5}, rng);
    auto build = [&, kind](Tape<double>& t) {
      auto y = t.global_pool(t.param(x), kind);
      std::vector<double> target(6, 0.25);
      return t.mse_to_const(y, target, 1.0);
    };
    results.push_back(
        check_gradients(kind == PoolKind::Max ? "global_pool(max)" : "global_pool(avg)", {&x},
                        build));
  }

  // dense + sigmoid.
  {
    auto x = random_param("x", {3, 4}, rng);
    auto w = random_param("w", {4, 6}, rng);
    auto b = random_param("b", {6}, rng);
    auto build = [&](Tape<double>& t) {
      auto y = t.sigmoid(t.dense(t.param(x), t.param(w), t.param(b)));
      std::vector<double> target(18, 0.5);
      return t.mse_to_const(y, target, 3.0);
    };
    results.push_back(check_gradients("dense+sigmoid", {&x, &w, &b}, build));
  }

  // dropout with a fixed mask stream.
  {
    auto x = random_param("x", {4, 8}, rng);
    auto build = [&](Tape<double>& t) {
      Rng mask_rng(1234);
      auto y = t.dropout(t.param(x), 0.3, true, mask_rng);
      std::vector<double> target(32, 0.0);
      return t.mse_to_const(y, target, 1.0);
    };
    results.push_back(check_gradients("dropout(train)", {&x}, build));
  }

  // cmatmul / cherm chain.
  {
    auto a = random_param("a", {2, 3, 4}, rng);
    auto b = random_param("b", {2, 4, 2}, rng);
    auto build = [&](Tape<double>& t) {
      auto y = t.cmatmul(t.param(a), t.param(b));
      auto z = t.cmatmul(t.cherm(y), y);
      std::vector<double> target(shape_numel(t.node(z).shape), 0.2);
      return t.mse_to_const(z, target, 1.0);
    };
    results.push_back(check_gradients("cmatmul+cherm", {&a, &b}, build));
  }

  // csolve on a well-conditioned random 4x4 system.
  {
    auto a = random_param("a", {2, 4, 4}, rng, 0.3);
    auto b = random_param("b", {2, 4, 2}, rng);
    for (int i = 0; i < 4; ++i) a.values[i * 4 + i] += 2.0;  // diagonally dominant
    auto build = [&](Tape<double>& t) {
      auto x = t.csolve(t.param(a), t.param(b));
      std::vector<double> target(shape_numel(t.node(x).shape), 0.1);
      return t.mse_to_const(x, target, 1.0);
    };
    results.push_back(check_gradients("csolve", {&a, &b}, build));
  }

  // row/column normalizations.
  {
    auto a = random_param("a", {2, 3, 5}, rng);
    auto build = [&](Tape<double>& t) {
      auto y = t.rows_unit_normalize(t.param(a));
      auto z = t.cols_scale_to_norm(y, 0.7);
      std::vector<double> target(shape_numel(t.node(z).shape), 0.1);
      return t.mse_to_const(z, target, 1.0);
    };
    results.push_back(check_gradients("rows/cols normalize", {&a}, build));
  }

  // losses: bce, focal, subband sum rate.
  {
    auto o = random_param("o", {2, 8}, rng);
    for (auto& v : o.values) v = 0.1 + 0.8 * std::abs(v);  // keep in (0,1)
    std::vector<double> labels(16, 0.0);
    labels[1] = labels[5] = labels[10] = 1.0;
    auto build_bce = [&](Tape<double>& t) { return t.bce_loss(t.sigmoid(t.param(o)), labels); };
    results.push_back(check_gradients("bce_loss", {&o}, build_bce));
    auto build_focal = [&](Tape<double>& t) {
      return t.focal_bce_loss(t.sigmoid(t.param(o)), labels, 3, 2.0);
    };
    results.push_back(check_gradients("focal_bce_loss", {&o}, build_focal));
  }
  {
    auto s = random_param("s", {2, 3, 3}, rng);
    auto build = [&](Tape<double>& t) { return t.subband_sum_rate(t.param(s), 0.5); };
    results.push_back(check_gradients("subband_sum_rate", {&s}, build));
  }

  // Composed conv -> bn -> relu -> pool -> dense graph.
  {
    auto x = random_param("x", {2, 2, 8, 6}, rng);
    auto k = random_param("k", {4, 2, 3, 3}, rng, 0.5);
    auto g = random_param("gamma", {4}, rng);
    auto b = random_param("beta", {4}, rng);
    auto w = random_param("w", {4, 3}, rng);
    auto bias = random_param("bias", {3}, rng);
    auto build = [&](Tape<double>& t) {
      BatchNormState<double> st(4);
      auto y = t.conv2d_circular(t.param(x), t.param(k), 2, 1);
      y = t.batchnorm2d(y, t.param(g), t.param(b), st, true);
      y = t.leaky_relu(y, 0.1);
      auto z = t.global_pool(y, PoolKind::Avg);
      auto out = t.sigmoid(t.dense(z, t.param(w), t.param(bias)));
      std::vector<double> target(6, 0.4);
      return t.mse_to_const(out, target, 1.0);
    };
    results.push_back(
        check_gradients("conv->bn->relu->pool->dense", {&x, &k, &g, &b, &w, &bias}, build));
  }

  // Negative control: a corrupted backward must be flagged.
  {
    auto x = random_param("x", {3, 3}, rng);
    auto build = [&](Tape<double>& t) {
      std::vector<double> target(9, 0.0);
      return t.mse_to_const(t.param(x), target, 1.0);
    };
    auto r = check_gradients("negative-control(corrupted-backward)", {&x}, build, 1e-4, 1e-4,
                             1.02);
    results.push_back(r);
  }

  return results;
}

}  // namespace csilab
