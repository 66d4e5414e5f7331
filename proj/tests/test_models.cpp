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

#include <catch2/catch_amalgamated.hpp>

#include "csilab/gradcheck.hpp"
#include "csilab/nets.hpp"
#include "csilab/precoding.hpp"
#include "csilab/training.hpp"

using namespace csilab;
using Catch::Approx;

namespace {

ChannelMatrix random_channel(int n, int m, Rng& rng) {
  ChannelMatrix h(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) h(i, j) = cxd(rng.gaussian(), rng.gaussian());
  return h;
}

const NetArch kTinyArch{8, 4, {4, 8, 8, 8, 8}};

}  // namespace

TEST_CASE("selector preprocessing") {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 2;
  cfg.num_subbands = 4;
  const AngularBasis ab = build_angular_basis(2, 2, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(4);
  Rng rng(1);
  const ChannelMatrix h = random_channel(8, 4, rng);

  SECTION("scale invariance") {
    const auto a = preprocess_selector_input<double>(h, ab, db);
    const auto b = preprocess_selector_input<double>(2.0 * h, ab, db);  // exact in binary
    REQUIRE(a == b);
    const auto c = preprocess_selector_input<double>(3.7 * h, ab, db);
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(c[i] == Approx(a[i]).margin(1e-14));
  }

  SECTION("single basis element becomes a one-hot magnitude grid") {
    const ChannelMatrix hb = ab.w_a.col(5) * db.w_d.col(2).t();
    const auto planes = preprocess_selector_input<double>(hb, ab, db);
    const int nm = 8 * 4;
    double peak = 0, rest = 0;
    for (int i = 0; i < nm; ++i) {
      const double mod = std::hypot(planes[i], planes[nm + i]);
      if (i == 5 * 4 + 2)
        peak = mod;
      else
        rest += mod;
    }
    REQUIRE(peak == Approx(1.0).margin(1e-12));
    REQUIRE(rest < 1e-10);
  }

  SECTION("max modulus of the output is one") {
    const auto planes = preprocess_selector_input<double>(h, ab, db);
    const int nm = 8 * 4;
    double maxmod = 0;
    for (int i = 0; i < nm; ++i)
      maxmod = std::max(maxmod, std::hypot(planes[i], planes[nm + i]));
    REQUIRE(maxmod == Approx(1.0).margin(1e-14));
  }

  SECTION("zero input rejected") {
    ChannelMatrix z(8, 4, arma::fill::zeros);
    REQUIRE_THROWS_AS(preprocess_selector_input<double>(z, ab, db), NumericalError);
  }
}

TEST_CASE("selector forward") {
  SelectorNetwork<double> net(kTinyArch, 42);
  Rng rng(2), drop_rng(3);
  std::vector<double> x(2 * 2 * 8 * 4);
  for (auto& v : x) v = rng.uniform() * 2 - 1;

  SECTION("zeroed head gives 0.5 everywhere") {
    net.fc_w.fill(0);
    net.fc_b.fill(0);
    Tape<double> t;
    auto o = net.forward(t, t.leaf({2, 2, 8, 4}, x.data()), false, drop_rng);
    for (double v : t.node(o).val) REQUIRE(v == Approx(0.5));
  }

  SECTION("outputs stay in (0,1)") {
    Tape<double> t;
    auto o = net.forward(t, t.leaf({2, 2, 8, 4}, x.data()), true, drop_rng);
    REQUIRE(t.node(o).shape == std::vector<int>{2, 32});
    for (double v : t.node(o).val) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
}

TEST_CASE("top-P port extraction") {
  SECTION("clear peaks win") {
    std::vector<double> pri(32, 0.1);
    pri[3] = 0.9;
    pri[17] = 0.8;
    const PortIndexSet s = top_p_ports(pri, 8, 4, 2);
    REQUIRE(s.linear_index(0) == 3);
    REQUIRE(s.linear_index(1) == 17);
  }
  SECTION("all-equal priorities fall back to row-major order") {
    std::vector<double> pri(32, 0.5);
    const PortIndexSet s = top_p_ports(pri, 8, 4, 3);
    REQUIRE(s.linear_index(0) == 0);
    REQUIRE(s.linear_index(1) == 1);
    REQUIRE(s.linear_index(2) == 2);
  }
  SECTION("matches a sort oracle and always emits P ports") {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> pri(32);
      for (auto& v : pri) v = rng.uniform();
      const PortIndexSet s = top_p_ports(pri, 8, 4, 7);
      REQUIRE(s.size() == 7);
      s.validate();
      std::vector<int> idx(32);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(),
                [&](int a, int b) { return pri[a] != pri[b] ? pri[a] > pri[b] : a < b; });
      for (int i = 0; i < 7; ++i) REQUIRE(s.linear_index(i) == idx[i]);
    }
  }
}

TEST_CASE("selection is scale invariant end to end") {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 2;
  cfg.num_subbands = 4;
  const AngularBasis ab = build_angular_basis(2, 2, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(4);
  SelectorNetwork<double> net(kTinyArch, 5);
  Rng rng(6), drop_rng(7);
  const ChannelMatrix h = random_channel(8, 4, rng);
  auto run = [&](const ChannelMatrix& hh) {
    const auto planes = preprocess_selector_input<double>(hh, ab, db);
    Tape<double> t;
    auto o = net.forward(t, t.leaf({1, 2, 8, 4}, planes.data()), false, drop_rng);
    return top_p_ports(t.node(o).val, 8, 4, 6).ports;
  };
  REQUIRE(run(h) == run(0.37 * h));
  REQUIRE(run(h) == run(128.0 * h));
}

TEST_CASE("bce loss closed forms") {
  std::vector<double> labels = {1, 0, 0, 1};

  SECTION("perfect predictions cost almost nothing") {
    std::vector<double> o = {1.0, 0.0, 0.0, 1.0};  // clamped internally
    Tape<double> t;
    auto loss = t.bce_loss(t.leaf({4}, o.data()), labels);
    REQUIRE(t.node(loss).val[0] < 1e-6);
  }

  SECTION("uninformative predictions cost log 2") {
    std::vector<double> o(4, 0.5);
    Tape<double> t;
    auto loss = t.bce_loss(t.leaf({4}, o.data()), labels);
    REQUIRE(t.node(loss).val[0] == Approx(std::log(2.0)).epsilon(1e-12));
  }

  SECTION("hand-computed four-port case") {
    std::vector<double> o = {0.9, 0.1, 0.2, 0.8};
    Tape<double> t;
    auto loss = t.bce_loss(t.leaf({4}, o.data()), labels);
    const double expect = -(std::log(0.9) + std::log(0.9) + std::log(0.8) +
                            std::log(0.8)) / 4.0;
    REQUIRE(t.node(loss).val[0] == Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("focal loss") {
  SECTION("gamma 0 equals class-weighted bce") {
    Rng rng(8);
    const int l = 32, p = 4;
    std::vector<double> o(l), labels(l, 0.0);
    for (auto& v : o) v = 0.05 + 0.9 * rng.uniform();
    for (int i = 0; i < p; ++i) labels[i * 7] = 1.0;
    Tape<double> t;
    auto loss = t.focal_bce_loss(t.leaf({l}, o.data()), labels, p, 0.0);
    // Independent class-weighted BCE.
    double expect = 0;
    for (int i = 0; i < l; ++i) {
      const double w_pos = static_cast<double>(l - p) / l;
      const double w_neg = static_cast<double>(p) / l;
      expect -= labels[i] > 0.5 ? w_pos * std::log(o[i]) : w_neg * std::log(1.0 - o[i]);
    }
    expect /= l;
    REQUIRE(t.node(loss).val[0] == Approx(expect).margin(1e-10));
  }

  SECTION("easy positives are suppressed") {
    std::vector<double> o = {1.0 - 1e-9}, labels = {1.0};
    Tape<double> t;
    auto loss = t.focal_bce_loss(t.leaf({1}, o.data()), labels, 1, 2.0);
    REQUIRE(t.node(loss).val[0] < 1e-12);
  }

  SECTION("fixed four-port case against the direct-evaluation oracle") {
    const std::vector<double> o = {0.9, 0.1, 0.2, 0.8};
    const std::vector<double> labels = {1, 0, 0, 0};
    const int l = 4, p = 1;
    const double gamma = 2.0;
    Tape<double> t;
    auto loss = t.focal_bce_loss(t.leaf({l}, o.data()), labels, p, gamma);
    // Direct evaluation, written out term by term.
    const double w_pos = 3.0 / 4.0, w_neg = 1.0 / 4.0;
    const double expect =
        -(w_pos * std::pow(1.0 - 0.9, gamma) * std::log(0.9) +
          w_neg * std::pow(0.1, gamma) * std::log(0.9) +
          w_neg * std::pow(0.2, gamma) * std::log(0.8) +
          w_neg * std::pow(0.8, gamma) * std::log(0.2)) /
        4.0;
    REQUIRE(t.node(loss).val[0] == Approx(expect).epsilon(1e-12));

    ParamTensor<double> logits("logits", {4});
    logits.values = {2.0, -2.0, -1.0, 1.5};
    auto build = [&](Tape<double>& tt) {
      return tt.focal_bce_loss(tt.sigmoid(tt.param(logits)), labels, p, gamma);
    };
    REQUIRE(check_gradients("focal-4port", {&logits}, build, 1e-4).pass);
  }

  SECTION("loss is nonnegative and vanishes on exact labels") {
    std::vector<double> labels = {1, 0, 1, 0};
    std::vector<double> o = {1.0, 0.0, 1.0, 0.0};
    Tape<double> t;
    auto loss = t.focal_bce_loss(t.leaf({4}, o.data()), labels, 2, 2.0);
    REQUIRE(t.node(loss).val[0] >= 0.0);
    REQUIRE(t.node(loss).val[0] < 1e-12);
  }
}

TEST_CASE("reconstructor forward is a weighted shortcut") {
  ReconstructorNetwork<double> net(kTinyArch, 9);
  Rng rng(10), drop_rng(11);
  std::vector<double> x(2 * 8 * 4);
  for (auto& v : x) v = rng.uniform() - 0.5;

  SECTION("zeroed branch is the identity") {
    net.fc_w.fill(0);
    net.fc_b.fill(0);
    Tape<double> t;
    auto o = net.forward(t, t.leaf({1, 2, 8, 4}, x.data()), false, drop_rng);
    for (size_t i = 0; i < x.size(); ++i) REQUIRE(t.node(o).val[i] == x[i]);
  }

  SECTION("w = 0 is the identity regardless of the branch") {
    net.shortcut_weight = 0.0;
    Tape<double> t;
    auto o = net.forward(t, t.leaf({1, 2, 8, 4}, x.data()), false, drop_rng);
    for (size_t i = 0; i < x.size(); ++i) REQUIRE(t.node(o).val[i] == x[i]);
  }

  SECTION("default shortcut weight") {
    REQUIRE(net.shortcut_weight == Approx(0.05));
  }
}

TEST_CASE("grid mse loss") {
  Rng rng(12);
  const int n_tx = 8, m = 4, l = 2 * n_tx * m;

  SECTION("exact reconstruction costs zero") {
    std::vector<double> g(l);
    for (auto& v : g) v = rng.uniform();
    Tape<double> t;
    auto id = t.leaf({2, n_tx, m}, g.data());
    auto loss = mse_loss<double>(t, {id}, {g});
    REQUIRE(t.node(loss).val[0] == 0.0);
  }

  SECTION("unit difference in one element: 1/(N_Tx M)") {
    std::vector<double> g(l, 0.0), target(l, 0.0);
    g[5] = 1.0;
    Tape<double> t;
    auto id = t.leaf({2, n_tx, m}, g.data());
    auto loss = mse_loss<double>(t, {id}, {target});
    REQUIRE(t.node(loss).val[0] == Approx(1.0 / (n_tx * m)).epsilon(1e-12));
  }

  SECTION("random pair against a straight-line oracle") {
    const int k = 3;
    std::vector<std::vector<double>> targets;
    std::vector<Tape<double>::Id> ids;
    Tape<double> t;
    double expect = 0;
    std::vector<std::vector<double>> gs;
    for (int u = 0; u < k; ++u) {
      std::vector<double> g(l), tgt(l);
      for (auto& v : g) v = rng.uniform();
      for (auto& v : tgt) v = rng.uniform();
      for (int i = 0; i < l; ++i) expect += (g[i] - tgt[i]) * (g[i] - tgt[i]);
      gs.push_back(g);
      targets.push_back(tgt);
    }
    for (int u = 0; u < k; ++u) ids.push_back(t.leaf({2, n_tx, m}, gs[u].data()));
    expect /= (k * n_tx * m);
    auto loss = mse_loss<double>(t, ids, targets);
    REQUIRE(t.node(loss).val[0] == Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("stage-2 loss") {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 1;  // N_Tx = 4
  cfg.num_subbands = 2;
  cfg.num_ues = 2;
  const AngularBasis ab = build_angular_basis(2, 1, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(2);
  Rng rng(13);
  const double sigma2 = 0.05, p_tx = 2.0;

  std::vector<ChannelMatrix> h_true;
  std::vector<std::vector<double>> perfect;
  for (int k = 0; k < 2; ++k) {
    h_true.push_back(random_channel(4, 2, rng));
    perfect.push_back(normalized_grid_planes<double>(to_angular_delay(h_true[k], ab, db).g));
  }

  SECTION("perfect reconstruction leaves only the negative rate term") {
    Tape<double> t;
    std::vector<Tape<double>::Id> grids;
    for (int k = 0; k < 2; ++k) grids.push_back(t.leaf({2, 4, 2}, perfect[k].data()));
    auto loss = stage2_loss<double>(t, grids, perfect, h_true, ab, db, sigma2, 2000.0, p_tx);
    // Classical reference on the same normalized grids.
    std::vector<ChannelMatrix> h_hat;
    for (int k = 0; k < 2; ++k) {
      GridMatrix g(4, 2);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c)
          g(r, c) = cxd(perfect[k][r * 2 + c], perfect[k][8 + r * 2 + c]);
      h_hat.push_back(from_angular_delay({g}, ab, db));
    }
    const double r_avg = average_sum_rate(h_true, zf_precode(h_hat, p_tx), sigma2).r_avg;
    REQUIRE(t.node(loss).val[0] == Approx(-r_avg).epsilon(1e-9));
  }

  SECTION("huge mu aligns the gradient with the mse gradient") {
    std::vector<std::vector<double>> noisy = perfect;
    Rng nr(14);
    for (auto& g : noisy)
      for (auto& v : g) v += 0.05 * nr.gaussian();

    auto grad_of = [&](double mu, bool mse_only) {
      ParamTensor<double> p0("g0", {2, 4, 2}), p1("g1", {2, 4, 2});
      p0.values = noisy[0];
      p1.values = noisy[1];
      Tape<double> t;
      std::vector<Tape<double>::Id> grids = {t.param(p0), t.param(p1)};
      auto loss = mse_only
                      ? mse_loss<double>(t, grids, perfect)
                      : stage2_loss<double>(t, grids, perfect, h_true, ab, db, sigma2,
                                            mu, p_tx);
      t.backward(loss);
      std::vector<double> g = p0.grad;
      g.insert(g.end(), p1.grad.begin(), p1.grad.end());
      return g;
    };
    const auto g_stage2 = grad_of(1e9, false);
    const auto g_mse = grad_of(0, true);
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < g_stage2.size(); ++i) {
      dot += g_stage2[i] * g_mse[i];
      na += g_stage2[i] * g_stage2[i];
      nb += g_mse[i] * g_mse[i];
    }
    REQUIRE(dot / std::sqrt(na * nb) > 0.99);
  }

  SECTION("full gradient through the ZF solve (K=2, M=1)") {
    ScenarioConfig tiny = cfg;
    tiny.num_subbands = 1;
    const DelayBasis db1 = build_delay_basis(1);
    std::vector<ChannelMatrix> ht;
    std::vector<std::vector<double>> pf;
    for (int k = 0; k < 2; ++k) {
      ht.push_back(random_channel(4, 1, rng));
      pf.push_back(normalized_grid_planes<double>(to_angular_delay(ht[k], ab, db1).g));
    }
    ParamTensor<double> p0("g0", {2, 4, 1}), p1("g1", {2, 4, 1});
    Rng pr(15);
    for (size_t i = 0; i < p0.numel(); ++i) {
      p0.values[i] = pf[0][i] + 0.1 * pr.gaussian();
      p1.values[i] = pf[1][i] + 0.1 * pr.gaussian();
    }
    auto build = [&](Tape<double>& t) {
      std::vector<Tape<double>::Id> grids = {t.param(p0), t.param(p1)};
      return stage2_loss<double>(t, grids, pf, ht, ab, db1, 0.05, 100.0, p_tx);
    };
    const auto r = check_gradients("stage2-tiny", {&p0, &p1}, build, 1e-3);
    INFO("max_rel_err=" << r.max_rel_err);
    REQUIRE(r.pass);
  }
}

TEST_CASE("full-network gradient checks at reduced width") {
  Rng rng(16);
  SECTION("selector") {
    SelectorNetwork<double> net({4, 2, {2, 3, 3, 3, 3}}, 17);
    std::vector<double> x(2 * 2 * 4 * 2);
    for (auto& v : x) v = rng.uniform() - 0.5;
    std::vector<double> labels(2 * 8, 0.0);
    labels[1] = labels[9] = 1.0;
    auto params = net.parameters();
    auto build = [&](Tape<double>& t) {
      Rng drop_rng(21);
      auto o = net.forward(t, t.leaf({2, 2, 4, 2}, x.data()), true, drop_rng);
      return t.focal_bce_loss(o, labels, 1, 2.0);
    };
    const auto r = check_gradients("selector-full", params, build, 1e-4);
    INFO("max_rel_err=" << r.max_rel_err);
    REQUIRE(r.pass);
  }
  SECTION("reconstructor") {
    ReconstructorNetwork<double> net({4, 2, {2, 3, 3, 3, 3}}, 18);
    std::vector<double> x(2 * 2 * 4 * 2);
    for (auto& v : x) v = rng.uniform() - 0.5;
    std::vector<double> target(2 * 4 * 2);
    for (auto& v : target) v = rng.uniform() - 0.5;
    auto params = net.parameters();
    auto build = [&](Tape<double>& t) {
      Rng drop_rng(22);
      auto o = net.forward(t, t.leaf({2, 2, 4, 2}, x.data()), true, drop_rng);
      auto flat = t.reshape(o, {2, 16});
      auto g0 = t.reshape(t.slice_row(flat, 0), {2, 4, 2});
      auto g1 = t.reshape(t.slice_row(flat, 1), {2, 4, 2});
      return mse_loss<double>(t, {g0, g1}, {target, target});
    };
    const auto r = check_gradients("reconstructor-full", params, build, 1e-4);
    INFO("max_rel_err=" << r.max_rel_err);
    REQUIRE(r.pass);
  }
}

TEST_CASE("every parameter receives gradient on a random batch") {
  SelectorNetwork<float> net({8, 4, {4, 8, 8, 8, 8}}, 23);
  Rng rng(24), drop_rng(25);
  const int b = 16;
  std::vector<float> x(static_cast<size_t>(b) * 2 * 8 * 4);
  for (auto& v : x) v = static_cast<float>(rng.uniform() - 0.5);
  std::vector<float> labels(static_cast<size_t>(b) * 32, 0.0f);
  for (int i = 0; i < b; ++i) labels[i * 32 + (i % 32)] = 1.0f;
  auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  Tape<float> t;
  auto o = net.forward(t, t.leaf({b, 2, 8, 4}, x.data()), true, drop_rng);
  auto loss = t.focal_bce_loss(o, labels, 1, 2.0f);
  t.backward(loss);
  for (auto* p : params) {
    double sum = 0;
    for (float g : p->grad) sum += std::abs(g);
    INFO(p->name);
    REQUIRE(sum > 0.0);
  }
}

TEST_CASE("stage switch rule") {
  SECTION("scripted sequence fires on the sixth improvement") {
    StageSwitchRule rule(0.02, 5);
    REQUIRE_FALSE(rule.observe_improvement(0.05));
    REQUIRE_FALSE(rule.observe_improvement(0.019));
    REQUIRE_FALSE(rule.observe_improvement(0.019));
    REQUIRE_FALSE(rule.observe_improvement(0.019));
    REQUIRE_FALSE(rule.observe_improvement(0.019));
    REQUIRE(rule.observe_improvement(0.019));
    REQUIRE(rule.fired());
    REQUIRE_FALSE(rule.observe_improvement(0.001));  // fires once
  }
  SECTION("a large improvement resets the streak") {
    StageSwitchRule rule(0.02, 3);
    REQUIRE_FALSE(rule.observe_improvement(0.001));
    REQUIRE_FALSE(rule.observe_improvement(0.001));
    REQUIRE_FALSE(rule.observe_improvement(0.5));
    REQUIRE_FALSE(rule.observe_improvement(0.001));
    REQUIRE_FALSE(rule.observe_improvement(0.001));
    REQUIRE(rule.observe_improvement(0.001));
  }
  SECTION("metric-level interface establishes a baseline first") {
    StageSwitchRule rule(0.02, 2);
    REQUIRE_FALSE(rule.observe(10.0));   // baseline
    REQUIRE_FALSE(rule.observe(10.01));  // +0.01 -> streak 1
    REQUIRE(rule.observe(10.015));       // +0.005 -> fires
  }
}

TEST_CASE("selector training: overfit, determinism, label audit") {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 2;
  cfg.num_subbands = 4;
  cfg.num_ues = 5;
  cfg.num_ports = 6;
  std::vector<Drop> train, val;
  for (int d = 0; d < 7; ++d) train.push_back(make_drop(cfg, 31, d, {5.0, -5.0}));
  for (int d = 0; d < 2; ++d) val.push_back(make_drop(cfg, 32, 100 + d, {5.0, -5.0}));

  TrainConfig tc;
  tc.epochs = 120;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.num_ports = 6;
  tc.snr_list = {5.0};
  tc.val_snr_db = 5.0;
  tc.channels = {8, 16, 16, 16, 16};
  tc.seed = 3;

  NetArch arch{cfg.n_tx(), cfg.num_subbands, tc.channels};
  SelectorNetwork<float> net(arch, 77);
  const TrainResult res = train_selector(net, train, val, cfg, tc);
  REQUIRE(res.history.size() == 120);
  // Capacity smoke test: the loss collapses well below its starting value.
  REQUIRE(res.history.back().train_loss < 0.2 * res.history.front().train_loss);

  SECTION("same seed, bit-identical trajectory") {
    SelectorNetwork<float> net2(arch, 77);
    TrainConfig tc2 = tc;
    tc2.epochs = 5;
    SelectorNetwork<float> net3(arch, 77);
    const TrainResult r2 = train_selector(net2, train, val, cfg, tc2);
    const TrainResult r3 = train_selector(net3, train, val, cfg, tc2);
    for (size_t e = 0; e < r2.history.size(); ++e) {
      REQUIRE(r2.history[e].train_loss == r3.history[e].train_loss);
      REQUIRE(r2.history[e].val_primary == r3.history[e].val_primary);
    }
  }

  SECTION("labels satisfy the cardinality constraint") {
    const AngularBasis ab = build_angular_basis(2, 2, 1, 1, 0, 0);
    const DelayBasis db = build_delay_basis(4);
    for (const auto& drop : train)
      for (const auto& ue : drop.ues) {
        const auto ports =
            select_ports_by_power(to_angular_delay(ue.h_ul_clean, ab, db), tc.num_ports);
        const auto label = make_port_label<float>(ports);
        int ones = 0;
        for (float v : label) ones += v > 0.5f ? 1 : 0;
        REQUIRE(ones == tc.num_ports);
      }
  }
}

TEST_CASE("reconstructor training mechanics") {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 2;
  cfg.num_subbands = 4;
  cfg.num_ues = 3;
  cfg.num_ports = 6;
  std::vector<Drop> train, val;
  for (int d = 0; d < 6; ++d) train.push_back(make_drop(cfg, 41, d, {5.0}));
  for (int d = 0; d < 2; ++d) val.push_back(make_drop(cfg, 42, 50 + d, {5.0}));

  TrainConfig tc;
  tc.epochs = 8;
  tc.lr = 1e-3;
  tc.batch_size = 6;
  tc.num_ports = 6;
  tc.snr_list = {5.0};
  tc.recon_input_snr_db = 5.0;
  tc.channels = {8, 16, 16, 16, 16};
  tc.seed = 4;
  // A huge delta forces the switch exactly at the patience boundary.
  tc.switch_delta = 1e9;
  tc.switch_patience = 3;

  NetArch arch{cfg.n_tx(), cfg.num_subbands, tc.channels};

  SECTION("two-stage run switches and keeps training") {
    ReconstructorNetwork<float> net(arch, 88);
    const TrainResult res = train_reconstructor(net, train, val, cfg, tc);
    // The rule sees one improvement per epoch after the baseline, so it
    // fires at epoch == patience and stage 2 starts the epoch after.
    REQUIRE(res.switch_epoch == 3);
    REQUIRE(res.history.at(2).stage == 1);
    REQUIRE(res.history.at(3).stage == 2);
    for (const auto& row : res.history) REQUIRE(std::isfinite(row.train_loss));
  }

  SECTION("stage1-only ablation never switches") {
    TrainConfig tc1 = tc;
    tc1.stage1_only = true;
    ReconstructorNetwork<float> net(arch, 88);
    const TrainResult res = train_reconstructor(net, train, val, cfg, tc1);
    REQUIRE(res.switch_epoch == -1);
    for (const auto& row : res.history) REQUIRE(row.stage == 1);
  }
}
