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

#include "csilab/rng.hpp"
#include "csilab/typeii.hpp"

using namespace csilab;
using Catch::Approx;

namespace {

PortIndexSet linear_ports(int n_rows, int n_cols, std::initializer_list<int> idx) {
  PortIndexSet set;
  set.n_rows = n_rows;
  set.n_cols = n_cols;
  for (int n : idx) set.ports.emplace_back(n / n_cols, n % n_cols);
  return set;
}

PortCoefficients random_coeffs(int p, Rng& rng) {
  PortCoefficients c;
  c.c.set_size(p);
  for (int i = 0; i < p; ++i) c.c(i) = cxd(rng.gaussian(), rng.gaussian());
  return c;
}

double wrap_pi(double a) {
  a = std::fmod(a + M_PI, 2 * M_PI);
  if (a < 0) a += 2 * M_PI;
  return a - M_PI;
}

}  // namespace

TEST_CASE("power selection picks the strongest ports in canonical order") {
  AngularDelayGrid g;
  g.g.zeros(4, 4);
  g.g(0, 0) = cxd(2, 0);
  g.g(1, 3) = cxd(1, 0);
  const PortIndexSet s = select_ports_by_power(g, 2);
  REQUIRE(s.ports == std::vector<std::pair<int, int>>{{0, 0}, {1, 3}});

  AngularDelayGrid flat;
  flat.g.ones(4, 4);
  const PortIndexSet t = select_ports_by_power(flat, 3);
  REQUIRE(t.ports == std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {0, 2}});

  REQUIRE_THROWS_AS(select_ports_by_power(g, 0), ConfigError);
  REQUIRE_THROWS_AS(select_ports_by_power(g, 17), ConfigError);
}

TEST_CASE("power selection matches an independent sort oracle") {
  Rng rng(31);
  for (int t = 0; t < 30; ++t) {
    AngularDelayGrid g;
    g.g.set_size(8, 4);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 4; ++j) g.g(i, j) = cxd(rng.gaussian(), rng.gaussian());
    const PortIndexSet s = select_ports_by_power(g, 5);
    // Oracle: independent flattening + sort by (power desc, index asc).
    std::vector<std::pair<double, int>> order;
    for (int n = 0; n < 32; ++n)
      order.push_back({-std::norm(g.g(n / 4, n % 4)), n});
    std::sort(order.begin(), order.end());
    for (int i = 0; i < 5; ++i) REQUIRE(s.linear_index(i) == order[i].second);
  }
}

TEST_CASE("port coefficient measurement") {
  const AngularBasis ab = build_angular_basis(2, 2, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(4);

  SECTION("aligned rank-1 channel gives the Parseval constant") {
    const ChannelMatrix h = ab.w_a.col(3) * db.w_d.col(2).t();
    const auto s = linear_ports(8, 4, {3 * 4 + 2});
    const PortCoefficients c = measure_port_coefficients(h, s, ab, db);
    REQUIRE(c.c(0).real() == Approx(4.0 * 4.0).epsilon(1e-12));
    REQUIRE(std::abs(c.c(0).imag()) < 1e-10);
  }

  SECTION("orthogonal port measures zero") {
    const ChannelMatrix h = ab.w_a.col(3) * db.w_d.col(2).t();
    const auto s = linear_ports(8, 4, {0});
    REQUIRE(std::abs(measure_port_coefficients(h, s, ab, db).c(0)) < 1e-10);
  }

  SECTION("two computation paths agree: trace form and scaled grid") {
    Rng rng(5);
    ChannelMatrix h(8, 4);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 4; ++j) h(i, j) = cxd(rng.gaussian(), rng.gaussian());
    const auto grid = to_angular_delay(h, ab, db);
    PortIndexSet all;
    all.n_rows = 8;
    all.n_cols = 4;
    for (int n = 0; n < 32; ++n) all.ports.emplace_back(n / 4, n % 4);
    const PortCoefficients c = measure_port_coefficients(h, all, ab, db);
    for (int p = 0; p < 32; ++p) {
      // Trace form Tr(H * Phi^H), computed independently.
      const arma::cx_mat phi = ab.w_a.col(all.ports[p].first) *
                               db.w_d.col(all.ports[p].second).t();
      const cxd trace = arma::trace(h * phi.t());
      REQUIRE(std::abs(c.c(p) - trace) < 1e-9);
      // Scaled-grid form: c_p = G[p] * (N_h N_v M).
      const cxd scaled = grid.g(all.ports[p].first, all.ports[p].second) * 16.0;
      REQUIRE(std::abs(c.c(p) - scaled) < 1e-9);
    }
  }
}

TEST_CASE("quantizer basics") {
  const auto ports = linear_ports(8, 4, {0, 5, 16 + 3, 16 + 9});  // two per polarization

  SECTION("single nonzero coefficient") {
    PortCoefficients c;
    c.c.set_size(4);
    c.c.zeros();
    c.c(2) = cxd(0.3, -0.4);
    const FeedbackPayload p = quantize_feedback(c, ports, 5, 3, 4);
    REQUIRE(p.sci == 2);
    REQUIRE(p.wideband_idx == 31);  // no energy in the other polarization
    for (const auto& e : p.entries) REQUIRE(e.amp_idx == 7);
    const PortCoefficients d = dequantize_feedback(p, ports);
    REQUIRE(d.c(2) == cxd(1.0, 0.0));
    REQUIRE(std::abs(d.c(0)) == 0.0);
  }

  SECTION("on-grid point round-trips exactly") {
    PortCoefficients c;
    c.c.set_size(4);
    c.c(0) = cxd(1.0, 0.0);
    c.c(1) = std::polar(0.5, 2.0 * M_PI * 3.0 / 16.0);
    c.c(2) = cxd(0.0, 0.0);
    c.c(3) = cxd(0.0, 0.0);
    const FeedbackPayload p = quantize_feedback(c, ports, 5, 3, 4);
    REQUIRE(p.sci == 0);
    const PortCoefficients d = dequantize_feedback(p, ports);
    REQUIRE(std::abs(d.c(0) - c.c(0)) < 1e-15);
    REQUIRE(std::abs(d.c(1) - c.c(1)) < 1e-15);
    REQUIRE(std::abs(d.c(2)) == 0.0);
  }

  SECTION("all-zero coefficients rejected") {
    PortCoefficients c;
    c.c.set_size(4);
    c.c.zeros();
    REQUIRE_THROWS_AS(quantize_feedback(c, ports, 5, 3, 4), NumericalError);
  }

  SECTION("table lookups") {
    REQUIRE(amp_value(2, 3) == Approx(0.5).epsilon(1e-15));
    REQUIRE(amp_value(7, 3) == 0.0);
    REQUIRE(phase_value(4, 4) == Approx(M_PI / 2.0).epsilon(1e-15));
    REQUIRE(wideband_value(0, 5) == 1.0);
    REQUIRE(wideband_value(31, 5) == 0.0);
    // amp_idx=2, phase_idx=4 in the stronger polarization: 0.5j.
    const cxd v = std::polar(amp_value(2, 3), phase_value(4, 4));
    REQUIRE(std::abs(v - cxd(0.0, 0.5)) < 1e-15);
  }
}

TEST_CASE("quantizer error bounds and idempotence on random inputs") {
  Rng rng(41);
  PortIndexSet ports;
  ports.n_rows = 32;
  ports.n_cols = 8;
  for (int i = 0; i < 32; ++i) ports.ports.emplace_back(i, i % 8);

  for (int t = 0; t < 2000; ++t) {
    const PortCoefficients c = random_coeffs(32, rng);
    const FeedbackPayload p1 = quantize_feedback(c, ports, 5, 3, 4);
    const PortCoefficients d = dequantize_feedback(p1, ports);

    // Projection: quantize(dequantize(quantize(c))) == quantize(c).
    REQUIRE(quantize_feedback(d, ports, 5, 3, 4) == p1);

    // Every dequantized value lies in the finite codebook product set.
    const double rhat = wideband_value(p1.wideband_idx, 5);
    const int pol_sci = ports.polarization(p1.sci);
    int e = 0;
    for (int q = 0; q < 32; ++q) {
      if (q == p1.sci) continue;
      const auto& entry = p1.entries[e++];
      const double ref = ports.polarization(q) == pol_sci ? 1.0 : rhat;
      REQUIRE(std::abs(d.c(q)) ==
              Approx(ref * amp_value(entry.amp_idx, 3)).margin(1e-15));
    }

    // Bounds vs the strongest original coefficient.
    int s0 = 0;
    for (int q = 1; q < 32; ++q)
      if (std::abs(c.c(q)) > std::abs(c.c(s0))) s0 = q;
    e = 0;
    for (int q = 0; q < 32; ++q) {
      const cxd rel_true = c.c(q) / c.c(s0);
      if (q != p1.sci) ++e;
      if (q == p1.sci || std::abs(d.c(q)) == 0.0) {
        if (std::abs(d.c(q)) == 0.0 && std::abs(rel_true) > 0) {
          const double ref = ports.polarization(q) == pol_sci ? 1.0 : rhat;
          if (ref > 0)  // zero code only on underflow past the smallest code
            REQUIRE(-2.0 * std::log2(std::abs(rel_true) / ref) >= 6.5 - 1e-9);
        }
        continue;
      }
      REQUIRE(std::abs(wrap_pi(std::arg(d.c(q)) - std::arg(rel_true))) <=
              M_PI / 16.0 + 1e-9);
      const double ref = ports.polarization(q) == pol_sci ? 1.0 : rhat;
      const double log_err =
          std::abs(std::log2(std::abs(d.c(q)) / ref) - std::log2(std::abs(rel_true) / ref));
      REQUIRE(log_err <= 0.25 + 1e-9);
    }
  }
}

TEST_CASE("payload serialization is bit-exact") {
  SECTION("worked example") {
    // P=4, Q_w=5, Q_na=3, Q_np=4: [sci:2][wb:5][3 x (amp:3, phase:4)] = 28
    // bits -> 4 bytes with 4 zero padding bits.
    FeedbackPayload p;
    p.num_ports = 4;
    p.q_wideband = 5;
    p.q_amp = 3;
    p.q_phase = 4;
    p.sci = 2;              // 10
    p.wideband_idx = 0x15;  // 10101
    p.entries = {{0x3, 0x9}, {0x0, 0xF}, {0x7, 0x1}};
    // Bit stream: 10 10101 011 1001 000 1111 111 0001 0000(pad)
    // = 10101010 11100100 01111111 00010000
    const std::vector<uint8_t> expected = {0xAA, 0xE4, 0x7F, 0x10};
    REQUIRE(p.serialize() == expected);
    REQUIRE(p.total_bits() == 28);
    REQUIRE(FeedbackPayload::deserialize(expected, 4, 5, 3, 4) == p);
  }

  SECTION("random payload round trip and bit budget") {
    Rng rng(51);
    PortIndexSet ports;
    ports.n_rows = 32;
    ports.n_cols = 8;
    for (int i = 0; i < 32; ++i) ports.ports.emplace_back(i, i % 8);
    for (int t = 0; t < 200; ++t) {
      const auto pay = quantize_feedback(random_coeffs(32, rng), ports, 5, 3, 4);
      const auto bytes = pay.serialize();
      REQUIRE(pay.total_bits() == 227);
      REQUIRE(bytes.size() == 29);  // ceil(227 / 8)
      REQUIRE(static_cast<int>(bytes.size()) * 8 <
              5 + 5 + 31 * 7 + 8);  // never exceeds the budget plus padding
      REQUIRE(FeedbackPayload::deserialize(bytes, 32, 5, 3, 4) == pay);
    }
  }

  SECTION("malformed payloads rejected") {
    REQUIRE_THROWS_AS(FeedbackPayload::deserialize({0x00}, 32, 5, 3, 4), FormatError);
  }
}

TEST_CASE("reconstruction") {
  const AngularBasis ab = build_angular_basis(2, 2, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(4);

  SECTION("single unit port reproduces its basis outer product") {
    const auto ports = linear_ports(8, 4, {3 * 4 + 2});
    PortCoefficients c;
    c.c.set_size(1);
    c.c(0) = cxd(1, 0);
    const ChannelMatrix h = reconstruct_typeii(c, ports, ab, db);
    const ChannelMatrix expect = ab.w_a.col(3) * db.w_d.col(2).t();
    REQUIRE(arma::norm(h - expect, "fro") < 1e-12);
  }

  SECTION("summation form equals the sparse-grid inverse transform") {
    Rng rng(61);
    const PortCoefficients c = random_coeffs(6, rng);
    const auto ports = linear_ports(8, 4, {0, 7, 12, 15, 21, 30});
    const ChannelMatrix h = reconstruct_typeii(c, ports, ab, db);
    ChannelMatrix sum(8, 4, arma::fill::zeros);
    for (int p = 0; p < 6; ++p)
      sum += c.c(p) * ab.w_a.col(ports.ports[p].first) *
             db.w_d.col(ports.ports[p].second).t();
    REQUIRE(arma::norm(h - sum, "fro") < 1e-10);
  }

  SECTION("all-port unquantized coefficients restore the channel direction") {
    Rng rng(62);
    ChannelMatrix h(8, 4);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 4; ++j) h(i, j) = cxd(rng.gaussian(), rng.gaussian());
    PortIndexSet all;
    all.n_rows = 8;
    all.n_cols = 4;
    for (int n = 0; n < 32; ++n) all.ports.emplace_back(n / 4, n % 4);
    const PortCoefficients c = measure_port_coefficients(h, all, ab, db);
    // sum_p Tr(H Phi_p^H) Phi_p = (N_h N_v M) H: completeness up to the
    // documented Parseval constant.
    const ChannelMatrix back = reconstruct_typeii(c, all, ab, db) / 16.0;
    REQUIRE(arma::norm(back - h, "fro") / arma::norm(h, "fro") < 1e-8);
  }

  SECTION("captured power fraction equals the relative reconstruction error") {
    Rng rng(63);
    ChannelMatrix h(8, 4);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 4; ++j) h(i, j) = cxd(rng.gaussian(), rng.gaussian());
    const auto grid = to_angular_delay(h, ab, db);
    const auto sel = select_ports_by_power(grid, 10);
    // Unquantized grid coefficients on the selected ports.
    PortCoefficients c;
    c.c.set_size(10);
    for (int p = 0; p < 10; ++p)
      c.c(p) = grid.g(sel.ports[p].first, sel.ports[p].second);
    const ChannelMatrix approx_h = reconstruct_typeii(c, sel, ab, db);
    double captured = 0;
    for (int p = 0; p < 10; ++p)
      captured += std::norm(c.c(p));
    const double fraction = captured / std::pow(arma::norm(grid.g, "fro"), 2);
    const double rel_err2 =
        std::pow(arma::norm(approx_h - h, "fro") / arma::norm(h, "fro"), 2);
    REQUIRE(rel_err2 == Approx(1.0 - fraction).margin(1e-10));
  }
}

TEST_CASE("P_N monotone in nested power-ordered selections") {
  Rng rng(71);
  AngularDelayGrid g;
  g.g.set_size(8, 4);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 4; ++j) g.g(i, j) = cxd(rng.gaussian(), rng.gaussian());
  const double total = std::pow(arma::norm(g.g, "fro"), 2);
  double prev = 0.0;
  for (int p = 1; p <= 32; ++p) {
    const auto sel = select_ports_by_power(g, p);
    REQUIRE(sel.size() == p);
    sel.validate();
    double captured = 0;
    for (const auto& [a, d] : sel.ports) captured += std::norm(g.g(a, d));
    const double pn = captured / total;
    REQUIRE(pn >= prev - 1e-15);
    prev = pn;
  }
  REQUIRE(prev == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("codebook pipeline") {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 2;
  cfg.num_subbands = 4;
  cfg.num_ues = 2;
  cfg.num_ports = 6;
  const Drop drop = make_drop(cfg, 5, 0, {5.0});
  const AngularBasis ab = build_angular_basis(2, 2, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(4);

  std::vector<PortIndexSet> sels;
  std::vector<std::pair<int, int>> rots;
  for (const auto& ue : drop.ues) {
    sels.push_back(
        select_ports_by_power(to_angular_delay(ue.h_ul_noisy[0], ab, db), cfg.num_ports));
    rots.push_back({0, 0});
  }

  SECTION("bypass with all ports reproduces the channel") {
    std::vector<PortIndexSet> all_sel;
    for (size_t k = 0; k < drop.ues.size(); ++k) {
      PortIndexSet all;
      all.n_rows = 8;
      all.n_cols = 4;
      for (int n = 0; n < 32; ++n) all.ports.emplace_back(n / 4, n % 4);
      all_sel.push_back(all);
    }
    PipelineOptions opt;
    opt.bypass_quantization = true;
    const auto res = run_codebook_pipeline(drop, cfg, all_sel, rots, opt);
    for (size_t k = 0; k < res.size(); ++k) {
      REQUIRE(res[k].ok);
      REQUIRE(arma::norm(res[k].h_hat - drop.ues[k].h_dl, "fro") /
                  arma::norm(drop.ues[k].h_dl, "fro") <
              1e-8);
    }
  }

  SECTION("quantized pipeline produces valid reports") {
    PipelineOptions opt;
    const auto res = run_codebook_pipeline(drop, cfg, sels, rots, opt);
    for (const auto& r : res) {
      REQUIRE(r.ok);
      REQUIRE(r.payload.total_bits() == 3 + 5 + 5 * 7);  // ceil(log2 6)=3
      REQUIRE(r.h_hat.is_finite());
    }
  }

  SECTION("zero channel skips the UE with an error surface") {
    Drop degenerate = drop;
    degenerate.ues[1].h_dl.zeros();
    PipelineOptions opt;
    const auto res = run_codebook_pipeline(degenerate, cfg, sels, rots, opt);
    REQUIRE(res[0].ok);
    REQUIRE_FALSE(res[1].ok);
    REQUIRE_FALSE(res[1].error.empty());
  }
}
