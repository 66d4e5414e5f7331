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

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "csilab/dataset.hpp"
#include "csilab/dft_basis.hpp"
#include "csilab/precoding.hpp"
#include "csilab/sweep.hpp"
#include "csilab/training.hpp"
#include "csilab/typeii.hpp"

using namespace csilab;
using Catch::Approx;

namespace {

ScenarioConfig small_cfg() {
  ScenarioConfig cfg;
  cfg.n_h = 2;
  cfg.n_v = 1;
  cfg.num_subbands = 4;
  cfg.num_ues = 2;
  cfg.num_ports = 4;
  return cfg;
}

std::string tmp_path(const std::string& name) {
  return "harness_tmp_" + name;
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(is), {});
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("dataset generation is byte-deterministic") {
  const ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("a.csil"), cfg, 7, 4, {5.0, -5.0});
  write_dataset(tmp_path("b.csil"), cfg, 7, 4, {5.0, -5.0});
  REQUIRE(read_bytes(tmp_path("a.csil")) == read_bytes(tmp_path("b.csil")));
  write_dataset(tmp_path("c.csil"), cfg, 8, 4, {5.0, -5.0});
  REQUIRE(read_bytes(tmp_path("a.csil")) != read_bytes(tmp_path("c.csil")));
}

TEST_CASE("dataset manifest and payload round-trip") {
  const ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("d.csil"), cfg, 7, 3, {5.0});
  DatasetReader reader(tmp_path("d.csil"));
  REQUIRE(reader.manifest().num_drops == 3);
  REQUIRE(reader.manifest().seed == 7);
  REQUIRE(reader.manifest().snr_list_db == std::vector<double>{5.0});
  REQUIRE(reader.manifest().scenario.n_h == cfg.n_h);
  REQUIRE(reader.manifest().scenario.num_ports == cfg.num_ports);

  const auto drops = reader.read_all();
  REQUIRE(drops.size() == 3);
  for (size_t d = 0; d < drops.size(); ++d) {
    REQUIRE(drops[d].drop_id == d);
    // Stored float32 matrices match regeneration at float precision.
    const Drop fresh = make_drop(cfg, 7, d, {5.0});
    for (int k = 0; k < cfg.num_ues; ++k) {
      REQUIRE(drops[d].ues[k].h_dl.n_rows == static_cast<arma::uword>(cfg.n_tx()));
      REQUIRE(drops[d].ues[k].h_dl.n_cols == static_cast<arma::uword>(cfg.num_subbands));
      const double scale = arma::norm(fresh.ues[k].h_dl, "fro");
      REQUIRE(arma::norm(drops[d].ues[k].h_dl - fresh.ues[k].h_dl, "fro") / scale < 1e-6);
      REQUIRE(drops[d].ues[k].geometry.clusters.size() ==
              fresh.ues[k].geometry.clusters.size());
      REQUIRE(drops[d].ues[k].geometry.distance_m == fresh.ues[k].geometry.distance_m);
    }
  }
}

TEST_CASE("load audit: a 100-drop file is finite with documented shapes") {
  const ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("audit.csil"), cfg, 99, 100, {0.0});
  DatasetReader reader(tmp_path("audit.csil"));
  size_t n = 0;
  while (!reader.done()) {
    const Drop d = reader.read_drop();
    for (const auto& ue : d.ues) {
      REQUIRE(ue.h_ul_clean.is_finite());
      REQUIRE(ue.h_ul_noisy[0].is_finite());
      REQUIRE(ue.h_dl.is_finite());
      REQUIRE(ue.h_dl.n_rows == static_cast<arma::uword>(cfg.n_tx()));
    }
    ++n;
  }
  REQUIRE(n == 100);
}

TEST_CASE("corrupted dataset is rejected") {
  const ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("e.csil"), cfg, 7, 2, {5.0});
  auto bytes = read_bytes(tmp_path("e.csil"));
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream os(tmp_path("e.csil"), std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  os.close();
  REQUIRE_THROWS_AS(DatasetReader(tmp_path("e.csil")), FormatError);
}

TEST_CASE("format stability: the checked-in golden fixture stays readable") {
  DatasetReader reader(std::string(CSILAB_SOURCE_DIR) + "/tests/data/golden_v1.csil");
  REQUIRE(reader.manifest().version == 1);
  REQUIRE(reader.manifest().num_drops == 2);
  const auto drops = reader.read_all();
  REQUIRE(drops.size() == 2);
  REQUIRE(drops[0].ues[0].h_dl.is_finite());
}

TEST_CASE("eval sweep") {
  const ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("f.csil"), cfg, 11, 60, {5.0});

  SECTION("selecting every port captures all power") {
    SweepSpec spec;
    spec.mode = EvalMode::TypeiiBaseline;
    spec.dataset_path = tmp_path("f.csil");
    spec.snr_list_db = {5.0};
    spec.p_list = {cfg.n_tx() * cfg.num_subbands};
    const auto rows = run_eval(spec);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].pn_mean == Approx(1.0).epsilon(1e-9));
  }

  SECTION("perfect-CSI bound dominates the quantized baseline") {
    SweepSpec base;
    base.mode = EvalMode::TypeiiBaseline;
    base.dataset_path = tmp_path("f.csil");
    base.snr_list_db = {5.0};
    base.p_list = {4};
    const auto rb = run_eval(base);
    SweepSpec bound = base;
    bound.mode = EvalMode::PerfectCsiBound;
    const auto rp = run_eval(bound);
    REQUIRE(rp[0].r_avg_mean > rb[0].r_avg_mean);
    REQUIRE(rp[0].pn_mean == 1.0);
  }

  SECTION("baseline P_N matches an independent oracle on 10 drops") {
    write_dataset(tmp_path("g.csil"), cfg, 13, 10, {5.0});
    SweepSpec spec;
    spec.mode = EvalMode::TypeiiBaseline;
    spec.dataset_path = tmp_path("g.csil");
    spec.snr_list_db = {5.0};
    spec.p_list = {4};
    const auto rows = run_eval(spec);

    // Straight-line oracle: explicit DFT construction, transform, sort.
    DatasetReader reader(tmp_path("g.csil"));
    const auto drops = reader.read_all();
    double pn_sum = 0;
    for (const auto& drop : drops) {
      double drop_pn = 0;
      for (const auto& ue : drop.ues) {
        const int n_pol = cfg.n_h * cfg.n_v, m = cfg.num_subbands;
        arma::cx_mat d(n_pol, n_pol);
        for (int t1 = 0; t1 < cfg.n_h; ++t1)
          for (int t2 = 0; t2 < cfg.n_v; ++t2)
            for (int ih = 0; ih < cfg.n_h; ++ih)
              for (int iv = 0; iv < cfg.n_v; ++iv)
                d(ih * cfg.n_v + iv, t1 * cfg.n_v + t2) =
                    std::polar(1.0, 2 * M_PI * (t1 * ih / double(cfg.n_h) +
                                                t2 * iv / double(cfg.n_v)));
        arma::cx_mat wa(2 * n_pol, 2 * n_pol, arma::fill::zeros);
        wa.submat(0, 0, n_pol - 1, n_pol - 1) = d;
        wa.submat(n_pol, n_pol, 2 * n_pol - 1, 2 * n_pol - 1) = d;
        arma::cx_mat wd(m, m);
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < m; ++k) wd(i, k) = std::polar(1.0, 2 * M_PI * i * k / double(m));
        const arma::cx_mat gn = wa.t() * ue.h_ul_noisy[0] * wd / double(n_pol * m);
        const arma::cx_mat gd = wa.t() * ue.h_dl * wd / double(n_pol * m);
        std::vector<std::pair<double, int>> order;
        for (int n = 0; n < 2 * n_pol * m; ++n)
          order.push_back({-std::norm(gn(n / m, n % m)), n});
        std::sort(order.begin(), order.end());
        double cap = 0, total = 0;
        for (int n = 0; n < 2 * n_pol * m; ++n) total += std::norm(gd(n / m, n % m));
        for (int i = 0; i < 4; ++i)
          cap += std::norm(gd(order[i].second / m, order[i].second % m));
        drop_pn += cap / total;
      }
      pn_sum += drop_pn / cfg.num_ues;
    }
    REQUIRE(rows[0].pn_mean == Approx(pn_sum / drops.size()).epsilon(1e-12));
  }

  SECTION("modes requiring models demand checkpoints") {
    SweepSpec spec;
    spec.mode = EvalMode::DlSelect;
    spec.dataset_path = tmp_path("f.csil");
    REQUIRE_THROWS_AS(spec.validate(), ConfigError);
  }
}

TEST_CASE("eval CSV is byte-identical across runs and carries the manifest") {
  const ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("h.csil"), cfg, 17, 20, {5.0});
  const std::string cmd0 = std::string("OPENBLAS_NUM_THREADS=1 ") + CSILAB_BIN +
                           " eval --dataset " + tmp_path("h.csil") +
                           " --mode typeii-baseline --snr 5 --P 4 --seed 17 --out ";
  REQUIRE(std::system((cmd0 + tmp_path("r1.csv") + " > /dev/null").c_str()) == 0);
  REQUIRE(std::system((cmd0 + tmp_path("r2.csv") + " > /dev/null").c_str()) == 0);
  const auto csv1 = read_text(tmp_path("r1.csv"));
  REQUIRE(csv1 == read_text(tmp_path("r2.csv")));
  REQUIRE(csv1.rfind("# {", 0) == 0);  // JSON manifest comment line
  REQUIRE(csv1.find("mode,snr_db,P,n_drops,P_N_mean,P_N_std,R_avg_mean,R_avg_std,seed") !=
          std::string::npos);
}

TEST_CASE("payload tool dumps 227 bits for the full-scale configuration") {
  ScenarioConfig cfg;  // Table-1 scale
  write_dataset(tmp_path("i.csil"), cfg, 23, 2, {5.0});
  const std::string out = tmp_path("payload.txt");
  const std::string cmd = std::string(CSILAB_BIN) + " payload --dataset " + tmp_path("i.csil") +
                          " --drop 1 --ue 2 --snr 5 > " + out;
  REQUIRE(std::system(cmd.c_str()) == 0);
  const std::string text = read_text(out);
  REQUIRE(text.find("total_bits=227") != std::string::npos);
  REQUIRE(text.find("round-trip: ok") != std::string::npos);

  // SCI field: strongest dequantized coefficient, consistent with the
  // strongest measured coefficient up to codebook aliasing.
  DatasetReader reader(tmp_path("i.csil"));
  reader.read_drop();
  const Drop drop = reader.read_drop();
  const AngularBasis ab = build_angular_basis(cfg.n_h, cfg.n_v, 1, 1, 0, 0);
  const DelayBasis db = build_delay_basis(cfg.num_subbands);
  const auto ports = select_ports_by_power(
      to_angular_delay(drop.ues[2].h_ul_noisy[0], ab, db), cfg.num_ports);
  const auto coeff = measure_port_coefficients(drop.ues[2].h_dl, ports, ab, db);
  const auto payload = quantize_feedback(coeff, ports, 5, 3, 4);
  const auto deq = dequantize_feedback(payload, ports);
  double best = 0;
  for (arma::uword p = 0; p < deq.c.n_elem; ++p) best = std::max(best, std::abs(deq.c(p)));
  REQUIRE(std::abs(deq.c(payload.sci)) == best);
  double cmax = 0;
  for (arma::uword p = 0; p < coeff.c.n_elem; ++p) cmax = std::max(cmax, std::abs(coeff.c(p)));
  REQUIRE(std::abs(coeff.c(payload.sci)) >= cmax * std::pow(2.0, -1.0 / 8.0) * (1 - 1e-9));

  std::ostringstream sci_line;
  sci_line << "sci=" << payload.sci;
  REQUIRE(text.find(sci_line.str()) != std::string::npos);
}

TEST_CASE("training CLI: history, resume, aggregate runs") {
  ScenarioConfig cfg = small_cfg();
  write_dataset(tmp_path("t.csil"), cfg, 29, 12, {5.0, -5.0});

  const std::string tc_json =
      R"({"epochs":4,"lr":0.001,"batch_size":8,"P":4,"snr_list":[5.0],)"
      R"("channels":[4,8,8,8,8],"seed":9,"val_snr_db":5.0})";
  std::ofstream(tmp_path("tc.json")) << tc_json;

  SECTION("history CSV has one row per epoch") {
    const std::string cmd = std::string(CSILAB_BIN) + " train --kind selector --dataset " +
                            tmp_path("t.csil") + " --val-split 4 --config " +
                            tmp_path("tc.json") + " --out " + tmp_path("m1.csck") +
                            " > /dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const std::string hist = read_text(tmp_path("m1.csck") + ".history.csv");
    REQUIRE(std::count(hist.begin(), hist.end(), '\n') == 5);  // header + 4 epochs
  }

  SECTION("resume reproduces the non-resumed trajectory") {
    // Full run: 4 epochs.
    std::string cmd = std::string(CSILAB_BIN) + " train --kind selector --dataset " +
                      tmp_path("t.csil") + " --val-split 4 --config " + tmp_path("tc.json") +
                      " --out " + tmp_path("full.csck") + " > /dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    // Two epochs, then resume for the remaining two.
    cmd = std::string(CSILAB_BIN) + " train --kind selector --dataset " + tmp_path("t.csil") +
          " --val-split 4 --config " + tmp_path("tc.json") + " --epochs 2 --out " +
          tmp_path("half.csck") + " > /dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    cmd = std::string(CSILAB_BIN) + " train --kind selector --dataset " + tmp_path("t.csil") +
          " --val-split 4 --config " + tmp_path("tc.json") + " --resume " +
          tmp_path("half.csck") + " --out " + tmp_path("resumed.csck") + " > /dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);

    // The resumed history covers epochs 3..4 and must match the tail of the
    // full history row for row.
    const std::string full = read_text(tmp_path("full.csck") + ".history.csv");
    const std::string resumed = read_text(tmp_path("resumed.csck") + ".history.csv");
    std::vector<std::string> full_rows, resumed_rows;
    std::stringstream fs(full), rs(resumed);
    std::string line;
    while (std::getline(fs, line)) full_rows.push_back(line);
    while (std::getline(rs, line)) resumed_rows.push_back(line);
    REQUIRE(resumed_rows.size() == 3);  // header + epochs 3, 4
    REQUIRE(full_rows.at(3) == resumed_rows.at(1));
    REQUIRE(full_rows.at(4) == resumed_rows.at(2));
  }

  SECTION("multiple runs aggregate") {
    const std::string cmd = std::string(CSILAB_BIN) + " train --kind selector --dataset " +
                            tmp_path("t.csil") + " --val-split 4 --config " +
                            tmp_path("tc.json") + " --epochs 1 --runs 3 --out " +
                            tmp_path("m3.csck") + " > /dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const std::string hist = read_text(tmp_path("m3.csck") + ".history.csv");
    REQUIRE(hist.find("# aggregate final_val") != std::string::npos);
    REQUIRE(hist.find("# aggregate best_val") != std::string::npos);
  }
}

TEST_CASE("CLI exit codes") {
  REQUIRE(std::system((std::string(CSILAB_BIN) +
                       " eval --dataset missing.csil --mode typeii-baseline 2> /dev/null")
                          .c_str()) != 0);
  const int code = WEXITSTATUS(std::system(
      (std::string(CSILAB_BIN) + " eval --dataset missing.csil 2> /dev/null").c_str()));
  REQUIRE(code == 2);
  const int bad_mode = WEXITSTATUS(std::system(
      (std::string(CSILAB_BIN) + " gen --config missing.json 2> /dev/null").c_str()));
  REQUIRE(bad_mode == 2);
}

TEST_CASE("checkpoint info round trip") {
  NetArch arch{8, 4, {4, 8, 8, 8, 8}};
  SelectorNetwork<float> net(arch, 3);
  save_checkpoint(tmp_path("ck.csck"), net, 123, 7, nullptr, nullptr);
  const CheckpointInfo info = read_checkpoint_info(tmp_path("ck.csck"));
  REQUIRE(info.architecture == "selector");
  REQUIRE(info.arch.channels == arch.channels);
  REQUIRE(info.seed == 123);
  REQUIRE(info.epoch == 7);
  SelectorNetwork<float> loaded = load_selector(tmp_path("ck.csck"));
  REQUIRE(loaded.fc_w.values == net.fc_w.values);
  REQUIRE(loaded.trunk.blocks[0].kernel.values == net.trunk.blocks[0].kernel.values);
}
