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
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "csilab/dataset.hpp"
#include "csilab/gradcheck.hpp"
#include "csilab/precoding.hpp"
#include "csilab/sweep.hpp"
#include "csilab/training.hpp"
#include "csilab/typeii.hpp"

using namespace csilab;

namespace {

TrainConfig preset_train_config(const std::string& preset) {
  TrainConfig tc;
  if (preset == "paper") {
    tc.channels = {256, 512, 512, 512, 512};
    tc.epochs = 200;
    tc.lr = 3e-6;
  } else if (preset != "desk") {
    throw ConfigError("unknown preset '" + preset + "'");
  }
  return tc;
}

void write_history_csv(const std::string& path, const std::vector<TrainResult>& results,
                       const std::vector<uint64_t>& seeds) {
  std::ofstream os(path);
  if (!os) throw FormatError("train: cannot open '" + path + "'");
  os << "run,seed,epoch,stage,train_loss,val_primary,val_secondary\n";
  char buf[256];
  for (size_t r = 0; r < results.size(); ++r)
    for (const auto& row : results[r].history) {
      std::snprintf(buf, sizeof(buf), "%zu,%llu,%d,%d,%.10g,%.10g,%.10g\n", r,
                    static_cast<unsigned long long>(seeds[r]), row.epoch, row.stage,
                    row.train_loss, row.val_primary, row.val_secondary);
      os << buf;
    }
  if (results.size() > 1) {
    // Aggregate over runs: mean and std of the best and final validation
    // metrics (both are reported since the aggregation convention differs
    // between studies).
    auto agg = [&](auto pick, const char* tag) {
      double s = 0, s2 = 0;
      for (const auto& res : results) {
        const double v = pick(res);
        s += v;
        s2 += v * v;
      }
      const double n = static_cast<double>(results.size());
      const double mean = s / n;
      const double sd = results.size() > 1
                            ? std::sqrt(std::max(0.0, (s2 - s * s / n) / (n - 1.0)))
                            : 0.0;
      std::snprintf(buf, sizeof(buf), "# aggregate %s: mean=%.10g std=%.10g over %zu runs\n",
                    tag, mean, sd, results.size());
      os << buf;
    };
    agg([](const TrainResult& r) { return r.history.empty() ? 0.0 : r.history.back().val_primary; },
        "final_val");
    agg([](const TrainResult& r) {
      double best = 0;
      for (const auto& row : r.history) best = std::max(best, row.val_primary);
      return best;
    }, "best_val");
  }
}

int cmd_gen(const std::string& config_path, const std::string& out, uint64_t seed,
            uint64_t drops, std::vector<double> snr_list) {
  ScenarioConfig cfg =
      config_path.empty() ? ScenarioConfig{} : ScenarioConfig::from_json_file(config_path);
  cfg.validate();
  if (snr_list.empty()) snr_list = {-5, 0, 5, 10, 15};
  write_dataset(out, cfg, seed, drops, snr_list);
  std::printf("wrote %llu drops to %s\n", static_cast<unsigned long long>(drops), out.c_str());
  return 0;
}

int cmd_eval(SweepSpec spec) {
  const auto rows = run_eval(spec);
  if (!spec.out_path.empty()) write_eval_csv(spec.out_path, spec, rows);
  for (const auto& r : rows)
    std::printf("%s snr=%g P=%d n=%llu P_N=%.4f±%.4f R_avg=%.3f±%.3f\n", r.mode.c_str(),
                r.snr_db, r.num_ports, static_cast<unsigned long long>(r.n_drops), r.pn_mean,
                r.pn_std, r.r_avg_mean, r.r_avg_std);
  return 0;
}

int cmd_train(const std::string& kind, const std::string& dataset,
              const std::string& val_dataset, uint64_t val_split, TrainConfig tc,
              const std::string& out, int runs, const std::optional<std::string>& resume) {
  DatasetReader reader(dataset);
  const ScenarioConfig cfg = reader.manifest().scenario;
  std::vector<Drop> train_drops = reader.read_all();
  std::vector<Drop> val_drops;
  if (!val_dataset.empty()) {
    DatasetReader vr(val_dataset);
    val_drops = vr.read_all();
  } else {
    if (val_split == 0 || val_split >= train_drops.size())
      throw ConfigError("train: --val-split must leave both training and validation drops");
    val_drops.assign(train_drops.end() - val_split, train_drops.end());
    train_drops.resize(train_drops.size() - val_split);
  }

  std::vector<TrainResult> results;
  std::vector<uint64_t> seeds;
  for (int r = 0; r < runs; ++r) {
    TrainConfig tcr = tc;
    tcr.seed = tc.seed + static_cast<uint64_t>(r);
    seeds.push_back(tcr.seed);
    const std::string ck = runs == 1 ? out : out + ".run" + std::to_string(r);
    NetArch arch{cfg.n_tx(), cfg.num_subbands, tcr.channels};
    if (kind == "selector") {
      SelectorNetwork<float> net(arch, tcr.seed ^ 0x5e1ec70fULL);
      results.push_back(train_selector(net, train_drops, val_drops, cfg, tcr, resume, ck));
    } else if (kind == "reconstructor") {
      ReconstructorNetwork<float> net(arch, tcr.seed ^ 0x2ec0257ULL);
      results.push_back(train_reconstructor(net, train_drops, val_drops, cfg, tcr, resume, ck));
    } else {
      throw ConfigError("train: kind must be selector or reconstructor");
    }
    const auto& res = results.back();
    std::printf("run %d (seed %llu): best epoch %d", r,
                static_cast<unsigned long long>(tcr.seed), res.best_epoch);
    if (!res.history.empty())
      std::printf(", final val %.4f", res.history.back().val_primary);
    if (res.switch_epoch >= 0) std::printf(", stage-2 from epoch %d", res.switch_epoch + 1);
    std::printf("\n");
  }
  write_history_csv(out + ".history.csv", results, seeds);
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  const auto results = run_neuro_gradcheck_suite(seed);
  bool all_ok = true;
  for (const auto& r : results) {
    const bool is_negative_control = r.name.rfind("negative-control", 0) == 0;
    const bool ok = is_negative_control ? !r.pass : r.pass;
    std::printf("%-40s max_rel_err=%.3e tol=%.1e %s\n", r.name.c_str(), r.max_rel_err,
                r.tolerance, ok ? "ok" : "FAIL");
    all_ok = all_ok && ok;
  }
  if (!all_ok) throw NumericalError("gradient check failed");
  return 0;
}

int cmd_payload(const std::string& dataset, uint64_t drop_idx, int ue, double snr_db,
                int num_ports) {
  DatasetReader reader(dataset);
  const ScenarioConfig cfg = reader.manifest().scenario;
  Drop drop;
  for (uint64_t d = 0; d <= drop_idx; ++d) {
    if (reader.done()) throw ConfigError("payload: drop index out of range");
    drop = reader.read_drop();
  }
  if (ue < 0 || ue >= static_cast<int>(drop.ues.size()))
    throw ConfigError("payload: UE index out of range");
  const auto& sample = drop.ues[ue];

  int snr_idx = 0;
  if (!std::isnan(snr_db)) {
    snr_idx = -1;
    for (size_t i = 0; i < drop.snr_list_db.size(); ++i)
      if (std::abs(drop.snr_list_db[i] - snr_db) < 1e-9) snr_idx = static_cast<int>(i);
    if (snr_idx < 0) throw ConfigError("payload: SNR not stored in dataset");
  }

  const int p = num_ports > 0 ? num_ports : cfg.num_ports;
  const auto [qh, qv] = select_rotation(sample.h_ul_noisy[snr_idx], cfg, p);
  const AngularBasis ab =
      build_angular_basis(cfg.n_h, cfg.n_v, cfg.oversample_h, cfg.oversample_v, qh, qv);
  const DelayBasis db = build_delay_basis(cfg.num_subbands);
  const auto ports =
      select_ports_by_power(to_angular_delay(sample.h_ul_noisy[snr_idx], ab, db), p);
  const auto coeff = measure_port_coefficients(sample.h_dl, ports, ab, db);
  const auto payload = quantize_feedback(coeff, ports, cfg.q_wideband, cfg.q_amp, cfg.q_phase);
  const auto bytes = payload.serialize();

  std::printf("drop %llu ue %d snr %g dB P=%d\n",
              static_cast<unsigned long long>(drop.drop_id), ue, drop.snr_list_db[snr_idx], p);
  std::printf("total_bits=%d sci=%d wideband_idx=%u\n", payload.total_bits(), payload.sci,
              payload.wideband_idx);
  std::printf("hex:");
  for (uint8_t b : bytes) std::printf(" %02x", b);
  std::printf("\n");

  const auto parsed = FeedbackPayload::deserialize(bytes, p, cfg.q_wideband, cfg.q_amp,
                                                   cfg.q_phase);
  if (!(parsed == payload)) throw FormatError("payload: round-trip mismatch");
  std::printf("round-trip: ok\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"csilab - Release-17 Type-II CSI feedback laboratory"};
  app.require_subcommand(1);

  std::string preset = "desk";
  app.add_option("--preset", preset, "Configuration preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a channel dataset");
  std::string gen_config, gen_out = "dataset.csil";
  uint64_t gen_seed = 1, gen_drops = 512;
  std::vector<double> gen_snrs;
  gen->add_option("--config", gen_config, "Scenario JSON config");
  gen->add_option("--out", gen_out, "Output dataset path");
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--drops", gen_drops, "Number of drops");
  gen->add_option("--snr", gen_snrs, "Stored uplink noise SNRs (dB)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a feedback mode over a dataset");
  std::string eval_mode = "typeii-baseline";
  SweepSpec spec;
  eval->add_option("--mode", eval_mode,
                   "typeii-baseline|perfect-ul-bound|dl-select|dl-recon|dl-both|perfect-csi-bound");
  eval->add_option("--dataset", spec.dataset_path, "Dataset path")->required();
  eval->add_option("--snr", spec.snr_list_db, "Uplink SNR axis (dB)");
  eval->add_option("--P", spec.p_list, "Selected port count axis");
  eval->add_option("--out", spec.out_path, "Output CSV path");
  eval->add_option("--selector", spec.selector_path, "Selector checkpoint");
  eval->add_option("--reconstructor", spec.reconstructor_path, "Reconstructor checkpoint");
  eval->add_option("--zf-ridge", spec.zf_ridge, "Diagonal loading for the ZF Gram solve");
  eval->add_option("--seed", spec.seed, "Provenance seed column");

  // train
  auto* train = app.add_subcommand("train", "Train the selector or reconstructor");
  std::string train_kind, train_dataset, train_val_dataset, train_config, train_out = "model.csck";
  uint64_t train_val_split = 512, train_seed = 0;
  int train_runs = 1, train_epochs = -1;
  std::string train_resume;
  train->add_option("--kind", train_kind, "selector|reconstructor")->required();
  train->add_option("--dataset", train_dataset, "Training dataset")->required();
  train->add_option("--val-dataset", train_val_dataset, "Validation dataset");
  train->add_option("--val-split", train_val_split,
                    "Validation drops taken from the end of --dataset");
  train->add_option("--config", train_config, "Training JSON config");
  train->add_option("--out", train_out, "Checkpoint output path");
  train->add_option("--runs", train_runs, "Independent runs with seed offsets");
  train->add_option("--seed", train_seed, "Training seed (overrides config)");
  train->add_option("--epochs", train_epochs, "Epoch count (overrides config)");
  train->add_option("--resume", train_resume, "Resume from checkpoint");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks for all ops");
  uint64_t gc_seed = 7;
  gradcheck->add_option("--seed", gc_seed, "Randomization seed");

  // payload
  auto* payload = app.add_subcommand("payload", "Hex dump of one UE's feedback payload");
  std::string pl_dataset;
  uint64_t pl_drop = 0;
  int pl_ue = 0, pl_ports = 0;
  double pl_snr = std::nan("");
  payload->add_option("--dataset", pl_dataset, "Dataset path")->required();
  payload->add_option("--drop", pl_drop, "Drop index");
  payload->add_option("--ue", pl_ue, "UE index");
  payload->add_option("--snr", pl_snr, "Uplink SNR selecting the stored noisy CSI");
  payload->add_option("--P", pl_ports, "Selected port count (default: scenario P)");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen(gen_config, gen_out, gen_seed, gen_drops, gen_snrs);
    if (eval->parsed()) {
      spec.mode = parse_eval_mode(eval_mode);
      if (spec.snr_list_db.empty()) spec.snr_list_db = {5.0};
      if (spec.p_list.empty()) spec.p_list = {32};
      return cmd_eval(spec);
    }
    if (train->parsed()) {
      TrainConfig tc = preset_train_config(preset);
      // Preset supplies defaults; the config file wins where it speaks.
      if (!train_config.empty()) tc = TrainConfig::from_json_file(train_config, tc);
      if (train_seed != 0) tc.seed = train_seed;
      if (train_epochs >= 0) tc.epochs = train_epochs;
      std::optional<std::string> resume;
      if (!train_resume.empty()) resume = train_resume;
      return cmd_train(train_kind, train_dataset, train_val_dataset, train_val_split, tc,
                       train_out, train_runs, resume);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
    if (payload->parsed()) return cmd_payload(pl_dataset, pl_drop, pl_ue, pl_snr, pl_ports);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
