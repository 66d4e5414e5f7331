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

#include "csilab/training.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csilab/precoding.hpp"

namespace csilab {

// ---- TrainConfig ------------------------------------------------------------

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  return from_json_text(text, TrainConfig{});
}

TrainConfig TrainConfig::from_json_text(const std::string& text, const TrainConfig& base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
  }
  TrainConfig c = base;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
  if (j.contains("w_shortcut")) c.w_shortcut = j.at("w_shortcut").get<double>();
  if (j.contains("mu")) c.mu = j.at("mu").get<double>();
  if (j.contains("switch_delta")) c.switch_delta = j.at("switch_delta").get<double>();
  if (j.contains("switch_patience")) c.switch_patience = j.at("switch_patience").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("snr_list")) c.snr_list = j.at("snr_list").get<std::vector<double>>();
  if (j.contains("P")) c.num_ports = j.at("P").get<int>();
  if (j.contains("channels")) c.channels = j.at("channels").get<std::vector<int>>();
  if (j.contains("val_snr_db")) c.val_snr_db = j.at("val_snr_db").get<double>();
  if (j.contains("recon_input_snr_db"))
    c.recon_input_snr_db = j.at("recon_input_snr_db").get<double>();
  if (j.contains("stage1_only")) c.stage1_only = j.at("stage1_only").get<bool>();
  if (c.epochs < 0 || c.batch_size < 1 || !(c.lr > 0))
    throw ConfigError("train config: bad epochs/batch_size/lr");
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  return from_json_file(path, TrainConfig{});
}

TrainConfig TrainConfig::from_json_file(const std::string& path, const TrainConfig& base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("train config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str(), base);
}

std::string TrainConfig::to_json_text() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["gamma"] = gamma;
  j["w_shortcut"] = w_shortcut;
  j["mu"] = mu;
  j["switch_delta"] = switch_delta;
  j["switch_patience"] = switch_patience;
  j["seed"] = seed;
  j["snr_list"] = snr_list;
  j["P"] = num_ports;
  j["channels"] = channels;
  j["val_snr_db"] = val_snr_db;
  j["recon_input_snr_db"] = recon_input_snr_db;
  j["stage1_only"] = stage1_only;
  return j.dump(2);
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

struct NetRefs {
  std::string architecture;
  const NetArch* arch;
  double w_shortcut = 0.0;
  std::vector<ParamTensor<float>*> params;
  std::vector<std::pair<std::string, std::vector<float>*>> states;
};

NetRefs refs_of(SelectorNetwork<float>& net) {
  NetRefs r;
  r.architecture = "selector";
  r.arch = &net.arch;
  r.params = net.parameters();
  int i = 1;
  for (auto& b : net.trunk.blocks) {
    r.states.push_back({"bn" + std::to_string(i) + ".running_mean", &b.bn.running_mean});
    r.states.push_back({"bn" + std::to_string(i) + ".running_var", &b.bn.running_var});
    ++i;
  }
  return r;
}

NetRefs refs_of(ReconstructorNetwork<float>& net) {
  NetRefs r;
  r.architecture = "reconstructor";
  r.arch = &net.arch;
  r.w_shortcut = net.shortcut_weight;
  r.params = net.parameters();
  int i = 1;
  for (auto& b : net.trunk.blocks) {
    r.states.push_back({"bn" + std::to_string(i) + ".running_mean", &b.bn.running_mean});
    r.states.push_back({"bn" + std::to_string(i) + ".running_var", &b.bn.running_var});
    ++i;
  }
  return r;
}

std::string rng_state_hex(const Rng& rng) {
  char buf[80];
  const auto s = rng.state();
  std::snprintf(buf, sizeof(buf), "%016llx%016llx%016llx%016llx",
                static_cast<unsigned long long>(s[0]), static_cast<unsigned long long>(s[1]),
                static_cast<unsigned long long>(s[2]), static_cast<unsigned long long>(s[3]));
  return buf;
}

void rng_from_hex(const std::string& hex, Rng& rng) {
  if (hex.size() != 64) throw FormatError("checkpoint: bad RNG state");
  std::array<uint64_t, 4> s;
  for (int i = 0; i < 4; ++i) s[i] = std::stoull(hex.substr(i * 16, 16), nullptr, 16);
  rng.set_state(s);
}

void write_blob(std::ofstream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void read_blob(std::ifstream& is, std::vector<float>& v) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!is) throw FormatError("checkpoint: truncated blob section");
}

void save_checkpoint_impl(const std::string& path, const NetRefs& refs, uint64_t seed,
                          int epoch, const AdamState<float>* adam, const Rng* rng,
                          const std::vector<float>* best_params) {
  nlohmann::json j;
  j["format"] = "CSCK";
  j["version"] = 1;
  j["architecture"] = refs.architecture;
  j["n_tx"] = refs.arch->n_tx;
  j["m_sub"] = refs.arch->m_sub;
  j["channels"] = refs.arch->channels;
  j["w_shortcut"] = refs.w_shortcut;
  j["seed"] = seed;
  j["epoch"] = epoch;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : refs.params)
    tensors.push_back({{"name", p->name}, {"shape", p->shape}, {"kind", "param"}});
  for (const auto& [name, buf] : refs.states)
    tensors.push_back(
        {{"name", name}, {"shape", {static_cast<int>(buf->size())}}, {"kind", "state"}});
  j["tensors"] = tensors;
  j["has_adam"] = adam != nullptr;
  j["has_best"] = best_params != nullptr;
  if (adam) {
    j["adam"] = {{"lr", adam->lr},
                 {"beta1", adam->beta1},
                 {"beta2", adam->beta2},
                 {"epsilon", adam->epsilon},
                 {"step", adam->step}};
  }
  if (rng) j["rng"] = rng_state_hex(*rng);
  const std::string mj = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  os.write("CSCK", 4);
  const uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const uint32_t mlen = static_cast<uint32_t>(mj.size());
  os.write(reinterpret_cast<const char*>(&mlen), 4);
  os.write(mj.data(), static_cast<std::streamsize>(mj.size()));
  for (const auto* p : refs.params) write_blob(os, p->values);
  for (const auto& [name, buf] : refs.states) write_blob(os, *buf);
  if (adam) {
    for (const auto& m : adam->m) write_blob(os, m);
    for (const auto& v : adam->v) write_blob(os, v);
  }
  if (best_params) write_blob(os, *best_params);
  os.close();
  if (!os) throw FormatError("checkpoint: write failed");
}

nlohmann::json read_manifest(std::ifstream& is, const std::string& path) {
  char magic[4];
  uint32_t version, mlen;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&mlen), 4);
  if (!is || std::memcmp(magic, "CSCK", 4) != 0)
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  if (version != 1) throw FormatError("checkpoint: unsupported version");
  std::string mj(mlen, '\0');
  is.read(mj.data(), mlen);
  if (!is) throw FormatError("checkpoint: truncated manifest");
  try {
    return nlohmann::json::parse(mj);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
}

void load_checkpoint_impl(const std::string& path, NetRefs refs, AdamState<float>* adam,
                          Rng* rng, int* epoch, bool prefer_best = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  const nlohmann::json j = read_manifest(is, path);
  if (j.at("architecture").get<std::string>() != refs.architecture)
    throw FormatError("checkpoint: architecture mismatch");
  if (j.at("channels").get<std::vector<int>>() != refs.arch->channels ||
      j.at("n_tx").get<int>() != refs.arch->n_tx || j.at("m_sub").get<int>() != refs.arch->m_sub)
    throw FormatError("checkpoint: shape mismatch");
  for (auto* p : refs.params) read_blob(is, p->values);
  for (auto& [name, buf] : refs.states) read_blob(is, *buf);
  const bool has_adam = j.value("has_adam", false);
  if (adam) {
    if (!has_adam) throw FormatError("checkpoint: no optimizer state to resume from");
    adam->init(refs.params);
    adam->lr = j.at("adam").at("lr").get<double>();
    adam->beta1 = j.at("adam").at("beta1").get<double>();
    adam->beta2 = j.at("adam").at("beta2").get<double>();
    adam->epsilon = j.at("adam").at("epsilon").get<double>();
    adam->step = j.at("adam").at("step").get<uint64_t>();
    for (auto& m : adam->m) read_blob(is, m);
    for (auto& v : adam->v) read_blob(is, v);
  }
  if (rng) {
    if (!j.contains("rng")) throw FormatError("checkpoint: no RNG state to resume from");
    rng_from_hex(j.at("rng").get<std::string>(), *rng);
  }
  if (epoch) *epoch = j.at("epoch").get<int>();
  if (prefer_best && j.value("has_best", false)) {
    if (has_adam && !adam) {
      // Skip the optimizer blobs to reach the best-parameter snapshot.
      size_t skip = 0;
      for (const auto* p : refs.params) skip += p->numel();
      std::vector<float> junk(skip);
      read_blob(is, junk);
      read_blob(is, junk);
    }
    size_t total = 0;
    for (const auto* p : refs.params) total += p->numel();
    std::vector<float> best(total);
    read_blob(is, best);
    size_t o = 0;
    for (auto* p : refs.params) {
      std::copy(best.begin() + o, best.begin() + o + p->numel(), p->values.begin());
      o += p->numel();
    }
  }
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  const nlohmann::json j = read_manifest(is, path);
  CheckpointInfo info;
  info.architecture = j.at("architecture").get<std::string>();
  info.arch.n_tx = j.at("n_tx").get<int>();
  info.arch.m_sub = j.at("m_sub").get<int>();
  info.arch.channels = j.at("channels").get<std::vector<int>>();
  info.seed = j.at("seed").get<uint64_t>();
  info.epoch = j.at("epoch").get<int>();
  info.w_shortcut = j.value("w_shortcut", 0.05);
  return info;
}

void save_checkpoint(const std::string& path, SelectorNetwork<float>& net, uint64_t seed,
                     int epoch, const AdamState<float>* adam, const Rng* rng,
                     const std::vector<float>* best_params) {
  save_checkpoint_impl(path, refs_of(net), seed, epoch, adam, rng, best_params);
}
void save_checkpoint(const std::string& path, ReconstructorNetwork<float>& net, uint64_t seed,
                     int epoch, const AdamState<float>* adam, const Rng* rng,
                     const std::vector<float>* best_params) {
  save_checkpoint_impl(path, refs_of(net), seed, epoch, adam, rng, best_params);
}
void load_checkpoint(const std::string& path, SelectorNetwork<float>& net,
                     AdamState<float>* adam, Rng* rng, int* epoch) {
  load_checkpoint_impl(path, refs_of(net), adam, rng, epoch);
}
void load_checkpoint(const std::string& path, ReconstructorNetwork<float>& net,
                     AdamState<float>* adam, Rng* rng, int* epoch) {
  load_checkpoint_impl(path, refs_of(net), adam, rng, epoch);
}

SelectorNetwork<float> load_selector(const std::string& path) {
  const CheckpointInfo info = read_checkpoint_info(path);
  if (info.architecture != "selector") throw FormatError("not a selector checkpoint");
  SelectorNetwork<float> net(info.arch, 0);
  load_checkpoint_impl(path, refs_of(net), nullptr, nullptr, nullptr, true);
  return net;
}

ReconstructorNetwork<float> load_reconstructor(const std::string& path) {
  const CheckpointInfo info = read_checkpoint_info(path);
  if (info.architecture != "reconstructor") throw FormatError("not a reconstructor checkpoint");
  ReconstructorNetwork<float> net(info.arch, 0);
  net.shortcut_weight = static_cast<float>(info.w_shortcut);
  load_checkpoint_impl(path, refs_of(net), nullptr, nullptr, nullptr, true);
  return net;
}

// ---- shared helpers ----------------------------------------------------------

namespace {

int snr_index(const std::vector<double>& list, double snr_db) {
  for (size_t i = 0; i < list.size(); ++i)
    if (std::abs(list[i] - snr_db) < 1e-9) return static_cast<int>(i);
  throw ConfigError("training: SNR " + std::to_string(snr_db) +
                    " dB not present in the dataset's snr_list");
}

struct Bases {
  AngularBasis ab;
  DelayBasis db;
};

Bases make_bases(const ScenarioConfig& cfg) {
  // Training/evaluation pipelines use the unrotated basis (O_h = O_v = 1
  // in every preset); rotation search stays in the classical sweep path.
  return {build_angular_basis(cfg.n_h, cfg.n_v, 1, 1, 0, 0),
          build_delay_basis(cfg.num_subbands)};
}

std::vector<float> snapshot_params(const std::vector<ParamTensor<float>*>& params) {
  std::vector<float> out;
  for (const auto* p : params) out.insert(out.end(), p->values.begin(), p->values.end());
  return out;
}

void restore_params(const std::vector<ParamTensor<float>*>& params,
                    const std::vector<float>& snap) {
  size_t o = 0;
  for (auto* p : params) {
    std::copy(snap.begin() + o, snap.begin() + o + p->numel(), p->values.begin());
    o += p->numel();
  }
}

// Batched eval-mode selector forward; returns per-sample priorities.
std::vector<std::vector<float>> selector_priorities(SelectorNetwork<float>& net,
                                                    const std::vector<std::vector<float>>& inputs,
                                                    int batch_size) {
  const int l = net.arch.ports();
  std::vector<std::vector<float>> out;
  out.reserve(inputs.size());
  Rng dummy(0);
  for (size_t start = 0; start < inputs.size(); start += batch_size) {
    const int b = static_cast<int>(std::min<size_t>(batch_size, inputs.size() - start));
    std::vector<float> buf(static_cast<size_t>(b) * 2 * net.arch.n_tx * net.arch.m_sub);
    for (int i = 0; i < b; ++i)
      std::copy(inputs[start + i].begin(), inputs[start + i].end(),
                buf.begin() + static_cast<size_t>(i) * 2 * net.arch.n_tx * net.arch.m_sub);
    Tape<float> tape;
    auto x = tape.leaf({b, 2, net.arch.n_tx, net.arch.m_sub}, buf.data());
    auto o = net.forward(tape, x, false, dummy);
    const auto& val = tape.node(o).val;
    for (int i = 0; i < b; ++i)
      out.emplace_back(val.begin() + static_cast<size_t>(i) * l,
                       val.begin() + static_cast<size_t>(i + 1) * l);
  }
  return out;
}

}  // namespace

double validate_selector_pn(SelectorNetwork<float>& net, const std::vector<Drop>& val_drops,
                            const ScenarioConfig& cfg, int num_ports, double snr_db) {
  if (val_drops.empty()) return 0.0;
  const Bases bases = make_bases(cfg);
  const int snr_idx = snr_index(val_drops.front().snr_list_db, snr_db);
  std::vector<std::vector<float>> inputs;
  std::vector<AngularDelayGrid> dl_grids;
  for (const auto& drop : val_drops)
    for (const auto& ue : drop.ues) {
      inputs.push_back(
          preprocess_selector_input<float>(ue.h_ul_noisy[snr_idx], bases.ab, bases.db));
      dl_grids.push_back(to_angular_delay(ue.h_dl, bases.ab, bases.db));
    }
  const auto priorities = selector_priorities(net, inputs, 256);
  double pn = 0.0;
  for (size_t i = 0; i < priorities.size(); ++i) {
    const PortIndexSet sel =
        top_p_ports(priorities[i], cfg.n_tx(), cfg.num_subbands, num_ports);
    pn += normalized_port_power(dl_grids[i], sel);
  }
  return pn / static_cast<double>(priorities.size());
}

// ---- selector training ---------------------------------------------------------

TrainResult train_selector(SelectorNetwork<float>& net, const std::vector<Drop>& train_drops,
                           const std::vector<Drop>& val_drops, const ScenarioConfig& cfg,
                           const TrainConfig& tc, const std::optional<std::string>& resume_path,
                           const std::optional<std::string>& checkpoint_out) {
  if (train_drops.empty()) throw ConfigError("train_selector: empty training set");
  const Bases bases = make_bases(cfg);
  const int l = net.arch.ports();

  // SNR mix indices into the dataset's stored noisy realizations.
  std::vector<int> mix_idx;
  for (double snr : tc.snr_list)
    mix_idx.push_back(snr_index(train_drops.front().snr_list_db, snr));

  // Labels: top-P ports of the clean uplink grid.
  struct Sample {
    const UESample* ue;
    std::vector<float> label;
  };
  std::vector<Sample> samples;
  for (const auto& drop : train_drops)
    for (const auto& ue : drop.ues) {
      const auto grid = to_angular_delay(ue.h_ul_clean, bases.ab, bases.db);
      const auto ports = select_ports_by_power(grid, tc.num_ports);
      samples.push_back({&ue, make_port_label<float>(ports)});
    }

  auto params = net.parameters();
  AdamState<float> adam;
  adam.init(params);
  adam.lr = tc.lr;
  Rng rng(tc.seed);
  int start_epoch = 0;
  if (resume_path) load_checkpoint(*resume_path, net, &adam, &rng, &start_epoch);

  TrainResult result;
  double best_pn = -1.0;
  std::vector<float> best_snapshot;
  int best_epoch = 0;

  const size_t n = samples.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = start_epoch + 1; epoch <= tc.epochs; ++epoch) {
    // Fresh identity + Fisher-Yates: the epoch order is a pure function of
    // the stream state, which keeps resumed runs on the same trajectory.
    for (size_t i = 0; i < n; ++i) order[i] = i;
    for (size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    std::vector<int> snr_pick(n);
    for (size_t i = 0; i < n; ++i)
      snr_pick[i] = mix_idx[rng.below(mix_idx.size())];

    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < n; start += tc.batch_size) {
      const int b = static_cast<int>(std::min<size_t>(tc.batch_size, n - start));
      if (b < 2) continue;  // batchnorm needs at least two samples
      std::vector<float> buf(static_cast<size_t>(b) * 2 * net.arch.n_tx * net.arch.m_sub);
      std::vector<float> labels(static_cast<size_t>(b) * l);
      for (int i = 0; i < b; ++i) {
        const Sample& s = samples[order[start + i]];
        const auto planes = preprocess_selector_input<float>(
            s.ue->h_ul_noisy[snr_pick[start + i]], bases.ab, bases.db);
        std::copy(planes.begin(), planes.end(),
                  buf.begin() + static_cast<size_t>(i) * planes.size());
        std::copy(s.label.begin(), s.label.end(),
                  labels.begin() + static_cast<size_t>(i) * l);
      }
      for (auto* p : params) p->zero_grad();
      Tape<float> tape;
      auto x = tape.leaf({b, 2, net.arch.n_tx, net.arch.m_sub}, buf.data());
      auto o = net.forward(tape, x, true, rng);
      auto loss = tape.focal_bce_loss(o, labels, tc.num_ports, static_cast<float>(tc.gamma));
      tape.backward(loss);
      adam_step(params, adam);
      loss_sum += tape.node(loss).val[0];
      ++batches;
    }

    EpochRow row;
    row.epoch = epoch;
    row.stage = 1;
    row.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    row.val_primary =
        validate_selector_pn(net, val_drops, cfg, tc.num_ports, tc.val_snr_db);
    result.history.push_back(row);
    if (row.val_primary > best_pn) {
      best_pn = row.val_primary;
      best_snapshot = snapshot_params(params);
      best_epoch = epoch;
    }
  }
  result.best_epoch = best_epoch;
  if (checkpoint_out)
    save_checkpoint(*checkpoint_out, net, tc.seed, tc.epochs, &adam, &rng,
                    best_snapshot.empty() ? nullptr : &best_snapshot);
  // Model selection: best validation P_N, not the last epoch.
  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  return result;
}

// ---- reconstructor training ------------------------------------------------------

namespace {

struct ReconSample {
  std::vector<float> input;  // [2, N_Tx, M]
  std::vector<float> label;
  const ChannelMatrix* h_true;
};

// Type-II pipeline at the configured uplink SNR feeding the network input:
// noisy power selection, quantize, dequantize, place on ports, normalize.
std::vector<std::vector<ReconSample>> build_recon_samples(const std::vector<Drop>& drops,
                                                          const ScenarioConfig& cfg,
                                                          const TrainConfig& tc,
                                                          const Bases& bases) {
  const int snr_idx =
      drops.empty() ? 0 : snr_index(drops.front().snr_list_db, tc.recon_input_snr_db);
  std::vector<std::vector<ReconSample>> out;
  out.reserve(drops.size());
  for (const auto& drop : drops) {
    std::vector<ReconSample> ds;
    bool drop_ok = true;
    for (const auto& ue : drop.ues) {
      try {
        const auto noisy_grid = to_angular_delay(ue.h_ul_noisy[snr_idx], bases.ab, bases.db);
        const auto ports = select_ports_by_power(noisy_grid, tc.num_ports);
        const auto coeff = measure_port_coefficients(ue.h_dl, ports, bases.ab, bases.db);
        const auto payload =
            quantize_feedback(coeff, ports, cfg.q_wideband, cfg.q_amp, cfg.q_phase);
        const auto cbar = dequantize_feedback(payload, ports);
        ReconSample s;
        s.input = preprocess_reconstructor_input<float>(cbar, ports);
        s.label = normalized_grid_planes<float>(to_angular_delay(ue.h_dl, bases.ab, bases.db).g);
        s.h_true = &ue.h_dl;
        ds.push_back(std::move(s));
      } catch (const NumericalError&) {
        drop_ok = false;  // degenerate UE: skip the whole drop (joint loss)
        break;
      }
    }
    if (drop_ok) out.push_back(std::move(ds));
  }
  return out;
}

ReconValidation validate_recon_samples(ReconstructorNetwork<float>& net,
                                       const std::vector<std::vector<ReconSample>>& samples,
                                       const ScenarioConfig& cfg, const Bases& bases) {
  const double sigma2 = noise_power(cfg);
  const double p_tx = dbm_to_watt(cfg.p_tx_dbm);
  const int n_tx = net.arch.n_tx, m_sub = net.arch.m_sub;
  const int l = 2 * n_tx * m_sub;
  Rng dummy(0);

  ReconValidation v;
  size_t used = 0;
  for (const auto& ds : samples) {
    const int k = static_cast<int>(ds.size());
    std::vector<float> buf(static_cast<size_t>(k) * l);
    for (int i = 0; i < k; ++i)
      std::copy(ds[i].input.begin(), ds[i].input.end(), buf.begin() + static_cast<size_t>(i) * l);
    Tape<float> tape;
    auto x = tape.leaf({k, 2, n_tx, m_sub}, buf.data());
    auto out = net.forward(tape, x, false, dummy);
    const auto& val = tape.node(out).val;

    double mse = 0.0;
    std::vector<ChannelMatrix> h_hat(k);
    std::vector<ChannelMatrix> h_true;
    for (int i = 0; i < k; ++i) {
      GridMatrix g(n_tx, m_sub);
      const float* re = val.data() + static_cast<size_t>(i) * l;
      const float* im = re + static_cast<size_t>(n_tx) * m_sub;
      for (int r = 0; r < n_tx; ++r)
        for (int c = 0; c < m_sub; ++c) {
          g(r, c) = cxd(re[r * m_sub + c], im[r * m_sub + c]);
          const double dr = re[r * m_sub + c] - ds[i].label[r * m_sub + c];
          const double di = im[r * m_sub + c] - ds[i].label[n_tx * m_sub + r * m_sub + c];
          mse += dr * dr + di * di;
        }
      h_hat[i] = from_angular_delay({g}, bases.ab, bases.db);
      h_true.push_back(*ds[i].h_true);
    }
    try {
      const auto pset = zf_precode(h_hat, p_tx);
      v.r_avg += average_sum_rate(h_true, pset, sigma2).r_avg;
      v.mse += mse / (static_cast<double>(k) * n_tx * m_sub);
      ++used;
    } catch (const NumericalError&) {
      ++v.skipped;
    }
  }
  if (used > 0) {
    v.r_avg /= static_cast<double>(used);
    v.mse /= static_cast<double>(used);
  }
  return v;
}

}  // namespace

ReconValidation validate_reconstructor(ReconstructorNetwork<float>& net,
                                       const std::vector<Drop>& val_drops,
                                       const ScenarioConfig& cfg, const TrainConfig& tc) {
  const Bases bases = make_bases(cfg);
  const auto samples = build_recon_samples(val_drops, cfg, tc, bases);
  return validate_recon_samples(net, samples, cfg, bases);
}

TrainResult train_reconstructor(ReconstructorNetwork<float>& net,
                                const std::vector<Drop>& train_drops,
                                const std::vector<Drop>& val_drops, const ScenarioConfig& cfg,
                                const TrainConfig& tc,
                                const std::optional<std::string>& resume_path,
                                const std::optional<std::string>& checkpoint_out) {
  if (train_drops.empty()) throw ConfigError("train_reconstructor: empty training set");
  net.shortcut_weight = static_cast<float>(tc.w_shortcut);
  const Bases bases = make_bases(cfg);
  auto samples = build_recon_samples(train_drops, cfg, tc, bases);
  if (samples.empty()) throw ConfigError("train_reconstructor: no usable drops");

  const double sigma2 = noise_power(cfg);
  const double p_tx = dbm_to_watt(cfg.p_tx_dbm);
  const int n_tx = net.arch.n_tx, m_sub = net.arch.m_sub;
  const int l = 2 * n_tx * m_sub;

  auto params = net.parameters();
  AdamState<float> adam;
  adam.init(params);
  adam.lr = tc.lr;
  Rng rng(tc.seed);
  int start_epoch = 0;
  bool stage2 = false;
  StageSwitchRule rule(tc.switch_delta, tc.switch_patience);

  TrainResult result;
  if (resume_path) {
    load_checkpoint(*resume_path, net, &adam, &rng, &start_epoch);
    // Resumed runs re-derive the switch position from their own history;
    // the trainer below re-primes the rule with the resumed validation.
  }

  const auto val_samples = build_recon_samples(val_drops, cfg, tc, bases);

  // Baseline validation for the switch rule (epoch 0).
  rule.observe(validate_recon_samples(net, val_samples, cfg, bases).r_avg);

  double best_r = -1.0;
  std::vector<float> best_snapshot;
  int best_epoch = 0;

  const size_t nd = samples.size();
  std::vector<size_t> order(nd);
  for (size_t i = 0; i < nd; ++i) order[i] = i;
  const int k_per_drop = static_cast<int>(samples.front().size());
  const size_t batch_drops =
      std::max<size_t>(1, static_cast<size_t>(tc.batch_size) / std::max(1, k_per_drop));

  for (int epoch = start_epoch + 1; epoch <= tc.epochs; ++epoch) {
    for (size_t i = 0; i < nd; ++i) order[i] = i;
    for (size_t i = nd - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    double loss_sum = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < nd; start += batch_drops) {
      const size_t bd = std::min(batch_drops, nd - start);
      for (auto* p : params) p->zero_grad();

      double batch_loss = 0.0;
      size_t used_drops = 0;
      if (!stage2) {
        // One tape over the whole batch; the global MSE equals the mean of
        // the per-drop Eq.-17 losses.
        size_t total = 0;
        for (size_t d = 0; d < bd; ++d) total += samples[order[start + d]].size();
        if (total < 2) continue;
        std::vector<float> buf(total * l);
        std::vector<float> labels(total * l);
        size_t o = 0;
        for (size_t d = 0; d < bd; ++d)
          for (const auto& s : samples[order[start + d]]) {
            std::copy(s.input.begin(), s.input.end(), buf.begin() + o * l);
            std::copy(s.label.begin(), s.label.end(), labels.begin() + o * l);
            ++o;
          }
        Tape<float> tape;
        auto x = tape.leaf({static_cast<int>(total), 2, n_tx, m_sub}, buf.data());
        auto out = net.forward(tape, x, true, rng);
        auto flat = tape.reshape(out, {static_cast<int>(total), l});
        auto loss = tape.mse_to_const(flat, labels, static_cast<float>(total) * n_tx * m_sub);
        tape.backward(loss);
        batch_loss = tape.node(loss).val[0];
        used_drops = 1;  // gradients already averaged by the global denominator
      } else {
        for (size_t d = 0; d < bd; ++d) {
          const auto& ds = samples[order[start + d]];
          const int k = static_cast<int>(ds.size());
          std::vector<float> buf(static_cast<size_t>(k) * l);
          std::vector<std::vector<float>> labels;
          std::vector<ChannelMatrix> h_true;
          for (int i = 0; i < k; ++i) {
            std::copy(ds[i].input.begin(), ds[i].input.end(),
                      buf.begin() + static_cast<size_t>(i) * l);
            labels.push_back(ds[i].label);
            h_true.push_back(*ds[i].h_true);
          }
          try {
            Tape<float> tape;
            auto x = tape.leaf({k, 2, n_tx, m_sub}, buf.data());
            auto out = net.forward(tape, x, true, rng);
            auto flat = tape.reshape(out, {k, l});
            std::vector<Tape<float>::Id> grids;
            for (int i = 0; i < k; ++i)
              grids.push_back(tape.reshape(tape.slice_row(flat, i), {2, n_tx, m_sub}));
            auto loss = stage2_loss<float>(tape, grids, labels, h_true, bases.ab, bases.db,
                                           static_cast<float>(sigma2),
                                           static_cast<float>(tc.mu),
                                           static_cast<float>(p_tx));
            tape.backward(loss);
            batch_loss += tape.node(loss).val[0];
            ++used_drops;
          } catch (const NumericalError&) {
            ++result.zf_skipped;  // singular Gram: drop skipped, never regularized
          }
        }
        if (used_drops > 1) {
          const float inv = 1.0f / static_cast<float>(used_drops);
          for (auto* p : params)
            for (auto& g : p->grad) g *= inv;
          batch_loss /= static_cast<double>(used_drops);
        }
      }
      if (used_drops == 0) continue;
      adam_step(params, adam);
      loss_sum += batch_loss;
      ++steps;
    }

    const auto v = validate_recon_samples(net, val_samples, cfg, bases);
    EpochRow row;
    row.epoch = epoch;
    row.stage = stage2 ? 2 : 1;
    row.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    row.val_primary = v.r_avg;
    row.val_secondary = v.mse;
    result.history.push_back(row);

    if (!stage2 && !tc.stage1_only && rule.observe(v.r_avg)) {
      stage2 = true;
      result.switch_epoch = epoch;
    }
    if (v.r_avg > best_r) {
      best_r = v.r_avg;
      best_snapshot = snapshot_params(params);
      best_epoch = epoch;
    }
  }
  result.best_epoch = best_epoch;
  if (checkpoint_out)
    save_checkpoint(*checkpoint_out, net, tc.seed, tc.epochs, &adam, &rng,
                    best_snapshot.empty() ? nullptr : &best_snapshot);
  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  return result;
}

}  // namespace csilab
