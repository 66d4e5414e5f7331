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

#include "csilab/dataset.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace csilab {

namespace {

// CRC-32 (IEEE 802.3 polynomial, reflected).
const uint32_t* crc_table() {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  return table;
}

class ByteSink {
 public:
  explicit ByteSink(std::ofstream& os) : os_(os) {}
  void raw(const void* data, size_t len) {
    os_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
  }
  void checked(const void* data, size_t len) {
    raw(data, len);
    const uint8_t* p = static_cast<const uint8_t*>(data);
    crc_ = ~crc_;
    const uint32_t* t = crc_table();
    for (size_t i = 0; i < len; ++i) crc_ = t[(crc_ ^ p[i]) & 0xFF] ^ (crc_ >> 8);
    crc_ = ~crc_;
  }
  template <typename T>
  void put(T v) {
    checked(&v, sizeof(T));
  }
  uint32_t crc() const { return crc_; }

 private:
  std::ofstream& os_;
  uint32_t crc_ = 0;
};

class ByteSource {
 public:
  ByteSource(const std::vector<uint8_t>& b, size_t pos) : bytes_(b), pos_(pos) {}
  void raw(void* out, size_t len) {
    if (pos_ + len > bytes_.size()) throw FormatError("dataset: truncated file");
    std::memcpy(out, bytes_.data() + pos_, len);
    pos_ += len;
  }
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  size_t pos() const { return pos_; }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_;
};

void write_matrix(ByteSink& sink, const ChannelMatrix& h) {
  std::vector<float> buf(2 * h.n_rows * h.n_cols);
  size_t o = 0;
  for (arma::uword i = 0; i < h.n_rows; ++i)
    for (arma::uword j = 0; j < h.n_cols; ++j) {
      buf[o++] = static_cast<float>(h(i, j).real());
      buf[o++] = static_cast<float>(h(i, j).imag());
    }
  sink.checked(buf.data(), buf.size() * sizeof(float));
}

ChannelMatrix read_matrix(ByteSource& src, int n_rows, int n_cols) {
  std::vector<float> buf(2 * static_cast<size_t>(n_rows) * n_cols);
  src.raw(buf.data(), buf.size() * sizeof(float));
  ChannelMatrix h(n_rows, n_cols);
  size_t o = 0;
  for (int i = 0; i < n_rows; ++i)
    for (int j = 0; j < n_cols; ++j) {
      h(i, j) = cxd(buf[o], buf[o + 1]);
      o += 2;
    }
  return h;
}

void write_geometry(ByteSink& sink, const UEGeometry& g) {
  sink.put<double>(g.distance_m);
  sink.put<double>(g.azimuth_rad);
  sink.put<double>(g.height_m);
  sink.put<uint8_t>(g.is_los ? 1 : 0);
  sink.put<uint32_t>(static_cast<uint32_t>(g.clusters.size()));
  for (const auto& c : g.clusters) {
    sink.put<double>(c.delay_s);
    sink.put<double>(c.power);
    sink.put<double>(c.mean_azimuth_rad);
    sink.put<double>(c.mean_zenith_rad);
    sink.put<uint8_t>(c.specular ? 1 : 0);
    sink.put<uint32_t>(static_cast<uint32_t>(c.rays.size()));
    for (const auto& r : c.rays) {
      sink.put<double>(r.delay_offset_s);
      sink.put<double>(r.azimuth_offset_rad);
      sink.put<double>(r.zenith_offset_rad);
      for (int b = 0; b < 2; ++b) sink.put<double>(r.phase_ul[b]);
      for (int b = 0; b < 2; ++b) sink.put<double>(r.phase_dl[b]);
    }
  }
}

UEGeometry read_geometry(ByteSource& src) {
  UEGeometry g;
  g.distance_m = src.get<double>();
  g.azimuth_rad = src.get<double>();
  g.height_m = src.get<double>();
  g.is_los = src.get<uint8_t>() != 0;
  const uint32_t nc = src.get<uint32_t>();
  g.clusters.resize(nc);
  for (auto& c : g.clusters) {
    c.delay_s = src.get<double>();
    c.power = src.get<double>();
    c.mean_azimuth_rad = src.get<double>();
    c.mean_zenith_rad = src.get<double>();
    c.specular = src.get<uint8_t>() != 0;
    const uint32_t nr = src.get<uint32_t>();
    c.rays.resize(nr);
    for (auto& r : c.rays) {
      r.delay_offset_s = src.get<double>();
      r.azimuth_offset_rad = src.get<double>();
      r.zenith_offset_rad = src.get<double>();
      for (int b = 0; b < 2; ++b) r.phase_ul[b] = src.get<double>();
      for (int b = 0; b < 2; ++b) r.phase_dl[b] = src.get<double>();
    }
  }
  return g;
}

std::string manifest_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["scenario"] = nlohmann::json::parse(m.scenario.to_json_text());
  j["seed"] = m.seed;
  j["num_drops"] = m.num_drops;
  j["snr_list_db"] = m.snr_list_db;
  j["layout"] = m.layout;
  return j.dump();
}

constexpr char kLayoutDoc[] =
    "per drop: u64 drop_id; per UE: H_ul_clean, H_ul_noisy per snr_list entry, H_dl "
    "(float32 little-endian interleaved re/im, antenna-major rows, subband columns); "
    "geometry sidecar";

}  // namespace

uint32_t crc32_bytes(const uint8_t* data, size_t len, uint32_t seed) {
  uint32_t crc = ~seed;
  const uint32_t* t = crc_table();
  for (size_t i = 0; i < len; ++i) crc = t[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

void write_dataset(const std::string& path, const ScenarioConfig& cfg, uint64_t seed,
                   uint64_t num_drops, const std::vector<double>& snr_list_db) {
  cfg.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("dataset: cannot open '" + path + "' for writing");

  DatasetManifest m;
  m.scenario = cfg;
  m.seed = seed;
  m.num_drops = num_drops;
  m.snr_list_db = snr_list_db;
  m.layout = kLayoutDoc;
  const std::string mj = manifest_json(m);

  ByteSink sink(os);
  sink.raw("CSIL", 4);
  const uint32_t version = 1;
  sink.raw(&version, sizeof(version));
  const uint32_t mlen = static_cast<uint32_t>(mj.size());
  sink.raw(&mlen, sizeof(mlen));
  sink.checked(mj.data(), mj.size());

  for (uint64_t d = 0; d < num_drops; ++d) {
    const Drop drop = make_drop(cfg, seed, d, snr_list_db);
    sink.put<uint64_t>(drop.drop_id);
    for (const auto& ue : drop.ues) {
      write_matrix(sink, ue.h_ul_clean);
      for (const auto& hn : ue.h_ul_noisy) write_matrix(sink, hn);
      write_matrix(sink, ue.h_dl);
      write_geometry(sink, ue.geometry);
    }
  }
  const uint32_t crc = sink.crc();
  sink.raw(&crc, sizeof(crc));
  os.close();
  if (!os) throw FormatError("dataset: write to '" + path + "' failed");
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dataset: cannot open '" + path + "'");
  is.seekg(0, std::ios::end);
  bytes_.resize(static_cast<size_t>(is.tellg()));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
  if (bytes_.size() < 16 || std::memcmp(bytes_.data(), "CSIL", 4) != 0)
    throw FormatError("dataset: bad magic in '" + path + "'");

  uint32_t version, mlen;
  std::memcpy(&version, bytes_.data() + 4, 4);
  std::memcpy(&mlen, bytes_.data() + 8, 4);
  if (version != 1) throw FormatError("dataset: unsupported version");
  if (12 + static_cast<size_t>(mlen) + 4 > bytes_.size())
    throw FormatError("dataset: truncated manifest");

  const std::string mj(reinterpret_cast<const char*>(bytes_.data()) + 12, mlen);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(mj);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: bad manifest JSON: ") + e.what());
  }
  manifest_.version = j.at("version").get<uint32_t>();
  manifest_.scenario = ScenarioConfig::from_json_text(j.at("scenario").dump());
  manifest_.seed = j.at("seed").get<uint64_t>();
  manifest_.num_drops = j.at("num_drops").get<uint64_t>();
  manifest_.snr_list_db = j.at("snr_list_db").get<std::vector<double>>();
  manifest_.layout = j.value("layout", "");

  // Verify the trailing CRC over manifest + records.
  uint32_t stored;
  std::memcpy(&stored, bytes_.data() + bytes_.size() - 4, 4);
  const uint32_t computed = crc32_bytes(bytes_.data() + 12, bytes_.size() - 16);
  if (stored != computed) throw FormatError("dataset: checksum mismatch");

  pos_ = 12 + mlen;
}

Drop DatasetReader::read_drop() {
  if (done()) throw FormatError("dataset: read past end");
  ByteSource src(bytes_, pos_);
  const ScenarioConfig& cfg = manifest_.scenario;
  Drop drop;
  drop.drop_id = src.get<uint64_t>();
  if (drop.drop_id != next_drop_) throw FormatError("dataset: drop_id out of order");
  drop.snr_list_db = manifest_.snr_list_db;
  drop.ues.resize(cfg.num_ues);
  for (auto& ue : drop.ues) {
    ue.h_ul_clean = read_matrix(src, cfg.n_tx(), cfg.num_subbands);
    ue.h_ul_noisy.clear();
    for (size_t s = 0; s < manifest_.snr_list_db.size(); ++s)
      ue.h_ul_noisy.push_back(read_matrix(src, cfg.n_tx(), cfg.num_subbands));
    ue.h_dl = read_matrix(src, cfg.n_tx(), cfg.num_subbands);
    ue.geometry = read_geometry(src);
  }
  pos_ = src.pos();
  ++next_drop_;
  return drop;
}

std::vector<Drop> DatasetReader::read_all() {
  std::vector<Drop> drops;
  drops.reserve(manifest_.num_drops - next_drop_);
  while (!done()) drops.push_back(read_drop());
  return drops;
}

}  // namespace csilab
