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

#include <cstdint>
#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/scenario.hpp"

namespace csilab {

// "CSIL" dataset container, little-endian throughout:
//   magic "CSIL" | u32 version | u32 manifest_len | manifest JSON |
//   drop records... | u32 CRC-32 (over manifest + records)
// Each drop record: u64 drop_id, then per UE: H_ul_clean,
// H_ul_noisy x |snr_list|, H_dl as float32 interleaved re/im pairs
// (row-major: antenna index outer, subband inner), then the geometry
// sidecar block. The manifest alone suffices to parse the records.
struct DatasetManifest {
  uint32_t version = 1;
  ScenarioConfig scenario;
  uint64_t seed = 0;
  uint64_t num_drops = 0;
  std::vector<double> snr_list_db;
  std::string layout;
};

uint32_t crc32_bytes(const uint8_t* data, size_t len, uint32_t seed = 0);

// Generates drops from (cfg, seed) and streams them to disk.
void write_dataset(const std::string& path, const ScenarioConfig& cfg, uint64_t seed,
                   uint64_t num_drops, const std::vector<double>& snr_list_db);

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);

  const DatasetManifest& manifest() const { return manifest_; }
  // Sequential access; drops are stored in strictly increasing drop_id
  // order starting at 0.
  Drop read_drop();
  bool done() const { return next_drop_ >= manifest_.num_drops; }
  // Reads the remaining drops and verifies the trailing checksum.
  std::vector<Drop> read_all();

 private:
  std::string path_;
  std::vector<uint8_t> bytes_;
  size_t pos_ = 0;
  uint64_t next_drop_ = 0;
  DatasetManifest manifest_;
};

}  // namespace csilab
