// Copyright 2026 The spinprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Run manifest: config echo, seeds, stage timings and a SHA-256 inventory
// of every output file.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace spinprobe::harness {

#ifndef SPINPROBE_VERSION
#define SPINPROBE_VERSION "0.0.0"
#endif

inline constexpr const char* kToolkitVersion = SPINPROBE_VERSION;

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("sha256: cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest init failed");
  }
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

struct StageRecord {
  std::string name;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::string status = "ok";  // ok, fit_failures, error
  std::vector<std::string> notes;
};

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  nlohmann::json config;
  std::string toolkit_version = kToolkitVersion;
  std::uint64_t master_seed = 0;
  std::vector<StageRecord> stages;
  std::vector<OutputFile> outputs;
  std::vector<std::string> failures;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config;
    j["toolkit_version"] = toolkit_version;
    j["master_seed"] = master_seed;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
      j["stages"].push_back({{"name", s.name},
                             {"seed", s.seed},
                             {"wall_seconds", s.wall_seconds},
                             {"status", s.status},
                             {"notes", s.notes}});
    }
    j["outputs"] = nlohmann::json::array();
    for (const auto& o : outputs) {
      j["outputs"].push_back({{"path", o.path}, {"sha256", o.sha256}, {"bytes", o.bytes}});
    }
    j["failures"] = failures;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config = j.at("config");
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& s : j.at("stages")) {
      m.stages.push_back({s.at("name").get<std::string>(), s.at("seed").get<std::uint64_t>(),
                          s.at("wall_seconds").get<double>(), s.at("status").get<std::string>(),
                          s.at("notes").get<std::vector<std::string>>()});
    }
    for (const auto& o : j.at("outputs")) {
      m.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>(),
                           o.at("bytes").get<std::uintmax_t>()});
    }
    m.failures = j.at("failures").get<std::vector<std::string>>();
    return m;
  }
};

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path.string());
  out << m.to_json().dump(2) << '\n';
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
  return RunManifest::from_json(nlohmann::json::parse(in));
}

// Files whose checksum differs between two inventories (or that exist in
// only one of them).
inline std::vector<std::string> inventory_mismatches(const std::vector<OutputFile>& a,
                                                     const std::vector<OutputFile>& b) {
  std::vector<std::string> out;
  for (const auto& x : a) {
    const auto it = std::find_if(b.begin(), b.end(), [&](const OutputFile& y) { return y.path == x.path; });
    if (it == b.end() || it->sha256 != x.sha256) out.push_back(x.path);
  }
  for (const auto& y : b) {
    const auto it = std::find_if(a.begin(), a.end(), [&](const OutputFile& x) { return x.path == y.path; });
    if (it == a.end()) out.push_back(y.path);
  }
  return out;
}

}  // namespace spinprobe::harness
