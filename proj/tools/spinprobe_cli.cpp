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


// spinprobe command line: run, validate, list-experiments, rerun.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "spinprobe/harness/config.hpp"
#include "spinprobe/harness/pipelines.hpp"

namespace sh = spinprobe::harness;

namespace {

void apply_workers(unsigned workers) {
  if (workers > 0) spinprobe::set_worker_count(workers);
}

void report(const sh::RunOutcome& r) {
  std::cout << "manifest: " << r.manifest_path.string() << '\n';
  for (const auto& s : r.manifest.stages) {
    std::cout << "stage " << s.name << ": " << s.status << " (" << s.wall_seconds << " s)\n";
    for (const auto& n : s.notes) std::cout << "  note: " << n << '\n';
  }
  for (const auto& f : r.manifest.failures) std::cerr << "failure: " << f << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spinprobe: spin-qubit noise spectroscopy and benchmarking toolkit"};
  app.set_version_flag("--version", std::string(sh::kToolkitVersion));
  app.require_subcommand(1);

  unsigned workers = 0;
  std::string config_path, manifest_path, output;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "Config file (JSON)")->required();
  run->add_option("-o,--output", output, "Override the output directory");
  run->add_option("-w,--workers", workers, "Worker threads (also SPINPROBE_WORKERS)");

  auto* validate = app.add_subcommand("validate", "Check a config file without running it");
  validate->add_option("config", config_path, "Config file (JSON)")->required();

  app.add_subcommand("list-experiments", "List the supported experiment kinds");

  auto* rerun = app.add_subcommand("rerun", "Re-run a manifest and compare output checksums");
  rerun->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required();
  rerun->add_option("-o,--output", output, "Output directory (default: the original one)");
  rerun->add_option("-w,--workers", workers, "Worker threads (also SPINPROBE_WORKERS)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : sh::kExitConfig;
  }

  const std::optional<std::filesystem::path> out_dir =
      output.empty() ? std::nullopt : std::optional<std::filesystem::path>(output);
  try {
    if (app.got_subcommand("list-experiments")) {
      for (const auto& k : sh::kKinds) std::printf("%-20s %s\n", k.name, k.summary);
      return sh::kExitOk;
    }
    if (app.got_subcommand("validate")) {
      const auto cfg = sh::load_config(config_path);
      std::cout << "ok: " << sh::to_string(cfg.kind) << ", seed " << cfg.seed << '\n';
      return sh::kExitOk;
    }
    apply_workers(workers);
    if (app.got_subcommand("run")) {
      const auto cfg = sh::load_config(config_path);
      const auto r = sh::run(cfg, out_dir);
      report(r);
      return r.exit_code;
    }
    const auto r = sh::rerun(manifest_path, out_dir);
    report(r.run);
    for (const auto& f : r.mismatches) std::cerr << "checksum mismatch: " << f << '\n';
    if (!r.mismatches.empty()) return sh::kExitOther;
    std::cout << "all " << r.run.manifest.outputs.size() << " outputs reproduced bit-identically\n";
    return r.run.exit_code;
  } catch (const sh::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return sh::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sh::kExitOther;
  }
}
