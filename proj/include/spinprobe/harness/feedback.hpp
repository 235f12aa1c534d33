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

// Emulated ESR frequency tracking. Illustrative only: the probe is a
// two-point pi-pulse measurement at f_work +- delta and the servo moves the
// working frequency by the linearized detuning estimate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/errors.hpp"
#include "spinprobe/qubitsim.hpp"

namespace spinprobe::harness {

enum class DriftKind { kNone, kLinear, kRandomWalk };

struct DriftModel {
  DriftKind kind = DriftKind::kNone;
  double rate_hz_per_s = 0.0;       // linear
  double diffusion_hz2_per_s = 0.0; // random walk, Var grows as D t
};

struct FeedbackSettings {
  double duration_s = 60.0;
  double probe_interval_s = 1.0;
  double probe_offset_hz = 0.0;  // 0: half the Rabi frequency
  double gain = 1.0;
  std::size_t shots = 0;         // 0: expectation values
  double rabi_hz = 1.0 / 2.56e-6;
  qubit::ReadoutFidelity readout{1.0, 1.0};
  std::uint64_t seed = 1;
};

struct FeedbackSample {
  double t = 0.0;
  double f_true = 0.0;     // offset from the nominal frequency
  double f_tracked = 0.0;
  double correction = 0.0;
};

struct FeedbackReport {
  std::vector<FeedbackSample> log;
  double max_abs_residual = 0.0;
  double rms_residual = 0.0;
  double max_step = 0.0;   // largest single correction the servo can apply
  bool lost_lock = false;  // residual left the capture range
};

namespace detail {

inline double drift_at(const DriftModel& d, double t, double walk) {
  switch (d.kind) {
    case DriftKind::kNone: return 0.0;
    case DriftKind::kLinear: return d.rate_hz_per_s * t;
    case DriftKind::kRandomWalk: return walk;
  }
  return 0.0;
}

}  // namespace detail

inline FeedbackReport frequency_feedback(const DriftModel& drift, const FeedbackSettings& s) {
  if (!(s.probe_interval_s > 0.0) || !(s.duration_s > 0.0)) {
    throw PreconditionError("frequency_feedback: duration and probe interval must be > 0");
  }
  if (!(s.rabi_hz > 0.0)) throw PreconditionError("frequency_feedback: Rabi frequency must be > 0");
  const double delta = s.probe_offset_hz > 0.0 ? s.probe_offset_hz : 0.5 * s.rabi_hz;
  const double tau = 0.5 / s.rabi_hz;
  std::mt19937_64 rng(s.seed);
  auto probe = [&](double detuning) {
    const double p = qubit::rabi_probability(s.rabi_hz, detuning, tau);
    if (s.shots == 0) return qubit::measured_probability(p, s.readout);
    return qubit::measure(p, s.shots, s.readout, rng).estimated_p;
  };
  // Error e(D) = P(D - delta) - P(D + delta) for true-minus-working offset D.
  auto error_ideal = [&](double d) {
    return qubit::measured_probability(qubit::rabi_probability(s.rabi_hz, d - delta, tau), s.readout) -
           qubit::measured_probability(qubit::rabi_probability(s.rabi_hz, d + delta, tau), s.readout);
  };
  const double h = 1e-3 * delta;
  const double slope = (error_ideal(h) - error_ideal(-h)) / (2.0 * h);
  FeedbackReport report;
  report.max_step = delta;
  std::normal_distribution<double> gauss(0.0, 1.0);
  double walk = 0.0;
  double tracked = 0.0;
  double sum2 = 0.0;
  const auto steps = static_cast<std::size_t>(std::floor(s.duration_s / s.probe_interval_s));
  for (std::size_t i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) * s.probe_interval_s;
    if (i > 0 && drift.kind == DriftKind::kRandomWalk) {
      walk += std::sqrt(drift.diffusion_hz2_per_s * s.probe_interval_s) * gauss(rng);
    }
    const double f_true = detail::drift_at(drift, t, walk);
    const double offset = f_true - tracked;
    const double e = probe(offset - delta) - probe(offset + delta);
    // Probes are taken at f_work +- delta, i.e. detunings (offset -+ delta).
    const double correction = std::clamp(s.gain * e / slope, -delta, delta);
    report.log.push_back({t, f_true, tracked, correction});
    const double residual = std::abs(offset);
    report.max_abs_residual = std::max(report.max_abs_residual, residual);
    sum2 += offset * offset;
    if (residual > 2.0 * delta) report.lost_lock = true;
    tracked += correction;
  }
  report.rms_residual = std::sqrt(sum2 / static_cast<double>(report.log.size()));
  return report;
}

inline void write_feedback_csv(const FeedbackReport& r, const std::filesystem::path& path) {
  csv::Writer out(path, "t_s,f_true_hz,f_tracked_hz,correction_hz");
  for (const auto& x : r.log) out.row(x.t, x.f_true, x.f_tracked, x.correction);
}

}  // namespace spinprobe::harness
