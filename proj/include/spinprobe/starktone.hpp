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

// Gate-voltage Stark coupling of the qubit frequency, plane fits of ESR
// maps, and the tone-injection experiment.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/bessel.hpp>

#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/errors.hpp"
#include "spinprobe/core/parallel.hpp"
#include "spinprobe/qubitsim.hpp"
#include "spinprobe/sequences.hpp"
#include "spinprobe/spectra.hpp"

namespace spinprobe::stark {

// f = f0_ref + sum_g coefficient_g (V_g - reference_g). Coefficients in Hz/V.
struct StarkMap {
  double f0_ref = 38.7765e9;
  std::map<std::string, double> coefficients{{"G1", -36.21e6}, {"G2", -22.88e6}};
  std::map<std::string, double> reference_voltages{{"G1", 0.0}, {"G2", 0.0}};

  double coefficient(const std::string& gate) const {
    const auto it = coefficients.find(gate);
    if (it == coefficients.end()) throw PreconditionError("StarkMap: unknown gate " + gate);
    if (!std::isfinite(it->second)) throw PreconditionError("StarkMap: non-finite coefficient");
    return it->second;
  }
};

inline double esr_frequency(const StarkMap& map, const std::map<std::string, double>& delta_v) {
  double f = map.f0_ref;
  for (const auto& [gate, dv] : delta_v) f += map.coefficient(gate) * dv;
  return f;
}

struct GridPoint {
  double v_g1 = 0.0;
  double v_g2 = 0.0;
  double f_hz = 0.0;
};

struct StarkFit {
  StarkMap map;
  double residual_rms = 0.0;  // Hz
};

// Least-squares plane through (V_G1, V_G2, f), centered on the grid mean
// which becomes the reference voltage.
inline StarkFit fit_stark_map(std::span<const GridPoint> grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (n < 3) throw RankError("fit_stark_map: need >= 3 points");
  double m1 = 0.0, m2 = 0.0;
  for (const auto& g : grid) {
    m1 += g.v_g1;
    m2 += g.v_g2;
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = grid[i].v_g1 - m1;
    a(i, 2) = grid[i].v_g2 - m2;
    b[i] = grid[i].f_hz;
  }
  // Column scaling so the rank test is unit-independent.
  Eigen::Vector3d scale;
  for (int c = 0; c < 3; ++c) scale[c] = std::max(a.col(c).norm(), 1e-300);
  const Eigen::MatrixXd as = a * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(as);
  qr.setThreshold(1e-9);
  if (qr.rank() < 3) throw RankError("fit_stark_map: grid points are collinear or degenerate");
  const Eigen::Vector3d x = qr.solve(b).cwiseQuotient(scale);
  StarkFit out;
  out.map.f0_ref = x[0];
  out.map.coefficients = {{"G1", x[1]}, {"G2", x[2]}};
  out.map.reference_voltages = {{"G1", m1}, {"G2", m2}};
  out.residual_rms = std::sqrt((a * x - b).squaredNorm() / static_cast<double>(n));
  return out;
}

struct ToneConfig {
  std::string gate = "G2";
  double f_tone_hz = 20e3;
  double amplitude_pp = 0.0;    // V
  std::optional<double> phase;  // nullopt: uniform random per shot
};

// delta_omega(t) = 2 pi |k| (A_pp / 2) sin(2 pi f t + phase).
inline qubit::ToneDrive tone_to_detuning(const ToneConfig& tone, const StarkMap& map) {
  if (!(tone.f_tone_hz > 0.0)) throw PreconditionError("tone_to_detuning: f_tone must be > 0");
  if (!(tone.amplitude_pp >= 0.0)) throw PreconditionError("tone_to_detuning: amplitude must be >= 0");
  const double k = std::abs(map.coefficient(tone.gate));
  return {2.0 * std::numbers::pi * k * 0.5 * tone.amplitude_pp, tone.f_tone_hz, tone.phase};
}

inline double tone_detuning_at(const qubit::ToneDrive& drive, double t, double phase) {
  return drive.amplitude * std::sin(2.0 * std::numbers::pi * drive.frequency_hz * t + phase);
}

struct HarmonicWeight {
  int k = 1;
  double weight = 0.0;
};

// Response to a tone at f_tone of CPMG schedules whose fundamental
// 1/(2 tau_k) is f_tone/k, all at the total time N tau_w of the reference
// schedule (N_k = max(1, round(N tau_w / tau_k))). Normalized to k = 1.
inline std::vector<HarmonicWeight> harmonic_weights(double tau_w, std::size_t n_pulses,
                                                    double f_tone_hz, int k_max = 5) {
  if (!(tau_w > 0.0) || n_pulses < 1 || !(f_tone_hz > 0.0) || k_max < 1) {
    throw PreconditionError("harmonic_weights: inputs must be positive");
  }
  const double total = static_cast<double>(n_pulses) * tau_w;
  std::vector<HarmonicWeight> out;
  double ref = 0.0;
  for (int k = 1; k <= k_max; ++k) {
    const double tau_k = static_cast<double>(k) / (2.0 * f_tone_hz);
    const auto n_k = static_cast<std::size_t>(std::max(1.0, std::round(total / tau_k)));
    const double w = sequences::filter_function(sequences::make_cpmg(n_k, tau_k), f_tone_hz);
    if (k == 1) ref = w;
    out.push_back({k, w});
  }
  for (auto& h : out) h.weight /= ref;
  return out;
}

enum class ToneEngine { kFilterFunction, kMonteCarlo };

struct ToneScanOptions {
  ToneEngine engine = ToneEngine::kFilterFunction;
  std::size_t shots = 100;
  std::size_t n_traj = 400;  // Monte Carlo engine only
  qubit::ReadoutFidelity readout;
  // Full coherence reads as spin up here, so decoherence shows as dips.
  qubit::Projection projection = qubit::Projection::kPlus;
  qubit::DephasingConvention convention;
  qubit::McOptions mc{16, 2.0, {}, std::nullopt, 0, 1e-3};
  std::uint64_t seed = 1;
};

struct ToneCell {
  double f_hz = 0.0;
  double tau_w = 0.0;
  std::size_t n_pulses = 0;
  double total_time = 0.0;
  double amplitude_pp = 0.0;
  double p_ideal = 0.0;
  double p_up = 0.0;
  double std_err = 0.0;
};

struct ToneScanResult {
  std::vector<ToneCell> cells;
  std::vector<std::string> notices;
};

// Coherence factor of a tone, averaged over a uniform random phase
// (J0 of the phase amplitude) or at a fixed phase.
inline double tone_coherence(const qubit::ToneDrive& drive, const sequences::PulseSchedule& schedule,
                             double phase_gain) {
  if (drive.amplitude == 0.0) return 1.0;
  const auto y = sequences::filter_transform(schedule, 2.0 * std::numbers::pi * drive.frequency_hz);
  if (drive.phase) {
    return std::cos(phase_gain * drive.amplitude * std::imag(std::polar(1.0, *drive.phase) * y));
  }
  return boost::math::cyl_bessel_j(0, phase_gain * drive.amplitude * std::abs(y));
}

// CPMG at fixed total precession time over a tau_w grid and tone
// amplitudes. N = max(1, round(T / tau_w)); the actual N tau_w is recorded.
inline ToneScanResult tone_scan(const spectra::SpectrumModel& background, const ToneConfig& tone,
                                const StarkMap& map, std::span<const double> tau_grid,
                                double total_time, std::span<const double> amplitudes,
                                const ToneScanOptions& options = {}) {
  if (!(total_time > 0.0)) throw PreconditionError("tone_scan: total time must be > 0");
  if (options.shots < 1) throw PreconditionError("tone_scan: shots must be >= 1");
  ToneScanResult result;
  struct Column {
    double tau;
    std::size_t n;
  };
  std::vector<Column> columns;
  for (double tau : tau_grid) {
    if (!(tau > 0.0)) throw PreconditionError("tone_scan: tau_w must be > 0");
    const double n = std::round(total_time / tau);
    if (n < 1.0) {
      result.notices.push_back("dropped tau_w=" + csv::format(tau) + " s: fewer than one pulse");
      continue;
    }
    columns.push_back({tau, static_cast<std::size_t>(n)});
  }
  const std::size_t n_cells = columns.size() * amplitudes.size();
  result.cells.resize(n_cells);
  parallel_for(n_cells, [&](std::size_t idx) {
    const std::size_t ci = idx / amplitudes.size();
    const std::size_t ai = idx % amplitudes.size();
    const auto& col = columns[ci];
    const auto schedule = sequences::make_cpmg(col.n, col.tau);
    ToneConfig t = tone;
    t.amplitude_pp = amplitudes[ai];
    const auto drive = tone_to_detuning(t, map);
    const std::uint64_t seed = derive_seed(options.seed, ci, ai);
    double w;
    if (options.engine == ToneEngine::kFilterFunction) {
      const qubit::FfOptions ff{options.convention, std::nullopt, std::nullopt};
      w = qubit::coherence_ff(background, schedule, ff) *
          tone_coherence(drive, schedule, options.convention.phase_gain);
    } else {
      auto mc = options.mc;
      mc.convention = options.convention;
      mc.tone = drive;
      mc.workers = 1;
      w = qubit::coherence_mc(background, schedule, options.n_traj, seed, mc).w;
    }
    ToneCell cell;
    cell.f_hz = 0.5 / col.tau;
    cell.tau_w = col.tau;
    cell.n_pulses = col.n;
    cell.total_time = schedule.total_time();
    cell.amplitude_pp = amplitudes[ai];
    cell.p_ideal = qubit::spin_up_probability(w, options.projection);
    std::mt19937_64 rng(derive_seed(seed, 0x5407));
    const auto batch = qubit::measure(cell.p_ideal, options.shots, options.readout, rng);
    cell.p_up = batch.estimated_p;
    cell.std_err = batch.std_err;
    result.cells[idx] = cell;
  });
  return result;
}

struct DipTest {
  double amplitude_pp = 0.0;
  double p_column = 0.0;
  double off_median = 0.0;
  double pooled_se = 0.0;
  double significance = 0.0;  // (median - p) / pooled SE
  bool detected = false;
};

struct Detectability {
  double column_f_hz = 0.0;
  std::vector<DipTest> per_amplitude;
  std::optional<double> threshold_pp;  // smallest amplitude above which every test detects
};

// Fraction of the on-resonance response 4 T^2 / pi^2 that a CPMG column
// picks up from a tone at f_tone.
inline double tone_leakage(double tau_w, std::size_t n_pulses, double f_tone_hz) {
  const auto s = sequences::make_cpmg(n_pulses, tau_w);
  const double t = s.total_time();
  return sequences::filter_function(s, f_tone_hz) /
         (4.0 * t * t / (std::numbers::pi * std::numbers::pi));
}

// Dip test for one column: P_up in the column against the median of the
// off-tone columns at the same amplitude, in units of the pooled standard
// error. Off-tone columns are those whose leakage ratio at f_tone is below
// `leak_max`, which also removes every odd-harmonic position.
inline Detectability detect_dips(const ToneScanResult& scan, double column_f_hz, double f_tone_hz,
                                 double sigmas = 3.0, double leak_max = 2e-3) {
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  std::vector<double> amps;
  for (const auto& c : scan.cells) {
    if (std::find(amps.begin(), amps.end(), c.amplitude_pp) == amps.end()) amps.push_back(c.amplitude_pp);
  }
  std::sort(amps.begin(), amps.end());
  Detectability out;
  out.column_f_hz = column_f_hz;
  for (double a : amps) {
    std::vector<double> off, off_se;
    const ToneCell* col = nullptr;
    for (const auto& c : scan.cells) {
      if (c.amplitude_pp != a) continue;
      if (std::abs(c.f_hz - column_f_hz) <= 1e-6 * column_f_hz) {
        col = &c;
      } else if (tone_leakage(c.tau_w, c.n_pulses, f_tone_hz) < leak_max) {
        off.push_back(c.p_up);
        off_se.push_back(c.std_err);
      }
    }
    if (!col || off.empty()) continue;
    DipTest t;
    t.amplitude_pp = a;
    t.p_column = col->p_up;
    t.off_median = median(off);
    const double se_ref = median(off_se);
    t.pooled_se = std::sqrt(col->std_err * col->std_err + se_ref * se_ref);
    t.significance = (t.off_median - t.p_column) / t.pooled_se;
    t.detected = t.significance >= sigmas;
    out.per_amplitude.push_back(t);
  }
  for (auto it = out.per_amplitude.rbegin(); it != out.per_amplitude.rend(); ++it) {
    if (!it->detected) break;
    out.threshold_pp = it->amplitude_pp;
  }
  return out;
}

inline void write_tone_map_csv(const ToneScanResult& scan, const std::filesystem::path& path) {
  csv::Writer out(path, "f_hz,amplitude_vpp,p_up,std_err");
  for (const auto& c : scan.cells) out.row(c.f_hz, c.amplitude_pp, c.p_up, c.std_err);
}

}  // namespace spinprobe::stark
