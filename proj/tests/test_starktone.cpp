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


#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "spinprobe/starktone.hpp"

namespace st = spinprobe::stark;
namespace qb = spinprobe::qubit;
namespace sp = spinprobe::spectra;
namespace sq = spinprobe::sequences;
using spinprobe::PreconditionError;
using spinprobe::RankError;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<st::GridPoint> plane_grid(double k1, double k2, double jitter_hz, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, jitter_hz);
  std::vector<st::GridPoint> g;
  for (int i = -2; i <= 2; ++i) {
    for (int j = -2; j <= 2; ++j) {
      const double v1 = 0.5 + 8e-3 * i, v2 = 0.3 + 8e-3 * j;
      const double f = 38.7765e9 + k1 * (v1 - 0.5) + k2 * (v2 - 0.3);
      g.push_back({v1, v2, f + (jitter_hz > 0 ? noise(rng) : 0.0)});
    }
  }
  return g;
}

std::vector<double> tau_columns(std::initializer_list<double> freqs) {
  std::vector<double> t;
  for (double f : freqs) t.push_back(0.5 / f);
  return t;
}

}  // namespace

TEST(EsrFrequency, ReferenceAndShifts) {
  const st::StarkMap map;
  EXPECT_EQ(st::esr_frequency(map, {}), 38.7765e9);
  EXPECT_NEAR(st::esr_frequency(map, {{"G2", 0.1}}) - 38.7765e9, -2.288e6, 1e-3);
  EXPECT_NEAR(st::esr_frequency(map, {{"G1", 8e-3}}) - 38.7765e9, -289.68e3, 0.01e3);
  EXPECT_THROW(st::esr_frequency(map, {{"G3", 1.0}}), PreconditionError);
}

TEST(EsrFrequency, LinearInEachGate) {
  const st::StarkMap map;
  const double f0 = map.f0_ref;
  for (double v : {-0.2, 0.013, 0.5}) {
    const double a = st::esr_frequency(map, {{"G1", v}}) - f0;
    const double b = st::esr_frequency(map, {{"G1", 2.0 * v}}) - f0;
    const double c = st::esr_frequency(map, {{"G1", v}, {"G2", v}}) - f0;
    const double d = st::esr_frequency(map, {{"G2", v}}) - f0;
    EXPECT_NEAR(b, 2.0 * a, 1e-6);
    EXPECT_NEAR(c, a + d, 1e-6);
  }
}

TEST(FitStarkMap, RecoversExactPlane) {
  const auto grid = plane_grid(-36.21e6, -22.88e6, 0.0, 0);
  const auto fit = st::fit_stark_map(grid);
  EXPECT_NEAR(fit.map.coefficient("G1") / -36.21e6, 1.0, 1e-5);
  EXPECT_NEAR(fit.map.coefficient("G2") / -22.88e6, 1.0, 1e-5);
  EXPECT_LT(fit.residual_rms, 1e-3);
  // The fitted map reproduces the generating plane.
  for (const auto& g : grid) {
    const double f = st::esr_frequency(fit.map, {{"G1", g.v_g1 - fit.map.reference_voltages.at("G1")},
                                                 {"G2", g.v_g2 - fit.map.reference_voltages.at("G2")}});
    EXPECT_NEAR(f, g.f_hz, 1e-3);
  }
}

TEST(FitStarkMap, JitteredGridWithinTwoPercent) {
  // Coefficient standard errors on this grid are 10 kHz / sqrt(3.2e-3 V^2)
  // = 177 kHz/V, i.e. 0.5% (G1) and 0.8% (G2) of the true values.
  int g2_ok = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto fit = st::fit_stark_map(plane_grid(-36.21e6, -22.88e6, 10e3, seed));
    EXPECT_NEAR(fit.map.coefficient("G1") / -36.21e6, 1.0, 0.02) << seed;
    if (std::abs(fit.map.coefficient("G2") / -22.88e6 - 1.0) <= 0.02) ++g2_ok;
    EXPECT_NEAR(fit.residual_rms, 10e3, 5e3);
  }
  EXPECT_GE(g2_ok, 19);
}

TEST(FitStarkMap, DegenerateGridsAreRankErrors) {
  std::vector<st::GridPoint> row;
  for (int i = 0; i < 5; ++i) row.push_back({0.5 + 8e-3 * i, 0.3, 38.7765e9 - 36.21e6 * 8e-3 * i});
  EXPECT_THROW(st::fit_stark_map(row), RankError);
  std::vector<st::GridPoint> diag;
  for (int i = 0; i < 5; ++i) diag.push_back({8e-3 * i, 8e-3 * i, 38.7765e9 + 1e6 * i});
  EXPECT_THROW(st::fit_stark_map(diag), RankError);
  std::vector<st::GridPoint> two = {{0, 0, 1}, {1, 0, 2}};
  EXPECT_THROW(st::fit_stark_map(two), RankError);
}

TEST(ToneToDetuning, PeakDetuningArithmetic) {
  const st::StarkMap map;
  const auto d = st::tone_to_detuning({"G2", 20e3, 160e-6, std::nullopt}, map);
  EXPECT_NEAR(d.amplitude, 2.0 * kPi * 22.88e6 * 80e-6, 1e-9);
  EXPECT_NEAR(d.amplitude, 1.15e4, 0.01e4);
  EXPECT_EQ(d.frequency_hz, 20e3);
  EXPECT_FALSE(d.phase);
  const auto zero = st::tone_to_detuning({"G2", 20e3, 0.0, 0.3}, map);
  for (double t : {0.0, 1e-5, 3.3e-5}) EXPECT_EQ(st::tone_detuning_at(zero, t, 0.3), 0.0);
  EXPECT_THROW(st::tone_to_detuning({"G7", 20e3, 1e-4, std::nullopt}, map), PreconditionError);
  EXPECT_THROW(st::tone_to_detuning({"G2", 0.0, 1e-4, std::nullopt}, map), PreconditionError);
  EXPECT_THROW(st::tone_to_detuning({"G2", 2e4, -1e-4, std::nullopt}, map), PreconditionError);
}

TEST(ToneToDetuning, RandomPhaseAveragesToZero) {
  const auto d = st::tone_to_detuning({"G2", 20e3, 160e-6, std::nullopt}, st::StarkMap{});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += st::tone_detuning_at(d, 1.7e-5, phase(rng));
  // Standard error of the mean is A / sqrt(2 n).
  EXPECT_NEAR(sum / n, 0.0, 4.0 * d.amplitude / std::sqrt(2.0 * n));
}

TEST(HarmonicWeights, EvenNullsAndOddEnvelope) {
  const double tau = 25e-6;
  const auto w = st::harmonic_weights(tau, 8, 20e3, 5);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w[0].k, 1);
  EXPECT_DOUBLE_EQ(w[0].weight, 1.0);
  EXPECT_LE(w[1].weight, 1e-2);
  EXPECT_LE(w[3].weight, 1e-2);
  EXPECT_NEAR(w[2].weight, 1.0 / 9.0, 0.3 / 9.0);
  EXPECT_GT(w[4].weight, 0.0);
  EXPECT_LT(w[4].weight, w[2].weight);
  EXPECT_THROW(st::harmonic_weights(0.0, 8, 20e3), PreconditionError);
}

TEST(ToneCoherence, FixedPhaseMatchesSampledPhase) {
  const auto s = sq::make_cpmg(8, 25e-6);
  const qb::ToneDrive d{1.2e4, 20e3, 0.7};
  const double gain = 4.0 / kPi;
  EXPECT_NEAR(st::tone_coherence(d, s, gain), std::cos(gain * qb::tone_phase(d, s, 0.7)), 1e-12);
  EXPECT_EQ(st::tone_coherence({0.0, 20e3, std::nullopt}, s, gain), 1.0);
}

TEST(ToneCoherence, RandomPhaseMatchesEqualPowerLine) {
  // A tone A sin(...) carries power A^2 / 2. A narrow line of that power at
  // f_tone gives chi = (g^2 / 2) P |Y(f)|^2 under the filter function.
  const auto s = sq::make_cpmg(8, 25e-6);
  const double f = 20e3;
  const double gain = qb::DephasingConvention{}.phase_gain;
  const double y = std::abs(sq::filter_transform(s, 2.0 * kPi * f));
  const double amp = 0.5 / (gain * y);  // phase amplitude 0.5 rad
  qb::McOptions opt;
  opt.tone = qb::ToneDrive{amp, f, std::nullopt};
  const auto mc = qb::coherence_mc(sp::SpectrumModel::white(0.0), s, 40000, 12, opt);
  const sp::SpectrumModel line({}, std::nullopt, {{f, 0.5 * amp * amp, 1e-3}});
  const double chi_ff = qb::decoherence_ff(line, s);
  EXPECT_NEAR(-std::log(mc.w), chi_ff, 0.05 * chi_ff);
  EXPECT_NEAR(st::tone_coherence(opt.tone.value(), s, gain), mc.w, 3.0 * mc.std_err);
}

TEST(ToneScan, RoundsPulseNumbersAndDropsShortColumns) {
  const std::vector<double> taus = {25e-6, 30e-6, 500e-6};
  const std::vector<double> amps = {0.0};
  const auto r = st::tone_scan(sp::SpectrumModel::white(350.0), {}, st::StarkMap{}, taus, 200e-6, amps);
  ASSERT_EQ(r.cells.size(), 2u);
  EXPECT_EQ(r.cells[0].n_pulses, 8u);
  EXPECT_EQ(r.cells[1].n_pulses, 7u);
  EXPECT_NEAR(r.cells[1].total_time, 210e-6, 1e-15);
  ASSERT_EQ(r.notices.size(), 1u);
}

TEST(ToneScan, DeterministicPerSeed) {
  const auto taus = tau_columns({5e3, 10e3, 20e3});
  const std::vector<double> amps = {0.0, 2e-4};
  st::ToneScanOptions o;
  o.seed = 3;
  const sp::SpectrumModel bg({{3e7, 1.0}}, 350.0);
  const auto a = st::tone_scan(bg, {}, st::StarkMap{}, taus, 200e-6, amps, o);
  const auto b = st::tone_scan(bg, {}, st::StarkMap{}, taus, 200e-6, amps, o);
  for (std::size_t i = 0; i < a.cells.size(); ++i) EXPECT_EQ(a.cells[i].p_up, b.cells[i].p_up);
}

TEST(ToneScan, ColumnMonotoneBelowFirstBesselMinimum) {
  // J0 decreases on [0, 3.83]; beyond it the random-phase average rises
  // again, so monotonicity is asserted on the first lobe only.
  const sp::SpectrumModel bg({{3e13, 2.5}, {3e7, 1.0}}, 350.0);
  const double tau = 25e-6;
  const auto s = sq::make_cpmg(8, tau);
  const double gain = qb::DephasingConvention{}.phase_gain;
  const double per_volt = gain * 2.0 * kPi * 22.88e6 * 0.5 * std::abs(sq::filter_transform(s, 2.0 * kPi * 20e3));
  const double a_max = 3.83 / per_volt;
  std::vector<double> amps;
  for (int i = 0; i <= 12; ++i) amps.push_back(a_max * i / 12.0);
  const std::vector<double> taus = {tau};
  st::ToneScanOptions o;
  o.readout = {1.0, 1.0};
  const auto ff = st::tone_scan(bg, {}, st::StarkMap{}, taus, 200e-6, amps, o);
  for (std::size_t i = 1; i < ff.cells.size(); ++i) EXPECT_LE(ff.cells[i].p_ideal, ff.cells[i - 1].p_ideal);

  o.engine = st::ToneEngine::kMonteCarlo;
  o.n_traj = 400;
  const std::vector<double> few = {0.0, 0.25 * a_max, 0.5 * a_max, 0.75 * a_max, a_max};
  const auto mc = st::tone_scan(bg, {}, st::StarkMap{}, taus, 200e-6, few, o);
  for (std::size_t i = 1; i < mc.cells.size(); ++i) {
    EXPECT_LE(mc.cells[i].p_up, mc.cells[i - 1].p_up + 2.0 * std::hypot(mc.cells[i].std_err, mc.cells[i - 1].std_err));
  }
}

TEST(ToneScan, DipsAtToneAndOddHarmonicsOnly) {
  const sp::SpectrumModel bg({{3e13, 2.5}, {3e7, 1.0}}, 350.0);
  const auto taus = tau_columns({3000, 3500, 4000, 4500, 5000, 5500, 6000, 6666.667, 7500, 8500, 10000,
                                 11000, 12500, 14000, 16000, 18000, 20000, 22000, 25000, 28000});
  const std::vector<double> amps = {0, 40e-6, 80e-6, 120e-6, 160e-6, 200e-6, 240e-6,
                                    320e-6, 400e-6, 480e-6, 640e-6, 800e-6};
  st::ToneScanOptions o;
  o.shots = 300;
  o.seed = 20;
  const auto r = st::tone_scan(bg, {}, st::StarkMap{}, taus, 200e-6, amps, o);
  const auto at20 = st::detect_dips(r, 20e3, 20e3);
  ASSERT_TRUE(at20.threshold_pp);
  EXPECT_GE(*at20.threshold_pp, 80e-6);
  EXPECT_LE(*at20.threshold_pp, 320e-6);
  EXPECT_TRUE(st::detect_dips(r, 6666.667, 20e3).threshold_pp);
  EXPECT_TRUE(st::detect_dips(r, 4000, 20e3).threshold_pp);
  for (const auto& t : st::detect_dips(r, 10e3, 20e3).per_amplitude) EXPECT_FALSE(t.detected) << t.amplitude_pp;
}

TEST(ToneLeakage, OnResonanceIsOne) {
  EXPECT_NEAR(st::tone_leakage(25e-6, 8, 20e3), 1.0, 1e-12);
  EXPECT_LT(st::tone_leakage(50e-6, 4, 20e3), 1e-20);
}

TEST(ToneMapCsv, Header) {
  const auto path = std::filesystem::temp_directory_path() / "spinprobe_tone.csv";
  st::ToneScanResult r;
  r.cells.push_back({20e3, 25e-6, 8, 2e-4, 1e-4, 0.7, 0.69, 0.02});
  st::write_tone_map_csv(r, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "f_hz,amplitude_vpp,p_up,std_err");
  std::filesystem::remove(path);
}
