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

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "spinprobe/spectra.hpp"

namespace sp = spinprobe::spectra;
using spinprobe::DomainError;
using spinprobe::PreconditionError;

namespace {

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

// Numerical integral of the model PSD, independent of band_power.
double quad_psd(const sp::SpectrumModel& m, double lo, double hi) {
  using boost::math::quadrature::gauss_kronrod;
  double total = 0.0;
  const double ratio = std::pow(hi / lo, 1.0 / 400.0);
  for (double a = lo; a < hi * (1 - 1e-12); a *= ratio) {
    const double b = std::min(a * ratio, hi);
    total += gauss_kronrod<double, 31>::integrate([&](double f) { return sp::eval_psd(m, f); }, a, b, 0, 1e-12);
  }
  return total;
}

}  // namespace

TEST(EvalPsd, WhiteFloorIsFlat) {
  const auto m = sp::SpectrumModel::white(350.0);
  for (double f : {0.1, 1.3e3, 50e3, 1e7}) EXPECT_DOUBLE_EQ(sp::eval_psd(m, f), 350.0);
}

TEST(EvalPsd, OneOverFCrossesFloorWhereAmplitudesMatch) {
  const double c2 = 3e7;
  const auto pl = sp::SpectrumModel::power_law(c2, 1.0);
  // C2 / (2 pi f) = 350  =>  f = C2 / (700 pi).
  const double f_cross = c2 / (350.0 * 2.0 * std::numbers::pi);
  EXPECT_NEAR(f_cross, 13.64e3, 10.0);
  EXPECT_NEAR(sp::eval_psd(pl, f_cross), 350.0, 1e-9);
  const auto both = pl + sp::SpectrumModel::white(350.0);
  EXPECT_NEAR(sp::eval_psd(both, f_cross), 700.0, 1e-9);
}

TEST(EvalPsd, PowerLawUsesAngularFrequency) {
  const auto m = sp::SpectrumModel::power_law(3e13, 2.5);
  const double f = 1e3;
  EXPECT_NEAR(sp::eval_psd(m, f), 3e13 / std::pow(2.0 * std::numbers::pi * f, 2.5), 1e-9);
}

TEST(EvalPsd, RejectsNonPositiveFrequency) {
  const auto m = sp::SpectrumModel::white(1.0);
  EXPECT_THROW(sp::eval_psd(m, 0.0), DomainError);
  EXPECT_THROW(sp::eval_psd(m, -5.0), DomainError);
}

TEST(SpectrumModel, EmptyModelIsRejected) {
  EXPECT_THROW(sp::SpectrumModel({}, std::nullopt, {}), PreconditionError);
}

TEST(SpectrumModel, InvalidComponentsAreRejected) {
  EXPECT_THROW(sp::SpectrumModel({{1.0, 0.0}}, std::nullopt), PreconditionError);
  EXPECT_THROW(sp::SpectrumModel({{-1.0, 1.0}}, std::nullopt), PreconditionError);
  EXPECT_THROW(sp::SpectrumModel::white(-1.0), PreconditionError);
  EXPECT_THROW(sp::SpectrumModel({}, std::nullopt, {{3.6e3, 1.0, 0.0}}), PreconditionError);
}

TEST(SpectrumModel, LineAreaEqualsItsPower) {
  const sp::SpectrumModel m({}, std::nullopt, {{3.6e3, 2e6, 50.0}});
  // The one-sided area over (0, inf) is the full power, including the
  // folded negative-frequency half.
  EXPECT_NEAR(quad_psd(m, 1e-3, 1e9), 2e6, 2e6 * 1e-4);
  EXPECT_NEAR(sp::band_power(m, 1e-9, 1e12), 2e6, 1.0);
}

TEST(SpectrumModel, BandPowerMatchesQuadrature) {
  const sp::SpectrumModel m({{3e13, 2.5}, {3e7, 1.0}, {4e6, 0.8}}, 350.0, {{3.6e3, 2e6, 50.0}});
  for (auto [lo, hi] : {std::pair{10.0, 1e3}, std::pair{1.3e3, 50e3}, std::pair{0.2, 5e4}}) {
    const double q = quad_psd(m, lo, hi);
    EXPECT_NEAR(sp::band_power(m, lo, hi), q, 1e-6 * q);
  }
}

TEST(SpectrumModel, ScalingScalesEveryValue) {
  const sp::SpectrumModel m({{3e13, 2.5}, {3e7, 1.0}}, 350.0, {{3.6e3, 2e6, 50.0}});
  const auto s = m.scaled(2.5);
  for (double f : {100.0, 3.6e3, 1e4, 1e5}) {
    EXPECT_NEAR(sp::eval_psd(s, f), 2.5 * sp::eval_psd(m, f), 1e-12 * sp::eval_psd(s, f));
  }
}

TEST(Synthesize, WhiteRoundTripIsFlat) {
  const auto m = sp::SpectrumModel::white(350.0);
  const auto trace = sp::synthesize(m, 1e6, 0.1, 7);
  ASSERT_EQ(trace.samples.size(), 100000u);
  sp::WelchOptions w;
  w.segment_length = 4096;
  const auto psd = sp::psd_welch(trace, w);
  double total = 0.0;
  for (const auto& p : psd.points) total += p.s;
  EXPECT_NEAR(total / static_cast<double>(psd.points.size()), 350.0, 35.0);
  // Decade averages.
  for (double lo = 1e3; lo < 5e5; lo *= 10.0) {
    std::vector<double> v;
    for (const auto& p : psd.points) {
      if (p.f_hz >= lo && p.f_hz < 10.0 * lo) v.push_back(p.s);
    }
    ASSERT_FALSE(v.empty());
    EXPECT_NEAR(mean(v), 350.0, 35.0) << "decade starting at " << lo;
  }
}

TEST(Synthesize, LineAppearsAtItsFrequency) {
  const sp::SpectrumModel m({}, 1.0, {{3.6e3, 1e5, 2.0}});
  const auto trace = sp::synthesize(m, 65536.0, 4.0, 3);
  sp::WelchOptions w;
  w.segment_length = 16384;
  const auto psd = sp::psd_welch(trace, w);
  const auto peak = std::max_element(psd.points.begin(), psd.points.end(),
                                     [](const auto& a, const auto& b) { return a.s < b.s; });
  EXPECT_NEAR(peak->f_hz, 3.6e3, 65536.0 / 16384.0);
}

TEST(Synthesize, ZeroPowerGivesZeroSamples) {
  const auto trace = sp::synthesize(sp::SpectrumModel::white(0.0), 1e4, 0.1, 1);
  for (double x : trace.samples) EXPECT_EQ(x, 0.0);
}

TEST(Synthesize, TooFewSamplesIsRejected) {
  EXPECT_THROW(sp::synthesize(sp::SpectrumModel::white(1.0), 100.0, 0.5, 1), PreconditionError);
}

TEST(Synthesize, SeedDeterminism) {
  const sp::SpectrumModel m({{3e7, 1.0}}, 350.0, {{3.6e3, 2e6, 50.0}});
  const auto a = sp::synthesize(m, 2e5, 0.05, 42);
  const auto b = sp::synthesize(m, 2e5, 0.05, 42);
  const auto c = sp::synthesize(m, 2e5, 0.05, 43);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Synthesize, SampleCountAndMean) {
  const auto m = sp::SpectrumModel::white(350.0);
  const auto t = sp::synthesize(m, 12345.0, 0.7, 5);
  EXPECT_EQ(t.samples.size(), static_cast<std::size_t>(std::llround(12345.0 * 0.7)));
  const double se = std::sqrt(variance(t.samples) / static_cast<double>(t.samples.size()));
  EXPECT_LT(std::abs(mean(t.samples)), 5.0 * se);
}

TEST(Synthesize, ParsevalOverSynthesisBand) {
  // A steep low-frequency term would concentrate the variance in the first
  // few bins, so keep the model bounded across the band.
  const sp::SpectrumModel m({{3e7, 1.0}}, 350.0, {{3.6e3, 2e6, 50.0}});
  const double fs = 2e5;
  const std::size_t n = 1 << 16;
  const sp::Synthesizer syn(m, fs, n);
  const auto band = syn.band();
  const double target = quad_psd(m, band.lo_hz, band.hi_hz);
  double var = 0.0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) var += variance(syn.generate(100 + s).samples);
  var /= seeds;
  EXPECT_NEAR(var, target, 0.05 * target);
}

TEST(Synthesize, MeanPeriodogramMatchesModel) {
  // Bounded model inside the validity band [1 kHz, 40 kHz].
  const sp::SpectrumModel m({{3e7, 1.0}}, 350.0, {});
  const double fs = 1e5;
  sp::WelchOptions w;
  w.segment_length = 4096;
  std::vector<double> acc;
  std::vector<double> freqs;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const auto psd = sp::psd_welch(sp::synthesize(m, fs, 0.2, 1000 + s), w);
    if (acc.empty()) {
      acc.assign(psd.points.size(), 0.0);
      for (const auto& p : psd.points) freqs.push_back(p.f_hz);
    }
    for (std::size_t i = 0; i < psd.points.size(); ++i) acc[i] += psd.points[i].s / seeds;
  }
  for (double lo : {1e3, 4e3, 1e4}) {
    const double hi = std::min(4.0 * lo, 4e4);
    double est = 0.0, model = 0.0;
    int k = 0;
    for (std::size_t i = 0; i < freqs.size(); ++i) {
      if (freqs[i] >= lo && freqs[i] < hi) {
        est += acc[i];
        model += sp::eval_psd(m, freqs[i]);
        ++k;
      }
    }
    ASSERT_GT(k, 0);
    EXPECT_NEAR(est / model, 1.0, 0.15) << "band from " << lo;
  }
}

TEST(Synthesize, ScalingScalesPeriodogram) {
  const sp::SpectrumModel m({{3e7, 1.0}}, 350.0, {});
  const auto a = sp::psd_welch(sp::synthesize(m, 1e5, 0.1, 9));
  const auto b = sp::psd_welch(sp::synthesize(m.scaled(4.0), 1e5, 0.1, 9));
  for (std::size_t i = 0; i < a.points.size(); i += 97) {
    EXPECT_NEAR(b.points[i].s, 4.0 * a.points[i].s, 1e-9 * b.points[i].s);
  }
}

TEST(Welch, ParsevalAgainstSampleVariance) {
  const auto t = sp::synthesize(sp::SpectrumModel({{3e7, 1.0}}, 350.0), 1e5, 0.5, 21);
  sp::WelchOptions w;
  w.window = sp::WindowKind::kRectangular;
  w.overlap_fraction = 0.0;
  const auto psd = sp::psd_welch(t, w);
  const double df = psd.points[1].f_hz - psd.points[0].f_hz;
  double area = 0.0;
  for (const auto& p : psd.points) area += p.s * df;
  EXPECT_NEAR(area, variance(t.samples), 1e-9 * area);
}

TEST(Welch, ConstantTraceGivesZero) {
  sp::NoiseTrace t;
  t.sample_rate = 1e3;
  t.samples.assign(1024, 0.0);
  const auto psd = sp::psd_welch(t);
  for (const auto& p : psd.points) EXPECT_EQ(p.s, 0.0);
}

TEST(Welch, SingleSegmentWarns) {
  const auto t = sp::synthesize(sp::SpectrumModel::white(1.0), 1e3, 1.0, 1);
  EXPECT_FALSE(sp::psd_welch(t).warnings.empty());
  sp::WelchOptions w;
  w.segment_length = 256;
  EXPECT_TRUE(sp::psd_welch(t, w).warnings.empty());
}

TEST(Welch, InvariantsHold) {
  const auto t = sp::synthesize(sp::SpectrumModel::white(350.0), 1e4, 1.0, 1);
  sp::WelchOptions w;
  w.segment_length = 512;
  const auto psd = sp::psd_welch(t, w);
  EXPECT_NO_THROW(sp::validate(psd));
  EXPECT_EQ(psd.estimator, sp::Estimator::kWelchPeriodogram);
}

TEST(Welch, RejectsBadOptions) {
  const auto t = sp::synthesize(sp::SpectrumModel::white(1.0), 1e3, 1.0, 1);
  sp::WelchOptions w;
  w.overlap_fraction = 1.0;
  EXPECT_THROW(sp::psd_welch(t, w), PreconditionError);
  w.overlap_fraction = 0.5;
  w.segment_length = 5000;
  EXPECT_THROW(sp::psd_welch(t, w), PreconditionError);
}

TEST(IntegrateRms, UnitRectangle) {
  sp::PsdEstimate psd;
  for (int i = 0; i <= 10; ++i) {
    const double f = 10.0 + 0.1 * i;
    psd.points.push_back({f, 1.0, 1.0, 1.0});
  }
  EXPECT_NEAR(sp::integrate_rms(psd, 10.0, 11.0), 1.0, 1e-12);
  EXPECT_NEAR(sp::integrate_rms(psd, 10.25, 10.5), 0.5, 1e-12);
}

TEST(IntegrateRms, ZeroSpectrum) {
  sp::PsdEstimate psd;
  for (int i = 1; i <= 5; ++i) psd.points.push_back({double(i), 0.0, 0.0, 0.0});
  EXPECT_EQ(sp::integrate_rms(psd, 1.0, 5.0), 0.0);
}

TEST(IntegrateRms, RejectsInvertedBand) {
  sp::PsdEstimate psd;
  for (int i = 1; i <= 5; ++i) psd.points.push_back({double(i), 1.0, 1.0, 1.0});
  EXPECT_THROW(sp::integrate_rms(psd, 3.0, 3.0), DomainError);
  EXPECT_THROW(sp::integrate_rms(psd, 4.0, 2.0), DomainError);
}

TEST(IntegrateRms, VoltageBandRms) {
  // White level chosen so the 0.2 Hz - 50 kHz integral is (1.27 uV)^2.
  const double target = 1.27e-6;
  const double level = target * target / (50e3 - 0.2);
  const auto t = sp::synthesize(sp::SpectrumModel::white(level), 131072.0, 16.0, 4);
  sp::WelchOptions w;
  w.segment_length = 1 << 19;
  const auto psd = sp::psd_welch(t, w);
  EXPECT_NEAR(sp::integrate_rms(psd, 0.25, 50e3) / target, 1.0, 0.02);
}

TEST(VoltageToDetuning, StarkArithmetic) {
  sp::PsdEstimate v;
  v.points.push_back({100.0, 1e-15, 0.5e-15, 2e-15});
  const auto d = sp::voltage_to_detuning_psd(v, -22.88e6);
  const double expected = std::pow(2.0 * std::numbers::pi * 22.88e6, 2) * 1e-15;
  EXPECT_NEAR(d.points[0].s, expected, 1e-9 * expected);
  EXPECT_NEAR(d.points[0].s, 20.7, 0.05);
  EXPECT_EQ(sp::voltage_to_detuning_psd(v, 22.88e6).points[0].s, d.points[0].s);
  EXPECT_EQ(sp::voltage_to_detuning_psd(v, 0.0).points[0].s, 0.0);
}

TEST(TraceCsv, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "spinprobe_test_spectra";
  std::filesystem::create_directories(dir);
  auto t = sp::synthesize(sp::SpectrumModel::white(350.0), 1e4, 0.05, 2);
  sp::write_trace_csv(t, dir / "trace.csv");
  const auto back = sp::read_trace_csv(dir / "trace.csv");
  ASSERT_EQ(back.samples.size(), t.samples.size());
  EXPECT_NEAR(back.sample_rate, 1e4, 1e-6);
  for (std::size_t i = 0; i < t.samples.size(); ++i) EXPECT_EQ(back.samples[i], t.samples[i]);
  t.quantity = sp::TraceQuantity::kVoltage;
  sp::write_trace_csv(t, dir / "volts.csv");
  EXPECT_EQ(sp::read_trace_csv(dir / "volts.csv").quantity, sp::TraceQuantity::kVoltage);
  std::filesystem::remove_all(dir);
}
