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

// Parametric noise spectra, colored-noise synthesis and Welch estimation.
//
// Convention used throughout the toolkit: S(f) is the one-sided power
// spectral density of the angular detuning delta_omega(t), indexed by the
// ordinary frequency f in Hz, in rad^2/s, so that
//
//     Var(delta_omega) = integral_0^inf S(f) df.
//
// Power-law terms are written C / omega^alpha with omega = 2 pi f.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/errors.hpp"
#include "spinprobe/core/fft.hpp"

namespace spinprobe::spectra {

struct PowerLawTerm {
  double amplitude = 0.0;  // C, in rad^2/s * (rad/s)^alpha
  double exponent = 1.0;   // alpha > 0
};

// Lorentzian line. `power` is the area under the line (rad^2/s^2 for
// detuning spectra), `linewidth_hz` its full width at half maximum. The
// mirror image at -center_hz is folded onto f > 0, so the one-sided area is
// exactly `power` and the autocovariance is P exp(-pi width |t|) cos(2 pi fc t).
struct SpectralLine {
  double center_hz = 0.0;
  double power = 0.0;
  double linewidth_hz = 1.0;
};

struct FrequencyBand {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
  double width() const { return hi_hz - lo_hz; }
};

class SpectrumModel {
 public:
  SpectrumModel(std::vector<PowerLawTerm> power_laws, std::optional<double> white_floor,
                std::vector<SpectralLine> lines = {})
      : power_laws_(std::move(power_laws)), white_floor_(white_floor), lines_(std::move(lines)) {
    if (power_laws_.empty() && !white_floor_ && lines_.empty()) {
      throw PreconditionError("SpectrumModel: at least one component is required");
    }
    for (const auto& t : power_laws_) {
      if (!std::isfinite(t.amplitude) || t.amplitude < 0.0) {
        throw PreconditionError("SpectrumModel: power-law amplitude must be finite and >= 0");
      }
      if (!std::isfinite(t.exponent) || t.exponent <= 0.0) {
        throw PreconditionError("SpectrumModel: power-law exponent must be > 0");
      }
    }
    if (white_floor_ && (!std::isfinite(*white_floor_) || *white_floor_ < 0.0)) {
      throw PreconditionError("SpectrumModel: white floor must be finite and >= 0");
    }
    for (const auto& l : lines_) {
      if (!(l.center_hz > 0.0) || !std::isfinite(l.center_hz)) {
        throw PreconditionError("SpectrumModel: line center must be > 0");
      }
      if (!std::isfinite(l.power) || l.power < 0.0) {
        throw PreconditionError("SpectrumModel: line power must be finite and >= 0");
      }
      if (!(l.linewidth_hz > 0.0) || !std::isfinite(l.linewidth_hz)) {
        throw PreconditionError("SpectrumModel: line width must be > 0");
      }
    }
  }

  static SpectrumModel white(double floor) { return SpectrumModel({}, floor, {}); }
  static SpectrumModel power_law(double amplitude, double exponent) {
    return SpectrumModel({{amplitude, exponent}}, std::nullopt, {});
  }

  const std::vector<PowerLawTerm>& power_laws() const { return power_laws_; }
  std::optional<double> white_floor() const { return white_floor_; }
  const std::vector<SpectralLine>& lines() const { return lines_; }

  double white_level() const { return white_floor_.value_or(0.0); }

  // Largest exponent among power-law terms carrying nonzero amplitude.
  double max_exponent() const {
    double a = 0.0;
    for (const auto& t : power_laws_) {
      if (t.amplitude > 0.0) a = std::max(a, t.exponent);
    }
    return a;
  }

  bool is_silent() const {
    if (white_level() > 0.0) return false;
    for (const auto& t : power_laws_) {
      if (t.amplitude > 0.0) return false;
    }
    for (const auto& l : lines_) {
      if (l.power > 0.0) return false;
    }
    return true;
  }

  // Multiplies every amplitude by `factor` (>= 0).
  SpectrumModel scaled(double factor) const {
    if (!(factor >= 0.0) || !std::isfinite(factor)) {
      throw PreconditionError("SpectrumModel::scaled: factor must be finite and >= 0");
    }
    SpectrumModel out = *this;
    for (auto& t : out.power_laws_) t.amplitude *= factor;
    if (out.white_floor_) *out.white_floor_ *= factor;
    for (auto& l : out.lines_) l.power *= factor;
    return out;
  }

  // Sum of two models (white floors add).
  friend SpectrumModel operator+(const SpectrumModel& a, const SpectrumModel& b) {
    auto laws = a.power_laws_;
    laws.insert(laws.end(), b.power_laws_.begin(), b.power_laws_.end());
    std::optional<double> floor;
    if (a.white_floor_ || b.white_floor_) floor = a.white_level() + b.white_level();
    auto lines = a.lines_;
    lines.insert(lines.end(), b.lines_.begin(), b.lines_.end());
    return SpectrumModel(std::move(laws), floor, std::move(lines));
  }

 private:
  std::vector<PowerLawTerm> power_laws_;
  std::optional<double> white_floor_;
  std::vector<SpectralLine> lines_;
};

namespace detail {

inline double lorentzian(const SpectralLine& l, double f) {
  const double hw = 0.5 * l.linewidth_hz;
  const double d1 = f - l.center_hz;
  const double d2 = f + l.center_hz;
  return l.power * hw / std::numbers::pi * (1.0 / (d1 * d1 + hw * hw) + 1.0 / (d2 * d2 + hw * hw));
}

inline double lorentzian_area(const SpectralLine& l, double lo, double hi) {
  const double hw = 0.5 * l.linewidth_hz;
  const double c = l.center_hz;
  return l.power / std::numbers::pi *
         (std::atan((hi - c) / hw) - std::atan((lo - c) / hw) + std::atan((hi + c) / hw) -
          std::atan((lo + c) / hw));
}

// Smooth part (power laws + white floor) at f > 0.
inline double smooth_psd(const SpectrumModel& model, double f) {
  const double omega = 2.0 * std::numbers::pi * f;
  double s = model.white_level();
  for (const auto& t : model.power_laws()) {
    if (t.amplitude > 0.0) s += t.amplitude * std::pow(omega, -t.exponent);
  }
  return s;
}

inline double power_law_area(const PowerLawTerm& t, double lo, double hi) {
  if (t.amplitude == 0.0) return 0.0;
  const double scale = t.amplitude * std::pow(2.0 * std::numbers::pi, -t.exponent);
  if (std::abs(t.exponent - 1.0) < 1e-12) return scale * std::log(hi / lo);
  const double p = 1.0 - t.exponent;
  return scale * (std::pow(hi, p) - std::pow(lo, p)) / p;
}

}  // namespace detail

// S(f) = sum C_i/(2 pi f)^alpha_i + S0 + sum Lorentzian_i(f).
inline double eval_psd(const SpectrumModel& model, double f_hz) {
  if (!(f_hz > 0.0) || !std::isfinite(f_hz)) {
    throw DomainError("eval_psd: frequency must be finite and > 0");
  }
  double s = detail::smooth_psd(model, f_hz);
  for (const auto& l : model.lines()) s += detail::lorentzian(l, f_hz);
  return s;
}

// Closed-form integral of the model over [lo, hi] (lo > 0).
inline double band_power(const SpectrumModel& model, double lo_hz, double hi_hz) {
  if (!(lo_hz > 0.0) || !(hi_hz > lo_hz)) {
    throw DomainError("band_power: requires 0 < lo < hi");
  }
  double p = model.white_level() * (hi_hz - lo_hz);
  for (const auto& t : model.power_laws()) p += detail::power_law_area(t, lo_hz, hi_hz);
  for (const auto& l : model.lines()) p += detail::lorentzian_area(l, lo_hz, hi_hz);
  return p;
}

enum class TraceQuantity { kDetuning, kVoltage };

struct NoiseTrace {
  double sample_rate = 0.0;  // Hz
  std::vector<double> samples;
  std::uint64_t seed = 0;
  std::string provenance = "external";
  TraceQuantity quantity = TraceQuantity::kDetuning;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  double time_at(std::size_t i) const { return static_cast<double>(i) / sample_rate; }
};

// Frequency-domain synthesizer for a fixed (model, sample rate, length).
//
// Bin k (k >= 1, spacing df = fs/n) receives independent Gaussian cosine and
// sine amplitudes with variance P_k, so the trace variance is sum_k P_k.
// Smooth components use the midpoint rule P_k = S(k df) df, which keeps the
// phase integral of S |Y|^2 accurate even where S is steep; lines use their
// exact area over the bin so that lines narrower than a bin keep their power.
// Bin 0 is zero: nothing slower than the record is synthesized, and the
// effective synthesis band is [df/2, fs/2].
class Synthesizer {
 public:
  Synthesizer(const SpectrumModel& model, double sample_rate, std::size_t n_samples,
              std::string provenance = "spectrum-model")
      : sample_rate_(sample_rate), n_(n_samples), provenance_(std::move(provenance)) {
    if (!(sample_rate > 0.0)) throw PreconditionError("synthesize: sample rate must be > 0");
    if (n_samples < 64) {
      throw PreconditionError("synthesize: duration * sample_rate must give >= 64 samples");
    }
    const std::size_t half = n_ / 2;
    const double df = sample_rate_ / static_cast<double>(n_);
    amplitude_.assign(half + 1, 0.0);
    silent_ = true;
    for (std::size_t k = 1; k <= half; ++k) {
      const double f = df * static_cast<double>(k);
      const bool nyquist = (n_ % 2 == 0) && k == half;
      const double lo = f - 0.5 * df;
      const double hi = nyquist ? f : f + 0.5 * df;
      double p = detail::smooth_psd(model, f) * (hi - lo);
      for (const auto& l : model.lines()) p += detail::lorentzian_area(l, lo, hi);
      amplitude_[k] = std::sqrt(std::max(p, 0.0));
      if (p > 0.0) silent_ = false;
    }
  }

  double sample_rate() const { return sample_rate_; }
  std::size_t size() const { return n_; }
  double resolution() const { return sample_rate_ / static_cast<double>(n_); }
  FrequencyBand band() const { return {0.5 * resolution(), 0.5 * sample_rate_}; }
  double variance() const {
    double v = 0.0;
    for (double a : amplitude_) v += a * a;
    return v;
  }

  NoiseTrace generate(std::uint64_t seed) const {
    NoiseTrace trace;
    trace.sample_rate = sample_rate_;
    trace.seed = seed;
    trace.provenance = provenance_;
    if (silent_) {
      trace.samples.assign(n_, 0.0);
      return trace;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t half = n_ / 2;
    std::vector<std::complex<double>> spectrum(half + 1);
    for (std::size_t k = 1; k <= half; ++k) {
      const double a = normal(rng) * amplitude_[k];
      const double b = normal(rng) * amplitude_[k];
      const bool nyquist = (n_ % 2 == 0) && k == half;
      // c2r yields a_k cos + b_k sin from X_k = (a - i b)/2 on interior bins.
      spectrum[k] = nyquist ? std::complex<double>(a, 0.0) : std::complex<double>(0.5 * a, -0.5 * b);
    }
    trace.samples = fft::inverse_real(std::move(spectrum), n_);
    return trace;
  }

 private:
  double sample_rate_;
  std::size_t n_;
  std::string provenance_;
  std::vector<double> amplitude_;
  bool silent_ = true;
};

inline std::size_t sample_count(double sample_rate, double duration) {
  if (!(sample_rate > 0.0) || !(duration > 0.0)) {
    throw PreconditionError("synthesize: sample rate and duration must be > 0");
  }
  return static_cast<std::size_t>(std::llround(sample_rate * duration));
}

// Synthesizes a real Gaussian trace whose expected periodogram is the model
// PSD. Deterministic for a fixed seed.
inline NoiseTrace synthesize(const SpectrumModel& model, double sample_rate, double duration,
                             std::uint64_t seed) {
  return Synthesizer(model, sample_rate, sample_count(sample_rate, duration)).generate(seed);
}

enum class Estimator { kCpmgReconstruction, kWelchPeriodogram };

struct PsdPoint {
  double f_hz = 0.0;
  double s = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct PsdEstimate {
  std::vector<PsdPoint> points;
  Estimator estimator = Estimator::kWelchPeriodogram;
  std::vector<std::string> warnings;

  bool empty() const { return points.empty(); }
  FrequencyBand range() const {
    return points.empty() ? FrequencyBand{} : FrequencyBand{points.front().f_hz, points.back().f_hz};
  }
};

// Throws PreconditionError if the estimate breaks its invariants.
inline void validate(const PsdEstimate& psd) {
  for (std::size_t i = 0; i < psd.points.size(); ++i) {
    const auto& p = psd.points[i];
    if (i > 0 && !(p.f_hz > psd.points[i - 1].f_hz)) {
      throw PreconditionError("PsdEstimate: frequencies must be strictly increasing");
    }
    if (!(p.s >= 0.0) || !(p.ci_low <= p.s) || !(p.s <= p.ci_high)) {
      throw PreconditionError("PsdEstimate: requires 0 <= S and ci_low <= S <= ci_high");
    }
  }
}

enum class WindowKind { kHann, kRectangular };

struct WelchOptions {
  std::size_t segment_length = 0;  // 0: whole trace
  double overlap_fraction = 0.5;
  WindowKind window = WindowKind::kHann;
  double confidence = 0.95;
};

namespace detail {

inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::kHann) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
    }
  }
  return w;
}

// Equivalent degrees of freedom of a Welch average with overlapping
// segments (correlation of squared window overlaps).
inline double welch_dof(const std::vector<double>& w, std::size_t step, std::size_t segments) {
  double norm = 0.0;
  for (double v : w) norm += v * v;
  double denom = 1.0;
  for (std::size_t j = 1; j < segments; ++j) {
    const std::size_t shift = j * step;
    if (shift >= w.size()) break;
    double c = 0.0;
    for (std::size_t i = 0; i + shift < w.size(); ++i) c += w[i] * w[i + shift];
    const double rho = (c * c) / (norm * norm);
    denom += 2.0 * (1.0 - static_cast<double>(j) / static_cast<double>(segments)) * rho;
  }
  return 2.0 * static_cast<double>(segments) / denom;
}

}  // namespace detail

// Averaged, windowed, one-sided periodogram (mean removed per segment),
// scaled so that sum S df equals the sample variance. The DC bin is omitted.
inline PsdEstimate psd_welch(const NoiseTrace& trace, WelchOptions options = {}) {
  const std::size_t n = trace.samples.size();
  const std::size_t len = options.segment_length == 0 ? n : options.segment_length;
  if (len < 2 || len > n) throw PreconditionError("psd_welch: segment length must be in [2, n]");
  if (!(options.overlap_fraction >= 0.0 && options.overlap_fraction < 1.0)) {
    throw PreconditionError("psd_welch: overlap fraction must be in [0, 1)");
  }
  const std::size_t overlap =
      static_cast<std::size_t>(std::llround(options.overlap_fraction * static_cast<double>(len)));
  const std::size_t step = std::max<std::size_t>(1, len - std::min(overlap, len - 1));
  const std::size_t segments = 1 + (n - len) / step;

  const auto window = detail::make_window(options.window, len);
  double window_power = 0.0;
  for (double v : window) window_power += v * v;

  const std::size_t bins = len / 2;
  std::vector<double> accum(bins + 1, 0.0);
  std::vector<double> seg(len);
  for (std::size_t s = 0; s < segments; ++s) {
    const double* x = trace.samples.data() + s * step;
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += x[i];
    mean /= static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i) seg[i] = (x[i] - mean) * window[i];
    const auto spec = fft::forward_real(seg);
    for (std::size_t k = 1; k <= bins; ++k) accum[k] += std::norm(spec[k]);
  }

  PsdEstimate out;
  out.estimator = Estimator::kWelchPeriodogram;
  if (segments < 2) out.warnings.push_back("fewer than 2 segments averaged");

  const double nu = detail::welch_dof(window, step, segments);
  const boost::math::chi_squared chi2(nu);
  const double tail = 0.5 * (1.0 - options.confidence);
  const double lo_factor = nu / boost::math::quantile(chi2, 1.0 - tail);
  const double hi_factor = nu / boost::math::quantile(chi2, tail);

  const double df = trace.sample_rate / static_cast<double>(len);
  const double scale = 1.0 / (trace.sample_rate * window_power * static_cast<double>(segments));
  out.points.reserve(bins);
  for (std::size_t k = 1; k <= bins; ++k) {
    const bool nyquist = (len % 2 == 0) && k == bins;
    const double s = (nyquist ? 1.0 : 2.0) * accum[k] * scale;
    out.points.push_back({df * static_cast<double>(k), s, s * lo_factor, s * hi_factor});
  }
  return out;
}

// sqrt of the trapezoidal integral of S over [f_lo, f_hi]; edge values are
// linearly interpolated.
inline double integrate_rms(const PsdEstimate& psd, double f_lo, double f_hi) {
  if (!(f_lo < f_hi)) throw DomainError("integrate_rms: requires f_lo < f_hi");
  if (psd.points.size() < 2) throw PreconditionError("integrate_rms: need >= 2 points");
  const auto& pts = psd.points;
  if (f_lo < pts.front().f_hz || f_hi > pts.back().f_hz) {
    throw PreconditionError("integrate_rms: band outside the estimate range");
  }
  auto interp = [&](std::size_t i, double f) {
    const auto& a = pts[i];
    const auto& b = pts[i + 1];
    return a.s + (b.s - a.s) * (f - a.f_hz) / (b.f_hz - a.f_hz);
  };
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double a = std::max(f_lo, pts[i].f_hz);
    const double b = std::min(f_hi, pts[i + 1].f_hz);
    if (b <= a) continue;
    area += 0.5 * (b - a) * (interp(i, a) + interp(i, b));
  }
  return std::sqrt(std::max(area, 0.0));
}

// S_dw(f) = (2 pi k)^2 S_V(f) for a Stark coefficient k in Hz/V.
inline PsdEstimate voltage_to_detuning_psd(const PsdEstimate& psd_volts, double stark_hz_per_volt) {
  if (!std::isfinite(stark_hz_per_volt)) {
    throw PreconditionError("voltage_to_detuning_psd: coefficient must be finite");
  }
  const double g = 2.0 * std::numbers::pi * stark_hz_per_volt;
  const double factor = g * g;
  PsdEstimate out = psd_volts;
  for (auto& p : out.points) {
    p.s *= factor;
    p.ci_low *= factor;
    p.ci_high *= factor;
  }
  return out;
}

// Model-level counterpart of voltage_to_detuning_psd.
inline SpectrumModel voltage_to_detuning(const SpectrumModel& volts, double stark_hz_per_volt) {
  const double g = 2.0 * std::numbers::pi * stark_hz_per_volt;
  return volts.scaled(g * g);
}

inline void write_trace_csv(const NoiseTrace& trace, const std::filesystem::path& path) {
  csv::Writer out(path, trace.quantity == TraceQuantity::kVoltage
                            ? "time_s,volts"
                            : "time_s,delta_omega_rad_per_s");
  for (std::size_t i = 0; i < trace.samples.size(); ++i) out.row(trace.time_at(i), trace.samples[i]);
}

// Reads a trace CSV; the sample rate is recovered from the time column.
inline NoiseTrace read_trace_csv(const std::filesystem::path& path) {
  const auto table = csv::read_numeric(path);
  if (table.header.size() != 2 || table.header[0] != "time_s" ||
      (table.header[1] != "volts" && table.header[1] != "delta_omega_rad_per_s")) {
    throw PreconditionError("read_trace_csv: expected header time_s,delta_omega_rad_per_s or time_s,volts");
  }
  if (table.rows.size() < 2) throw PreconditionError("read_trace_csv: need >= 2 samples");
  NoiseTrace trace;
  trace.quantity = table.header[1] == "volts" ? TraceQuantity::kVoltage : TraceQuantity::kDetuning;
  const double span = table.rows.back()[0] - table.rows.front()[0];
  trace.sample_rate = static_cast<double>(table.rows.size() - 1) / span;
  trace.samples.reserve(table.rows.size());
  for (const auto& r : table.rows) trace.samples.push_back(r[1]);
  return trace;
}

inline void write_psd_csv(const PsdEstimate& psd, const std::filesystem::path& path,
                          bool voltage = false) {
  csv::Writer out(path, voltage ? "f_hz,S_V2_per_hz,ci_low,ci_high"
                                : "f_hz,S_rad2_per_s,ci_low,ci_high");
  for (const auto& p : psd.points) out.row(p.f_hz, p.s, p.ci_low, p.ci_high);
}

}  // namespace spinprobe::spectra
