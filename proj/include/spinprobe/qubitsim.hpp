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

// Single spin qubit forward model: Zeeman and Rabi response, Monte Carlo
// dephasing under synthesized noise, the filter-function decoherence
// integral, and single-shot readout.

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "spinprobe/core/errors.hpp"
#include "spinprobe/core/parallel.hpp"
#include "spinprobe/sequences.hpp"
#include "spinprobe/spectra.hpp"

namespace spinprobe::qubit {

using sequences::PulseSchedule;
using spectra::NoiseTrace;
using spectra::SpectrumModel;

// mu_B / h in Hz/T.
inline constexpr double kBohrMagnetonOverH = 13.996245e9;

struct ReadoutFidelity {
  double fidelity_up = 0.775;
  double fidelity_down = 0.775;
  double visibility() const { return fidelity_up + fidelity_down - 1.0; }
};

struct QubitParams {
  double g_factor = 1.9789;
  double b_dc = 1.4;                        // T
  double rabi_frequency = 1.0 / 2.56e-6;    // Hz, pi time 1.28 us
  double t1 = 1.0;                          // s
  ReadoutFidelity readout;

  double pi_time() const { return 0.5 / rabi_frequency; }

  void validate() const {
    if (!(rabi_frequency > 0.0)) throw PreconditionError("QubitParams: rabi_frequency must be > 0");
    if (!(g_factor > 0.0) || !(b_dc > 0.0)) {
      throw PreconditionError("QubitParams: g_factor and b_dc must be > 0");
    }
    const auto& r = readout;
    if (!(r.fidelity_up >= 0.0 && r.fidelity_up <= 1.0 && r.fidelity_down >= 0.0 &&
          r.fidelity_down <= 1.0)) {
      throw PreconditionError("QubitParams: readout fidelities must lie in [0, 1]");
    }
    if (!(r.visibility() > 0.0 && r.visibility() <= 1.0)) {
      throw PreconditionError("QubitParams: visibility must lie in (0, 1]");
    }
  }
};

inline double zeeman_frequency(double g_factor, double b_tesla) {
  if (!(g_factor > 0.0) || !(b_tesla > 0.0)) {
    throw PreconditionError("zeeman_frequency: g and B must be > 0");
  }
  return g_factor * kBohrMagnetonOverH * b_tesla;
}

// Spin-up probability after a square drive of duration tau from spin down.
inline double rabi_probability(double rabi_hz, double detuning_hz, double tau) {
  if (!(rabi_hz > 0.0)) throw PreconditionError("rabi_probability: Rabi frequency must be > 0");
  const double omega2 = rabi_hz * rabi_hz + detuning_hz * detuning_hz;
  const double s = std::sin(std::numbers::pi * std::sqrt(omega2) * tau);
  return rabi_hz * rabi_hz / omega2 * s * s;
}

// Couples the detuning PSD to the coherence decay. The accumulated phase is
// phase_gain * integral y(t) delta_omega(t) dt, so a Gaussian process gives
// chi = (phase_gain^2 / 2) * integral S |Y|^2 df.
//
// kSpectroscopic (gain 4/pi) is the default: with it the CPMG reconstruction
// S = pi^2 / (4 T2) returns the input white floor. kPhysical (gain 1) is the
// textbook normalization, under which the same reconstruction reports
// pi^2/16 of the input level.
struct DephasingConvention {
  double phase_gain = 4.0 / std::numbers::pi;

  static constexpr DephasingConvention spectroscopic() { return {4.0 / std::numbers::pi}; }
  static constexpr DephasingConvention physical() { return {1.0}; }

  double chi_prefactor() const { return 0.5 * phase_gain * phase_gain; }
};

// kMinus: P_up = (1 - W)/2, full coherence reads as spin down.
enum class Projection { kMinus, kPlus };

inline double spin_up_probability(double w, Projection projection = Projection::kMinus,
                                  double elapsed = 0.0, std::optional<double> t1 = std::nullopt) {
  if (t1 && *t1 > 0.0) w *= std::exp(-elapsed / *t1);
  return projection == Projection::kMinus ? 0.5 * (1.0 - w) : 0.5 * (1.0 + w);
}

// Cumulative trapezoid of the linear interpolant of a trace, queried at
// arbitrary times.
class PhaseIntegrator {
 public:
  explicit PhaseIntegrator(const NoiseTrace& trace)
      : x_(trace.samples), fs_(trace.sample_rate), dt_(1.0 / trace.sample_rate) {
    cumulative_.resize(x_.size());
    double acc = 0.0;
    cumulative_[0] = 0.0;
    for (std::size_t i = 1; i < x_.size(); ++i) {
      acc += 0.5 * dt_ * (x_[i - 1] + x_[i]);
      cumulative_[i] = acc;
    }
  }

  double duration() const { return static_cast<double>(x_.size() - 1) * dt_; }

  // integral_0^t of the interpolated trace.
  double primitive(double t) const {
    const double pos = t * fs_;
    std::size_t i = static_cast<std::size_t>(pos);
    if (i >= x_.size() - 1) i = x_.size() - 2;
    const double u = (pos - static_cast<double>(i)) * dt_;
    const double slope = (x_[i + 1] - x_[i]) * fs_;
    return cumulative_[i] + u * (x_[i] + 0.5 * slope * u);
  }

  double toggled(const PulseSchedule& schedule) const {
    double phi = 0.0;
    for (const auto& s : schedule.segments()) {
      phi += s.sign * (primitive(s.end) - primitive(s.start));
    }
    return phi;
  }

 private:
  const std::vector<double>& x_;
  double fs_;
  double dt_;
  std::vector<double> cumulative_;
};

inline void check_sampling(double sample_rate, double duration, const PulseSchedule& schedule) {
  if (duration + 1e-12 * schedule.total_time() < schedule.total_time()) {
    throw PreconditionError("accumulate_phase: trace shorter than the schedule");
  }
  if (schedule.shortest_segment() * sample_rate < 8.0 - 1e-9) {
    throw PreconditionError("accumulate_phase: need >= 8 samples in the shortest interval");
  }
}

// phi = integral_0^T y(t) delta_omega(t) dt (trapezoidal, ideal pulses).
inline double accumulate_phase(const NoiseTrace& trace, const PulseSchedule& schedule) {
  if (trace.samples.size() < 2) throw PreconditionError("accumulate_phase: trace too short");
  const PhaseIntegrator integrator(trace);
  check_sampling(trace.sample_rate, integrator.duration(), schedule);
  return integrator.toggled(schedule);
}

// Deterministic sinusoidal detuning amplitude * sin(2 pi f t + phase).
struct ToneDrive {
  double amplitude = 0.0;  // rad/s
  double frequency_hz = 0.0;
  std::optional<double> phase;  // nullopt: uniform random per trajectory
};

// integral y(t) A sin(2 pi f t + theta) dt = A Im(exp(i theta) Y(2 pi f)).
inline double tone_phase(const ToneDrive& tone, const PulseSchedule& schedule, double theta) {
  if (tone.amplitude == 0.0) return 0.0;
  const auto y = sequences::filter_transform(schedule, 2.0 * std::numbers::pi * tone.frequency_hz);
  return tone.amplitude * std::imag(std::polar(1.0, theta) * y);
}

struct CoherenceEstimate {
  double w = 1.0;
  double std_err = 0.0;
  double sample_rate = 0.0;
  spectra::FrequencyBand band;  // noise band actually synthesized
};

struct McOptions {
  std::size_t samples_per_segment = 32;
  double duration_factor = 4.0;  // trace duration / longest schedule
  DephasingConvention convention;
  std::optional<ToneDrive> tone;
  unsigned workers = 0;
  // Noise between low_cutoff_hz and the trace band edge df/2 enters as
  // quasi-static sinusoids (8 log bins per octave, exact bin power) whose phase
  // comes from the filter transform. nullopt: nothing below df/2.
  std::optional<double> low_cutoff_hz;
};

namespace detail {

struct SubBand {
  std::vector<double> freq_hz;
  std::vector<double> sigma;  // sqrt of bin power
};

inline SubBand sub_band(const SpectrumModel& model, double lo, double hi) {
  SubBand sb;
  if (!(lo > 0.0) || !(hi > lo)) return sb;
  const auto n = static_cast<std::size_t>(std::ceil(8.0 * std::log2(hi / lo)));
  const double r = std::pow(hi / lo, 1.0 / static_cast<double>(n));
  double a = lo;
  for (std::size_t k = 0; k < n; ++k) {
    const double b = (k + 1 == n) ? hi : a * r;
    const double p = spectra::band_power(model, a, b);
    if (p > 0.0) {
      sb.freq_hz.push_back(std::sqrt(a * b));
      sb.sigma.push_back(std::sqrt(p));
    }
    a = b;
  }
  return sb;
}

}  // namespace detail

// Monte Carlo coherence for several schedules sharing one trace per
// trajectory. Trajectory i uses seed derive_seed(base_seed, i); results do
// not depend on the worker count.
inline std::vector<CoherenceEstimate> coherence_mc_batch(const SpectrumModel& model,
                                                         std::span<const PulseSchedule> schedules,
                                                         std::size_t n_traj,
                                                         std::uint64_t base_seed,
                                                         const McOptions& options = {}) {
  if (n_traj < 100) throw PreconditionError("coherence_mc: n_traj must be >= 100");
  if (options.samples_per_segment < 8) {
    throw PreconditionError("coherence_mc: samples_per_segment must be >= 8");
  }
  if (!(options.duration_factor >= 1.0)) {
    throw PreconditionError("coherence_mc: duration_factor must be >= 1");
  }
  const std::size_t n_sched = schedules.size();
  if (n_sched == 0) return {};
  double shortest = std::numeric_limits<double>::infinity();
  double longest = 0.0;
  for (const auto& s : schedules) {
    shortest = std::min(shortest, s.shortest_segment());
    longest = std::max(longest, s.total_time());
  }
  const double fs = static_cast<double>(options.samples_per_segment) / shortest;
  const std::size_t n_samples = std::max<std::size_t>(
      64, static_cast<std::size_t>(std::ceil(fs * options.duration_factor * longest)) + 1);
  const spectra::Synthesizer synth(model, fs, n_samples);
  const bool silent = synth.variance() == 0.0;
  const double gain = options.convention.phase_gain;
  spectra::FrequencyBand band = synth.band();
  detail::SubBand sub;
  if (options.low_cutoff_hz) {
    if (!(*options.low_cutoff_hz > 0.0)) {
      throw PreconditionError("coherence_mc: low_cutoff_hz must be > 0");
    }
    sub = detail::sub_band(model, *options.low_cutoff_hz, band.lo_hz);
    band.lo_hz = std::min(band.lo_hz, *options.low_cutoff_hz);
  }
  const std::size_t n_sub = sub.freq_hz.size();
  std::vector<std::complex<double>> sub_y(n_sched * n_sub);
  for (std::size_t s = 0; s < n_sched; ++s) {
    for (std::size_t k = 0; k < n_sub; ++k) {
      sub_y[s * n_sub + k] =
          sequences::filter_transform(schedules[s], 2.0 * std::numbers::pi * sub.freq_hz[k]);
    }
  }

  std::vector<double> cosines(n_traj * n_sched);
  parallel_for(
      n_traj,
      [&](std::size_t i) {
        const std::uint64_t seed = derive_seed(base_seed, i);
        double theta = 0.0;
        if (options.tone && !options.tone->phase) {
          std::mt19937_64 rng(derive_seed(seed, 0x70e));
          theta = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
        } else if (options.tone) {
          theta = *options.tone->phase;
        }
        std::optional<NoiseTrace> trace;
        std::optional<PhaseIntegrator> integrator;
        if (!silent) {
          trace = synth.generate(seed);
          integrator.emplace(*trace);
        }
        std::vector<double> qa(n_sub), qb(n_sub);
        if (n_sub > 0) {
          std::mt19937_64 rng(derive_seed(seed, 0x10f));
          std::normal_distribution<double> normal(0.0, 1.0);
          for (std::size_t k = 0; k < n_sub; ++k) {
            qa[k] = normal(rng) * sub.sigma[k];
            qb[k] = normal(rng) * sub.sigma[k];
          }
        }
        for (std::size_t s = 0; s < n_sched; ++s) {
          double phi = integrator ? integrator->toggled(schedules[s]) : 0.0;
          for (std::size_t k = 0; k < n_sub; ++k) {
            const auto y = sub_y[s * n_sub + k];
            phi += qa[k] * y.real() + qb[k] * y.imag();
          }
          if (options.tone) phi += tone_phase(*options.tone, schedules[s], theta);
          cosines[i * n_sched + s] = std::cos(gain * phi);
        }
      },
      options.workers);

  std::vector<CoherenceEstimate> out(n_sched);
  const double n = static_cast<double>(n_traj);
  for (std::size_t s = 0; s < n_sched; ++s) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n_traj; ++i) mean += cosines[i * n_sched + s];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < n_traj; ++i) {
      const double d = cosines[i * n_sched + s] - mean;
      var += d * d;
    }
    var /= (n - 1.0);
    out[s] = {mean, std::sqrt(var / n), fs, band};
  }
  return out;
}

inline CoherenceEstimate coherence_mc(const SpectrumModel& model, const PulseSchedule& schedule,
                                      std::size_t n_traj, std::uint64_t base_seed,
                                      const McOptions& options = {}) {
  return coherence_mc_batch(model, std::span<const PulseSchedule>(&schedule, 1), n_traj, base_seed,
                            options)
      .front();
}

namespace detail {

// Neumaier-compensated sum.
class CompensatedSum {
 public:
  void add(long double v) {
    const long double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      c_ += (sum_ - t) + v;
    } else {
      c_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  long double value() const { return sum_ + c_; }

 private:
  long double sum_ = 0.0L;
  long double c_ = 0.0L;
};

inline bool is_log_exponent(double alpha) { return std::abs(alpha - 1.0) < 1e-7; }

// Autocovariance of C/omega^alpha as a generalized kernel c |u|^(alpha-1).
inline double power_kernel_coefficient(double c_amp, double alpha) {
  return c_amp / (4.0 * std::tgamma(alpha) * std::cos(0.5 * std::numbers::pi * alpha));
}

// G'' = kernel, G(0) = G'(0) = 0, for each spectral component.
inline double g_white(double s0, double u) { return 0.25 * s0 * std::abs(u); }

inline double g_power(const spectra::PowerLawTerm& t, double u) {
  const double a = std::abs(u);
  if (a == 0.0) return 0.0;
  if (is_log_exponent(t.exponent)) {
    return -t.amplitude / (2.0 * std::numbers::pi) * (0.5 * a * a * std::log(a) - 0.75 * a * a);
  }
  const double alpha = t.exponent;
  return power_kernel_coefficient(t.amplitude, alpha) * std::pow(a, alpha + 1.0) /
         (alpha * (alpha + 1.0));
}

inline std::complex<double> line_lambda(const spectra::SpectralLine& l) {
  return {-std::numbers::pi * l.linewidth_hz, 2.0 * std::numbers::pi * l.center_hz};
}

// (exp(z) - 1 - z) / z^2
inline std::complex<double> expm1_minus_z_over_z2(std::complex<double> z) {
  if (std::abs(z) < 1e-3) {
    return 0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0;
  }
  return (std::exp(z) - 1.0 - z) / (z * z);
}

inline double g_line(const spectra::SpectralLine& l, double u) {
  const double a = std::abs(u);
  const auto z = line_lambda(l) * a;
  return l.power * a * a * std::real(expm1_minus_z_over_z2(z));
}

// integral S |Y|^2 df over [0, inf) for arbitrary schedules, via
// -sum_{p,q} w_p w_q G(t_p - t_q) over the toggling boundaries.
inline double overlap_generic(const SpectrumModel& model, const PulseSchedule& schedule) {
  const auto pts = sequences::boundaries(schedule);
  CompensatedSum total;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    for (std::size_t q = p + 1; q < pts.size(); ++q) {
      const double u = pts[q].time - pts[p].time;
      double g = g_white(model.white_level(), u);
      for (const auto& t : model.power_laws()) {
        if (t.amplitude > 0.0) g += g_power(t, u);
      }
      for (const auto& l : model.lines()) {
        if (l.power > 0.0) g += g_line(l, u);
      }
      total.add(-2.0L * pts[p].weight * pts[q].weight * g);
    }
  }
  return static_cast<double>(total.value());
}

// sum_{i} s_i s_{i+d} over the 2N half-intervals of a CPMG-timed schedule,
// whose signs repeat with period 4 as (+, -, -, +).
inline double sign_autocorrelation(std::size_t n_half, std::size_t d) {
  static constexpr int pattern[4] = {1, -1, -1, 1};
  const std::size_t len = n_half - d;
  long long acc = 0;
  for (std::size_t r = 0; r < 4 && r < len; ++r) {
    const long long count = static_cast<long long>((len - 1 - r) / 4 + 1);
    acc += count * pattern[r] * pattern[(r + d) % 4];
  }
  return static_cast<double>(acc);
}

// integral_{-1}^{1} (1 - |x|) k(d + x) dx by Gauss-Legendre on each half.
template <class K>
double triangle_average(K&& k, double d) {
  using boost::math::quadrature::gauss;
  auto left = [&](double x) { return (1.0 + x) * k(d + x); };
  auto right = [&](double x) { return (1.0 - x) * k(d + x); };
  return gauss<double, 10>::integrate(left, -1.0, 0.0) + gauss<double, 10>::integrate(right, 0.0, 1.0);
}

// Same integral for CPMG timing in O(N): the pair integral of two
// half-intervals depends only on their index distance d.
inline double overlap_uniform(const SpectrumModel& model, const PulseSchedule& schedule) {
  const std::size_t n_half = 2 * schedule.pulse_count();
  const double h = schedule.total_time() / static_cast<double>(n_half);
  constexpr std::size_t kDirect = 32;

  struct PowerTerm {
    double scale;  // Q(d) = scale * q(d)
    double alpha;
    bool log;
  };
  std::vector<PowerTerm> powers;
  for (const auto& t : model.power_laws()) {
    if (t.amplitude <= 0.0) continue;
    if (is_log_exponent(t.exponent)) {
      powers.push_back({-t.amplitude / (2.0 * std::numbers::pi) * h * h, 1.0, true});
    } else {
      powers.push_back({power_kernel_coefficient(t.amplitude, t.exponent) *
                            std::pow(h, t.exponent + 1.0),
                        t.exponent, false});
    }
  }

  auto q_power = [&](const PowerTerm& p, std::size_t d) -> double {
    if (p.log) {
      auto g = [](double x) {
        return x == 0.0 ? 0.0 : 0.5 * x * x * std::log(std::abs(x)) - 0.75 * x * x;
      };
      if (d == 0) return 2.0 * g(1.0);
      const double dd = static_cast<double>(d);
      if (d <= kDirect) return g(dd + 1.0) - 2.0 * g(dd) + g(dd - 1.0);
      return triangle_average([](double x) { return std::log(x); }, dd);
    }
    const double a = p.alpha;
    const double norm = 1.0 / (a * (a + 1.0));
    if (d == 0) return 2.0 * norm;
    const double dd = static_cast<double>(d);
    if (d <= kDirect) {
      return norm * (std::pow(dd + 1.0, a + 1.0) - 2.0 * std::pow(dd, a + 1.0) +
                     std::pow(dd - 1.0, a + 1.0));
    }
    return triangle_average([a](double x) { return std::pow(x, a - 1.0); }, dd);
  };

  CompensatedSum total;
  for (std::size_t d = 0; d < n_half; ++d) {
    const double acf = sign_autocorrelation(n_half, d);
    if (acf == 0.0) continue;
    long double q = 0.0L;
    if (d == 0) q += 0.5 * model.white_level() * h;
    for (const auto& p : powers) q += p.scale * q_power(p, d);
    for (const auto& l : model.lines()) {
      if (l.power <= 0.0) continue;
      const auto z = line_lambda(l) * h;
      if (d == 0) {
        q += l.power * h * h * 2.0 * std::real(expm1_minus_z_over_z2(z));
      } else {
        const auto shape = std::abs(z) < 1e-8 ? std::complex<double>(1.0)
                                              : 2.0 * std::sinh(0.5 * z) / z;
        q += l.power * h * h *
             std::real(std::exp(z * static_cast<double>(d)) * shape * shape);
      }
    }
    total.add((d == 0 ? 1.0L : 2.0L) * acf * q);
  }
  return static_cast<double>(total.value());
}

inline double overlap_full(const SpectrumModel& model, const PulseSchedule& schedule) {
  return schedule.is_uniform() ? overlap_uniform(model, schedule) : overlap_generic(model, schedule);
}

// integral_a^b S |Y|^2 df by 15-point Gauss-Legendre panels: geometric
// below 1/(8T), width <= 1/(4T) above, refined around lines.
inline double overlap_numeric(const SpectrumModel& model, const PulseSchedule& schedule, double a,
                              double b) {
  using boost::math::quadrature::gauss;
  if (!(b > a)) return 0.0;
  const double t = schedule.total_time();
  const double width = 0.25 / t;
  std::vector<double> cuts{a, b};
  const double knee = std::min(b, 0.125 / t);
  if (a < knee) {
    double x = knee;
    const double floor_x = a > 0.0 ? a : knee * 1e-15;
    while (x > floor_x) {
      cuts.push_back(x);
      x *= 0.5;
    }
    if (a == 0.0) cuts.push_back(floor_x);
  }
  for (const auto& l : model.lines()) {
    if (l.power <= 0.0) continue;
    const double hw = 0.5 * l.linewidth_hz;
    for (double k : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0}) {
      for (double sgn : {-1.0, 1.0}) {
        const double x = l.center_hz + sgn * k * hw;
        if (x > a && x < b) cuts.push_back(x);
      }
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  auto integrand = [&](double f) {
    return spectra::eval_psd(model, f) * sequences::filter_function(schedule, f);
  };
  double total = 0.0;
  std::size_t panels = 0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double lo = cuts[i];
    const double hi = cuts[i + 1];
    if (lo == 0.0) continue;  // below the geometric floor, negligible
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi - lo) / width)));
    panels += m;
    if (panels > 4'000'000) throw DomainError("coherence_ff: frequency band too wide to integrate");
    const double step = (hi - lo) / static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double p0 = lo + step * static_cast<double>(j);
      total += gauss<double, 15>::integrate(integrand, p0, j + 1 == m ? hi : p0 + step);
    }
  }
  return total;
}

// integral_x^inf using the high-frequency average |Y|^2 = sum w_k^2 / omega^2.
inline double overlap_asymptotic_tail(const SpectrumModel& model, const PulseSchedule& schedule,
                                      double x) {
  double w2 = 0.0;
  for (const auto& b : sequences::boundaries(schedule)) w2 += b.weight * b.weight;
  const double two_pi = 2.0 * std::numbers::pi;
  double tail = model.white_level() * w2 / (two_pi * two_pi * x);
  for (const auto& t : model.power_laws()) {
    if (t.amplitude <= 0.0) continue;
    tail += t.amplitude * w2 * std::pow(two_pi, -t.exponent - 2.0) * std::pow(x, -t.exponent - 1.0) /
            (t.exponent + 1.0);
  }
  for (const auto& l : model.lines()) {
    if (l.power <= 0.0) continue;
    const double above = l.power - spectra::detail::lorentzian_area(l, 0.0, x);
    const double f = std::max(l.center_hz, x);
    tail += above * w2 / (two_pi * two_pi * f * f);
  }
  return tail;
}

}  // namespace detail

struct FfOptions {
  DephasingConvention convention;
  std::optional<double> low_cutoff_hz;   // noise below is ignored
  std::optional<double> high_cutoff_hz;  // noise above is ignored
};

// integral S(f) |Y(2 pi f)|^2 df over the selected band, in rad^2.
inline double overlap_integral(const SpectrumModel& model, const PulseSchedule& schedule,
                               std::optional<double> low_cutoff_hz = std::nullopt,
                               std::optional<double> high_cutoff_hz = std::nullopt) {
  const double lo = low_cutoff_hz.value_or(0.0);
  const double hi = high_cutoff_hz.value_or(std::numeric_limits<double>::infinity());
  if (!(lo >= 0.0) || !(hi > lo)) throw PreconditionError("coherence_ff: requires 0 <= lo < hi");
  if (model.is_silent()) return 0.0;

  const int order = sequences::low_frequency_order(schedule);
  bool divergent = false;
  for (const auto& t : model.power_laws()) {
    if (t.amplitude <= 0.0) continue;
    if (t.exponent >= 2.0 * order + 1.0 - 1e-12) divergent = true;
    for (double odd : {3.0, 5.0}) {
      if (std::abs(t.exponent - odd) < 1e-7 && !divergent) {
        throw DomainError("coherence_ff: odd integer exponents >= 3 are not supported");
      }
    }
  }
  const double f_asym = 8.0 * 0.5 / schedule.shortest_segment();
  auto upper = [&](double x) {
    if (std::isinf(x)) return 0.0;
    if (x >= f_asym) return detail::overlap_asymptotic_tail(model, schedule, x);
    return detail::overlap_numeric(model, schedule, x, f_asym) +
           detail::overlap_asymptotic_tail(model, schedule, f_asym);
  };
  if (divergent) {
    if (lo <= 0.0) {
      throw DomainError(
          "coherence_ff: noise exponent too steep for this schedule without a low-frequency cutoff");
    }
    return upper(lo) - upper(hi);
  }
  double total = detail::overlap_full(model, schedule);
  if (lo > 0.0) total -= detail::overlap_numeric(model, schedule, 0.0, lo);
  total -= upper(hi);
  return std::max(total, 0.0);
}

inline double decoherence_ff(const SpectrumModel& model, const PulseSchedule& schedule,
                             const FfOptions& options = {}) {
  return options.convention.chi_prefactor() *
         overlap_integral(model, schedule, options.low_cutoff_hz, options.high_cutoff_hz);
}

// W = exp(-chi).
inline double coherence_ff(const SpectrumModel& model, const PulseSchedule& schedule,
                           const FfOptions& options = {}) {
  return std::exp(-decoherence_ff(model, schedule, options));
}

struct ShotBatch {
  std::size_t shots = 0;
  std::size_t ups = 0;
  double estimated_p = 0.0;
  double std_err = 0.0;
};

inline double measured_probability(double p_ideal, const ReadoutFidelity& readout) {
  return readout.fidelity_up * p_ideal + (1.0 - readout.fidelity_down) * (1.0 - p_ideal);
}

// Bernoulli readout of `shots` single shots.
template <class Rng>
ShotBatch measure(double p_ideal, std::size_t shots, const ReadoutFidelity& readout, Rng& rng) {
  if (shots < 1) throw PreconditionError("measure: shots must be >= 1");
  const double p = std::clamp(measured_probability(std::clamp(p_ideal, 0.0, 1.0), readout), 0.0, 1.0);
  std::bernoulli_distribution shot(p);
  ShotBatch batch;
  batch.shots = shots;
  for (std::size_t i = 0; i < shots; ++i) batch.ups += shot(rng) ? 1 : 0;
  batch.estimated_p = static_cast<double>(batch.ups) / static_cast<double>(shots);
  batch.std_err =
      std::sqrt(std::max(batch.estimated_p * (1.0 - batch.estimated_p), 0.25 / static_cast<double>(shots)) /
                static_cast<double>(shots));
  return batch;
}

}  // namespace spinprobe::qubit
