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

// Decay fitting, CPMG noise spectroscopy, power-law band fits and the
// T2-versus-N scaling fit.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/errors.hpp"
#include "spinprobe/core/parallel.hpp"
#include "spinprobe/fitting.hpp"
#include "spinprobe/qubitsim.hpp"
#include "spinprobe/sequences.hpp"
#include "spinprobe/spectra.hpp"

namespace spinprobe::analysis {

using fit::FitFailure;
using fit::FitResult;

struct DecayPoint {
  double t = 0.0;
  double p_up = 0.0;
  double std_err = 0.0;
};

struct DecayCurve {
  std::vector<DecayPoint> points;
  std::string meta;  // schedule descriptor

  void validate() const {
    if (points.size() < 5) throw PreconditionError("DecayCurve: need >= 5 points");
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (!(points[i].t > points[i - 1].t)) {
        throw PreconditionError("DecayCurve: times must be strictly increasing");
      }
    }
  }
};

// P(t) = p0 exp(-(t/t2)^n) + p_inf.
struct DecayFit {
  enum Param { kP0 = 0, kT2 = 1, kN = 2, kPInf = 3 };

  double p0 = 0.0;
  double t2 = 0.0;
  double n = 1.0;
  double p_inf = 0.0;
  bool n_fixed = false;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  std::array<double, 4> ci95{};  // half-widths; 0 for fixed parameters
  double reduced_chi2 = 0.0;
  int iterations = 0;

  double operator()(double t) const { return p0 * std::exp(-std::pow(t / t2, n)) + p_inf; }
};

struct DecayFitOptions {
  std::optional<double> fix_n;
  int max_restarts = 5;
  std::uint64_t jitter_seed = 0x5eed;
};

namespace detail {

inline double decay_model(const Eigen::VectorXd& x, double t) {
  return x[0] * std::exp(-std::pow(t / x[1], x[2])) + x[3];
}

}  // namespace detail

inline FitResult<DecayFit> fit_decay(const DecayCurve& curve, const DecayFitOptions& options = {}) {
  curve.validate();
  const auto& pts = curve.points;
  const std::size_t m = pts.size();
  double pmin = pts[0].p_up;
  double pmax = pts[0].p_up;
  for (const auto& p : pts) {
    pmin = std::min(pmin, p.p_up);
    pmax = std::max(pmax, p.p_up);
  }
  if (pmax - pmin < 0.2) {
    return FitFailure{"curve does not span a decay (max p - min p < 0.2)", 0, 0.0};
  }
  if (options.fix_n && !(*options.fix_n >= 0.5 && *options.fix_n <= 4.0)) {
    throw PreconditionError("fit_decay: fixed n must lie in [0.5, 4]");
  }

  bool weighted = true;
  for (const auto& p : pts) weighted = weighted && p.std_err > 0.0;
  std::vector<double> sigma(m, 1.0);
  if (weighted) {
    for (std::size_t i = 0; i < m; ++i) sigma[i] = pts[i].std_err;
  }

  // Initial values.
  const std::size_t tail = std::max<std::size_t>(1, (m + 9) / 10);
  double p_inf0 = 0.0;
  for (std::size_t i = m - tail; i < m; ++i) p_inf0 += pts[i].p_up;
  p_inf0 /= static_cast<double>(tail);
  const double p00 = pts[0].p_up - p_inf0;
  const double target = p_inf0 + p00 / std::numbers::e;
  double t20 = pts[0].t;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    if (std::abs(p.p_up - target) < best) {
      best = std::abs(p.p_up - target);
      t20 = p.t;
    }
  }
  const double t_span = pts.back().t;
  if (!(t20 > 0.0)) t20 = 0.5 * t_span;
  const double n0 = options.fix_n.value_or(1.5);

  Eigen::VectorXd lower(4), upper(4);
  lower << -2.0, 1e-6 * t_span, options.fix_n.value_or(0.5), -1.0;
  upper << 2.0, 1e3 * t_span, options.fix_n.value_or(4.0), 2.0;

  auto residual = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(m);
    for (std::size_t i = 0; i < m; ++i) {
      r[i] = (detail::decay_model(x, pts[i].t) - pts[i].p_up) / sigma[i];
    }
    return r;
  };
  auto jacobian = [&](const Eigen::VectorXd& x) {
    Eigen::MatrixXd j(m, 4);
    for (std::size_t i = 0; i < m; ++i) {
      const double t = pts[i].t;
      const double u = t / x[1];
      const double un = u > 0.0 ? std::pow(u, x[2]) : 0.0;
      const double e = std::exp(-un);
      j(i, 0) = e;
      j(i, 1) = x[0] * e * x[2] * un / x[1];
      j(i, 2) = u > 0.0 ? -x[0] * e * un * std::log(u) : 0.0;
      j(i, 3) = 1.0;
      j.row(i) /= sigma[i];
    }
    if (options.fix_n) j.col(2).setZero();
    return j;
  };

  std::mt19937_64 rng(options.jitter_seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::optional<fit::LmSummary> chosen;
  int total_iterations = 0;
  double last_cost = std::numeric_limits<double>::quiet_NaN();
  for (int attempt = 0; attempt <= options.max_restarts; ++attempt) {
    Eigen::VectorXd x0(4);
    x0 << p00, t20, n0, p_inf0;
    if (attempt > 0) {
      x0[0] *= 1.0 + 0.3 * unit(rng);
      x0[1] *= std::exp(unit(rng));
      if (!options.fix_n) x0[2] = 1.0 + 1.5 * (unit(rng) + 1.0);
      x0[3] += 0.05 * unit(rng);
    }
    auto s = fit::levenberg_marquardt(residual, jacobian, x0, lower, upper);
    total_iterations += s.iterations;
    last_cost = s.cost;
    const bool t2_pinned = s.x[1] <= lower[1] * (1 + 1e-9) || s.x[1] >= upper[1] * (1 - 1e-9);
    if (s.converged && !t2_pinned && s.residuals.allFinite()) {
      if (!chosen || s.cost < chosen->cost) chosen = std::move(s);
      // The first clean convergence is accepted; restarts are for failures.
      break;
    }
  }
  if (!chosen) {
    return FitFailure{"no convergence after bounded restarts", total_iterations, last_cost};
  }

  const auto& s = *chosen;
  DecayFit out;
  out.p0 = s.x[0];
  out.t2 = s.x[1];
  out.n = s.x[2];
  out.p_inf = s.x[3];
  out.n_fixed = options.fix_n.has_value();
  out.iterations = total_iterations;
  const int k = out.n_fixed ? 3 : 4;
  const double dof = static_cast<double>(m) - k;
  out.reduced_chi2 = dof > 0 ? s.cost / dof : 0.0;

  Eigen::MatrixXd jac = s.jacobian;
  if (out.n_fixed) {
    Eigen::MatrixXd reduced(m, 3);
    reduced << jac.col(0), jac.col(1), jac.col(3);
    const Eigen::MatrixXd c3 = fit::covariance(reduced, dof > 0 ? out.reduced_chi2 : 1.0);
    const int map[3] = {0, 1, 3};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) out.covariance(map[a], map[b]) = c3(a, b);
    }
  } else {
    out.covariance = fit::covariance(jac, dof > 0 ? out.reduced_chi2 : 1.0);
  }
  const double tq = fit::t_quantile(std::max(dof, 1.0));
  for (int p = 0; p < 4; ++p) out.ci95[p] = tq * std::sqrt(std::max(out.covariance(p, p), 0.0));
  if (!(out.t2 > 0.0) || !std::isfinite(out.t2)) {
    return FitFailure{"non-finite T2", total_iterations, s.cost};
  }
  return out;
}

struct SpectralPoint {
  double f_hz = 0.0;
  double s = 0.0;
};

// f = 1/(2 tau_w), S = pi^2 / (4 T2s).
inline SpectralPoint reconstruct_point(double t2s, double tau_w) {
  if (!(t2s > 0.0) || !(tau_w > 0.0)) {
    throw PreconditionError("reconstruct_point: T2s and tau_w must be > 0");
  }
  return {0.5 / tau_w, std::numbers::pi * std::numbers::pi / (4.0 * t2s)};
}

enum class Engine { kMonteCarlo, kFilterFunction };
enum class ReadoutMode { kExpectation, kSingleShot };

struct ScanProtocol {
  Engine engine = Engine::kMonteCarlo;
  std::size_t n_traj = 500;
  std::size_t n_points = 32;          // N values per decay curve
  double target_coherence = 0.01;     // the sweep runs until W falls below this
  std::size_t max_pulses = 8192;
  std::size_t min_pulses = 5;         // fewer pulses to decay: out of range
  ReadoutMode readout = ReadoutMode::kExpectation;
  std::size_t shots = 100;
  qubit::ReadoutFidelity fidelity{1.0, 1.0};
  qubit::Projection projection = qubit::Projection::kMinus;
  DecayFitOptions fit;
  // Traces up to four times the sequence length (see spectroscopy_scan) plus
  // quasi-static noise down to 1 mHz; without them low-N points are biased
  // at steep spectra.
  qubit::McOptions mc{16, 4.0, {}, std::nullopt, 0, 1e-3};
  // Sharing one trace per trajectory across the N sweep is cheaper but makes
  // the Monte Carlo error common to the whole curve, which then moves T2s.
  bool shared_traces = false;
  qubit::DephasingConvention convention;
  std::uint64_t seed = 1;
};

enum class PointStatus { kOk, kOutOfRange, kFitFailed };

inline const char* to_string(PointStatus s) {
  switch (s) {
    case PointStatus::kOk: return "ok";
    case PointStatus::kOutOfRange: return "out_of_range";
    case PointStatus::kFitFailed: return "fit_failed";
  }
  return "?";
}

struct ScanPoint {
  double tau_w = 0.0;
  double f_hz = 0.0;
  PointStatus status = PointStatus::kOk;
  std::string note;
  std::vector<std::size_t> pulses;
  DecayCurve curve;
  std::optional<DecayFit> fit;
  double s = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct ScanResult {
  spectra::PsdEstimate psd;  // successful points only, ascending f
  std::vector<ScanPoint> points;
};

namespace detail {

inline void finish_point(ScanPoint& point, const DecayFitOptions& options) {
  auto fitted = fit_decay(point.curve, options);
  if (!fitted) {
    point.status = PointStatus::kFitFailed;
    point.note = fitted.failure().reason;
    return;
  }
  const auto& f = fitted.value();
  point.fit = f;
  const auto rp = reconstruct_point(f.t2, point.tau_w);
  point.s = rp.s;
  const double hw = f.ci95[DecayFit::kT2];
  const double k = std::numbers::pi * std::numbers::pi / 4.0;
  point.ci_low = k / (f.t2 + hw);
  point.ci_high = f.t2 > hw ? k / (f.t2 - hw) : std::numeric_limits<double>::infinity();
  point.status = PointStatus::kOk;
}

inline spectra::PsdEstimate collect(const std::vector<ScanPoint>& points) {
  spectra::PsdEstimate psd;
  psd.estimator = spectra::Estimator::kCpmgReconstruction;
  for (const auto& p : points) {
    if (p.status == PointStatus::kOk) psd.points.push_back({p.f_hz, p.s, p.ci_low, p.ci_high});
    else psd.warnings.push_back("f=" + csv::format(p.f_hz) + " Hz " + to_string(p.status) + ": " + p.note);
  }
  std::sort(psd.points.begin(), psd.points.end(),
            [](const auto& a, const auto& b) { return a.f_hz < b.f_hz; });
  return psd;
}

// Smallest N with chi(N) >= -ln(target), from the filter-function integral.
inline std::size_t pulses_to_decay(const spectra::SpectrumModel& model, double tau_w,
                                   const ScanProtocol& protocol) {
  const double goal = -std::log(protocol.target_coherence);
  const qubit::FfOptions ff{protocol.convention, std::nullopt, std::nullopt};
  auto chi = [&](std::size_t n) {
    return qubit::decoherence_ff(model, sequences::make_cpmg(n, tau_w), ff);
  };
  std::size_t hi = 1;
  while (chi(hi) < goal) {
    if (hi >= protocol.max_pulses) return protocol.max_pulses + 1;
    hi = std::min(hi * 2, protocol.max_pulses);
  }
  std::size_t lo = hi / 2;  // chi(lo) < goal unless hi == 1
  if (hi == 1) return 1;
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (chi(mid) >= goal ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace detail

// CPMG noise spectroscopy: for each tau_w the pulse number is swept at fixed
// spacing, the decay in total time N tau_w is fitted, and
// S(1/(2 tau_w)) = pi^2 / (4 T2s). Points whose decay completes within
// fewer than `min_pulses` pulses are out of range; failed fits are gaps.
//
// The pulse range per point is chosen from the filter-function estimate of
// the decay; the curve itself comes from the selected engine.
inline ScanResult spectroscopy_scan(const spectra::SpectrumModel& model,
                                    std::span<const double> tau_grid,
                                    const ScanProtocol& protocol = {}) {
  if (protocol.n_points < 5) throw PreconditionError("spectroscopy_scan: n_points must be >= 5");
  ScanResult result;
  result.points.resize(tau_grid.size());
  for (std::size_t ti = 0; ti < tau_grid.size(); ++ti) {
    const double tau = tau_grid[ti];
    if (!(tau > 0.0)) throw PreconditionError("spectroscopy_scan: tau_w must be > 0");
    ScanPoint& point = result.points[ti];
    point.tau_w = tau;
    point.f_hz = 0.5 / tau;
    point.curve.meta = "cpmg tau_w=" + csv::format(tau);

    const std::size_t n_end = detail::pulses_to_decay(model, tau, protocol);
    if (n_end < protocol.min_pulses) {
      point.status = PointStatus::kOutOfRange;
      point.note = "coherence lost within " + std::to_string(n_end) + " pulses";
      continue;
    }
    const std::size_t n_top = std::min(n_end, protocol.max_pulses);
    for (std::size_t i = 1; i <= protocol.n_points; ++i) {
      const std::size_t n = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(static_cast<double>(i * n_top) /
                                                    static_cast<double>(protocol.n_points))));
      if (point.pulses.empty() || n > point.pulses.back()) point.pulses.push_back(n);
    }
    if (point.pulses.size() < 5) {
      point.status = PointStatus::kOutOfRange;
      point.note = "fewer than 5 distinct pulse numbers";
      continue;
    }
    std::vector<sequences::PulseSchedule> schedules;
    for (std::size_t n : point.pulses) schedules.push_back(sequences::make_cpmg(n, tau));

    std::vector<double> w(schedules.size());
    std::vector<double> w_err(schedules.size(), 0.0);
    const std::uint64_t seed = derive_seed(protocol.seed, ti);
    if (protocol.engine == Engine::kMonteCarlo) {
      auto mc = protocol.mc;
      mc.convention = protocol.convention;
      if (protocol.shared_traces) {
        const auto est = qubit::coherence_mc_batch(model, schedules, protocol.n_traj, seed, mc);
        for (std::size_t i = 0; i < est.size(); ++i) {
          w[i] = est[i].w;
          w_err[i] = est[i].std_err;
        }
      } else {
        for (std::size_t i = 0; i < schedules.size(); ++i) {
          // Bin spacing only needs to be fine against the filter peak at
          // N / (2T), so long sequences get traces of one sequence length.
          auto mc_i = mc;
          mc_i.duration_factor = std::clamp(8.0 / static_cast<double>(point.pulses[i]), 1.0,
                                            std::max(1.0, mc.duration_factor));
          const auto est = qubit::coherence_mc(model, schedules[i], protocol.n_traj,
                                               derive_seed(seed, i + 1), mc_i);
          w[i] = est.w;
          w_err[i] = est.std_err;
        }
      }
    } else {
      const qubit::FfOptions ff{protocol.convention, std::nullopt, std::nullopt};
      for (std::size_t i = 0; i < schedules.size(); ++i) {
        w[i] = qubit::coherence_ff(model, schedules[i], ff);
      }
    }
    std::mt19937_64 rng(derive_seed(seed, 0x5407));
    const double vis = protocol.fidelity.visibility();
    for (std::size_t i = 0; i < schedules.size(); ++i) {
      const double ideal = qubit::spin_up_probability(w[i], protocol.projection);
      DecayPoint dp;
      dp.t = schedules[i].total_time();
      if (protocol.readout == ReadoutMode::kSingleShot) {
        const auto batch = qubit::measure(ideal, protocol.shots, protocol.fidelity, rng);
        dp.p_up = batch.estimated_p;
        dp.std_err = batch.std_err;
      } else {
        dp.p_up = qubit::measured_probability(ideal, protocol.fidelity);
        dp.std_err = 0.5 * vis * w_err[i];
      }
      point.curve.points.push_back(dp);
    }
    detail::finish_point(point, protocol.fit);
  }
  result.psd = detail::collect(result.points);
  return result;
}

struct CurveAtTau {
  double tau_w = 0.0;
  DecayCurve curve;
};

// Reconstruction from externally supplied decay curves.
inline ScanResult reconstruct_from_curves(std::span<const CurveAtTau> curves,
                                          const DecayFitOptions& options = {}) {
  ScanResult result;
  for (const auto& c : curves) {
    ScanPoint point;
    point.tau_w = c.tau_w;
    point.f_hz = 0.5 / c.tau_w;
    point.curve = c.curve;
    detail::finish_point(point, options);
    result.points.push_back(std::move(point));
  }
  result.psd = detail::collect(result.points);
  return result;
}

struct SegmentFit {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
  std::size_t n_points = 0;
  bool fitted = false;
  std::string notice;
  double exponent = 0.0;      // d log S / d log f
  double exponent_ci95 = 0.0;
  double amplitude = 0.0;     // C in S = C / omega^(-exponent)
  double amplitude_ci95 = 0.0;
};

// Log-log regression per band. Edges split the estimate into
// (-inf, e0], (e0, e1], ..., (e_last, inf).
inline std::vector<SegmentFit> fit_powerlaw_segments(const spectra::PsdEstimate& psd,
                                                     std::vector<double> band_edges = {2e3, 2e4}) {
  std::sort(band_edges.begin(), band_edges.end());
  std::vector<SegmentFit> out;
  for (std::size_t b = 0; b <= band_edges.size(); ++b) {
    SegmentFit seg;
    seg.lo_hz = b == 0 ? 0.0 : band_edges[b - 1];
    seg.hi_hz = b == band_edges.size() ? std::numeric_limits<double>::infinity() : band_edges[b];
    std::vector<double> x, y;
    for (const auto& p : psd.points) {
      const bool inside = p.f_hz > seg.lo_hz && p.f_hz <= seg.hi_hz;
      if (inside && p.s > 0.0 && std::isfinite(p.s)) {
        x.push_back(std::log(p.f_hz));
        y.push_back(std::log(p.s));
      }
    }
    seg.n_points = x.size();
    if (x.size() < 3) {
      seg.notice = "skipped: fewer than 3 points in band";
      out.push_back(seg);
      continue;
    }
    const auto line = fit::linear_fit(x, y);
    const double tq = fit::t_quantile(static_cast<double>(x.size() - 2));
    seg.fitted = true;
    seg.exponent = line.slope;
    seg.exponent_ci95 = tq * line.slope_se;
    // S = A f^slope = C (2 pi f)^slope  =>  C = A (2 pi)^(-slope).
    const double log_c = line.intercept - line.slope * std::log(2.0 * std::numbers::pi);
    seg.amplitude = std::exp(log_c);
    const double log_c_se = std::sqrt(std::max(
        0.0, line.intercept_se * line.intercept_se +
                 std::pow(std::log(2.0 * std::numbers::pi) * line.slope_se, 2) -
                 2.0 * std::log(2.0 * std::numbers::pi) * line.cov));
    seg.amplitude_ci95 = seg.amplitude * (std::exp(tq * log_c_se) - 1.0);
    out.push_back(seg);
  }
  return out;
}

struct DetectedLine {
  std::size_t index = 0;  // into psd.points
  double f_hz = 0.0;
  double s = 0.0;
  double prominence = 0.0;  // S over the geometric mean of its neighbours
};

// Interior local maxima standing at least `min_prominence` above the
// geometric mean of the adjacent points.
inline std::vector<DetectedLine> detect_lines(const spectra::PsdEstimate& psd,
                                              double min_prominence = 1.5) {
  std::vector<DetectedLine> out;
  const auto& pts = psd.points;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double a = pts[i - 1].s, b = pts[i].s, c = pts[i + 1].s;
    if (!(a > 0.0 && c > 0.0) || !(b > a && b > c)) continue;
    const double prom = b / std::sqrt(a * c);
    if (prom >= min_prominence) out.push_back({i, pts[i].f_hz, b, prom});
  }
  return out;
}

struct T2Point {
  double n = 0.0;
  double t2 = 0.0;
  double ci95 = 0.0;  // half-width; 0 for unweighted
};

struct ScalingFit {
  double prefactor = 0.0;
  double beta = 0.0;
  double beta_ci95 = 0.0;
  std::optional<double> implied_alpha;  // beta / (1 - beta), only for beta in (0, 1)
  bool flagged = false;
};

// Log-log regression T2 = a N^beta, weighted by the T2 intervals when given.
inline ScalingFit fit_scaling(std::span<const T2Point> points) {
  if (points.size() < 4) throw PreconditionError("fit_scaling: need >= 4 points");
  std::vector<double> x, y, w;
  // Noise-free curves give intervals at rounding level; those are not weights.
  bool weighted = true;
  for (const auto& p : points) weighted = weighted && p.ci95 > 1e-9 * p.t2;
  for (const auto& p : points) {
    if (!(p.n > 0.0) || !(p.t2 > 0.0)) throw PreconditionError("fit_scaling: N and T2 must be > 0");
    x.push_back(std::log(p.n));
    y.push_back(std::log(p.t2));
    const double sigma = p.ci95 / (1.96 * p.t2);
    w.push_back(weighted ? 1.0 / (sigma * sigma) : 1.0);
  }
  const auto line = fit::linear_fit(x, y, w);
  ScalingFit out;
  out.beta = line.slope;
  out.prefactor = std::exp(line.intercept);
  out.beta_ci95 = fit::t_quantile(static_cast<double>(points.size() - 2)) * line.slope_se;
  if (out.beta > 0.0 && out.beta < 1.0) {
    out.implied_alpha = out.beta / (1.0 - out.beta);
  } else {
    out.flagged = true;
  }
  return out;
}

struct T2ScanOptions {
  Engine engine = Engine::kFilterFunction;
  std::size_t n_traj = 500;
  std::size_t n_points = 24;
  double target_coherence = 0.02;
  qubit::ReadoutFidelity fidelity{1.0, 1.0};
  qubit::Projection projection = qubit::Projection::kMinus;
  DecayFitOptions fit;
  qubit::McOptions mc{16, 4.0, {}, std::nullopt, 0};
  qubit::DephasingConvention convention;
  std::optional<double> low_cutoff_hz;  // also the Monte Carlo sub-band edge
  std::uint64_t seed = 1;
};

struct T2Measurement {
  std::size_t n_pulses = 0;
  DecayCurve curve;
  std::optional<DecayFit> fit;
  std::string note;
};

// CPMG decay in total time for each pulse number; the time axis runs to
// where the filter-function coherence reaches target_coherence.
inline std::vector<T2Measurement> cpmg_t2_vs_n(const spectra::SpectrumModel& model,
                                               std::span<const std::size_t> pulse_numbers,
                                               const T2ScanOptions& options = {}) {
  if (options.n_points < 5) throw PreconditionError("cpmg_t2_vs_n: n_points must be >= 5");
  const qubit::FfOptions ff{options.convention, options.low_cutoff_hz, std::nullopt};
  std::vector<T2Measurement> out;
  for (std::size_t k = 0; k < pulse_numbers.size(); ++k) {
    const std::size_t n = pulse_numbers[k];
    if (n < 1) throw PreconditionError("cpmg_t2_vs_n: pulse numbers must be >= 1");
    auto w_at = [&](double t) {
      return qubit::coherence_ff(model, sequences::make_cpmg(n, t / static_cast<double>(n)), ff);
    };
    double hi = 1e-6;
    while (w_at(hi) > options.target_coherence) {
      hi *= 2.0;
      if (hi > 1e4) throw DomainError("cpmg_t2_vs_n: no decay within 1e4 s");
    }
    double lo = hi / 2.0;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (w_at(mid) > options.target_coherence ? lo : hi) = mid;
    }
    T2Measurement m;
    m.n_pulses = n;
    m.curve.meta = "cpmg N=" + std::to_string(n);
    const std::uint64_t seed = derive_seed(options.seed, k);
    for (std::size_t i = 1; i <= options.n_points; ++i) {
      const double t = hi * static_cast<double>(i) / static_cast<double>(options.n_points);
      const auto schedule = sequences::make_cpmg(n, t / static_cast<double>(n));
      double w, w_err = 0.0;
      if (options.engine == Engine::kMonteCarlo) {
        auto mc = options.mc;
        mc.convention = options.convention;
        if (!mc.low_cutoff_hz) mc.low_cutoff_hz = options.low_cutoff_hz;
        const auto est = qubit::coherence_mc(model, schedule, options.n_traj, derive_seed(seed, i), mc);
        w = est.w;
        w_err = est.std_err;
      } else {
        w = qubit::coherence_ff(model, schedule, ff);
      }
      const double ideal = qubit::spin_up_probability(w, options.projection);
      m.curve.points.push_back({t, qubit::measured_probability(ideal, options.fidelity),
                                0.5 * options.fidelity.visibility() * w_err});
    }
    auto fitted = fit_decay(m.curve, options.fit);
    if (fitted) {
      m.fit = fitted.value();
    } else {
      m.note = fitted.failure().reason;
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_decay_fit_csv(const DecayFit& f, const std::filesystem::path& path) {
  csv::Writer out(path, "p0,t2_s,n,p_inf,p0_ci95,t2_ci95,n_ci95,p_inf_ci95,reduced_chi2");
  out.row(f.p0, f.t2, f.n, f.p_inf, f.ci95[0], f.ci95[1], f.ci95[2], f.ci95[3], f.reduced_chi2);
}

inline void write_decay_curve_csv(const DecayCurve& c, const std::filesystem::path& path) {
  csv::Writer out(path, "t_s,p_up,std_err");
  for (const auto& p : c.points) out.row(p.t, p.p_up, p.std_err);
}

}  // namespace spinprobe::analysis
