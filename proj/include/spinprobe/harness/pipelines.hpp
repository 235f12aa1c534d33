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

// One pipeline per experiment kind, the plot-data file, and the run /
// rerun entry points with their lock file and manifest.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinprobe/analysis.hpp"
#include "spinprobe/benchmarking.hpp"
#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/parallel.hpp"
#include "spinprobe/harness/config.hpp"
#include "spinprobe/harness/feedback.hpp"
#include "spinprobe/harness/manifest.hpp"
#include "spinprobe/qubitsim.hpp"
#include "spinprobe/sequences.hpp"
#include "spinprobe/spectra.hpp"
#include "spinprobe/starktone.hpp"

namespace spinprobe::harness {

namespace fs = std::filesystem;

struct PlotSeries {
  std::string name;
  std::vector<double> x, y, err;
};

struct Plot {
  std::string id;
  std::string title;
  std::string x_label, x_unit, y_label, y_unit;
  bool log_x = false;
  bool log_y = false;
  std::vector<PlotSeries> series;
  // Heatmaps: z[iy][ix] over the x and y axes.
  std::vector<double> grid_x, grid_y;
  std::vector<std::vector<double>> grid_z;
  std::string z_label;

  Json to_json() const {
    Json j{{"id", id},
           {"title", title},
           {"x_axis", {{"label", x_label}, {"unit", x_unit}, {"log", log_x}}},
           {"y_axis", {{"label", y_label}, {"unit", y_unit}, {"log", log_y}}}};
    if (!grid_z.empty()) {
      j["type"] = "heatmap";
      j["x"] = grid_x;
      j["y"] = grid_y;
      j["z"] = grid_z;
      j["z_label"] = z_label;
    } else {
      j["type"] = "series";
      j["series"] = Json::array();
      for (const auto& s : series) {
        j["series"].push_back({{"name", s.name}, {"x", s.x}, {"y", s.y}, {"error", s.err}});
      }
    }
    return j;
  }
};

// Per-run state handed to the pipelines. File writes happen on the calling
// thread only.
class RunContext {
 public:
  RunContext(fs::path dir, RunManifest& manifest) : dir_(std::move(dir)), manifest_(manifest) {}

  fs::path file(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void plot(Plot p) { plots_.push_back(std::move(p)); }
  void failure(const std::string& what) { manifest_.failures.push_back(what); }
  StageRecord& stage() { return manifest_.stages.back(); }
  const std::vector<std::string>& files() const { return files_; }
  const std::vector<Plot>& plots() const { return plots_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  RunManifest& manifest_;
  std::vector<std::string> files_;
  std::vector<Plot> plots_;
};

namespace pipeline {

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return v;
}

inline std::vector<double> logspace(double a, double b, std::size_t n) {
  auto v = linspace(std::log(a), std::log(b), n);
  for (auto& x : v) x = std::exp(x);
  return v;
}

inline void rabi_chevron(const ExperimentConfig& cfg, const RabiProtocol& p, std::uint64_t seed,
                         RunContext& ctx) {
  const auto det = linspace(-0.5 * p.detuning_span_hz, 0.5 * p.detuning_span_hz, p.n_detuning);
  const auto times = linspace(0.0, p.t_max_s, p.n_time);
  Plot plot{"rabi_chevron", "Rabi chevron", "drive duration", "s", "detuning", "Hz"};
  plot.grid_x = times;
  plot.grid_y = det;
  plot.z_label = "P_up";
  csv::Writer out(ctx.file("chevron.csv"),
                  p.shots ? "detuning_hz,time_s,p_up,p_measured,std_err" : "detuning_hz,time_s,p_up");
  double best = -1.0, best_det = 0.0, best_t = 0.0;
  for (std::size_t i = 0; i < det.size(); ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < times.size(); ++j) {
      const double pu = qubit::rabi_probability(cfg.qubit.rabi_frequency, det[i], times[j]);
      if (pu > best + 1e-15) {
        best = pu;
        best_det = det[i];
        best_t = times[j];
      }
      if (p.shots) {
        std::mt19937_64 rng(derive_seed(seed, i, j));
        const auto b = qubit::measure(pu, p.shots, cfg.qubit.readout, rng);
        out.row(det[i], times[j], pu, b.estimated_p, b.std_err);
        row.push_back(b.estimated_p);
      } else {
        out.row(det[i], times[j], pu);
        row.push_back(pu);
      }
    }
    plot.grid_z.push_back(std::move(row));
  }
  csv::Writer summary(ctx.file("chevron_summary.csv"), "max_p_up,detuning_at_max_hz,time_at_max_s,pi_time_s");
  summary.row(best, best_det, best_t, cfg.qubit.pi_time());
  ctx.plot(std::move(plot));
}

inline void decay(const ExperimentConfig& cfg, const DecayProtocol& p, std::uint64_t seed,
                  RunContext& ctx) {
  const bool ramsey = cfg.kind == ExperimentKind::kRamsey;
  auto schedule_at = [&](double t) { return ramsey ? sequences::make_ramsey(t) : sequences::make_hahn(t); };
  const qubit::FfOptions ff{cfg.convention, p.low_cutoff_hz, std::nullopt};
  double t_max = p.t_max_s;
  if (t_max == 0.0) {
    try {
      t_max = 1e-7;
      while (qubit::coherence_ff(*cfg.spectrum, schedule_at(t_max), ff) > 0.05) {
        t_max *= 1.25;
        if (t_max > 1e3) throw DomainError("no decay within 1e3 s");
      }
    } catch (const DomainError& e) {
      throw ConfigError("protocol.t_max_s", std::string("cannot choose automatically (") + e.what() +
                                                "); set t_max_s or low_cutoff_hz");
    }
  }
  analysis::DecayCurve curve;
  curve.meta = ramsey ? "ramsey" : "hahn";
  std::mt19937_64 rng(derive_seed(seed, 0x5407));
  qubit::McOptions mc;
  mc.convention = cfg.convention;
  mc.low_cutoff_hz = p.low_cutoff_hz;
  for (std::size_t i = 1; i <= p.n_points; ++i) {
    const double t = t_max * static_cast<double>(i) / static_cast<double>(p.n_points);
    const auto s = schedule_at(t);
    double w;
    if (p.engine == CoherenceEngine::kMonteCarlo) {
      w = qubit::coherence_mc(*cfg.spectrum, s, p.n_traj, derive_seed(seed, i), mc).w;
    } else {
      try {
        w = qubit::coherence_ff(*cfg.spectrum, s, ff);
      } catch (const DomainError& e) {
        throw ConfigError("protocol.low_cutoff_hz", e.what());
      }
    }
    const auto b = qubit::measure(qubit::spin_up_probability(w, p.projection), p.shots, cfg.qubit.readout, rng);
    curve.points.push_back({t, b.estimated_p, b.std_err});
  }
  analysis::write_decay_curve_csv(curve, ctx.file("decay_curve.csv"));
  Plot plot{curve.meta + "_decay", ramsey ? "Ramsey decay" : "Hahn echo decay", "total time", "s", "P_up", ""};
  PlotSeries data{"measured"};
  for (const auto& pt : curve.points) {
    data.x.push_back(pt.t);
    data.y.push_back(pt.p_up);
    data.err.push_back(pt.std_err);
  }
  plot.series.push_back(data);
  const auto fitted = analysis::fit_decay(curve);
  if (fitted) {
    analysis::write_decay_fit_csv(fitted.value(), ctx.file("decay_fit.csv"));
    PlotSeries model{"fit"};
    for (double t : linspace(0.0, t_max, 200)) {
      Eigen::VectorXd x(4);
      x << fitted->p0, fitted->t2, fitted->n, fitted->p_inf;
      model.x.push_back(t);
      model.y.push_back(analysis::detail::decay_model(x, t));
    }
    plot.series.push_back(model);
  } else {
    ctx.failure(curve.meta + " decay fit: " + fitted.failure().reason);
  }
  ctx.plot(std::move(plot));
}

inline void t2_vs_n(const ExperimentConfig& cfg, const T2VsNProtocol& p, std::uint64_t seed,
                    RunContext& ctx) {
  auto options = p.options;
  options.seed = seed;
  const auto result = analysis::cpmg_t2_vs_n(*cfg.spectrum, p.pulse_numbers, options);
  std::vector<analysis::T2Point> points;
  csv::Writer out(ctx.file("t2_vs_n.csv"), "n_pulses,t2_s,t2_ci95,stretch_n");
  Plot plot{"cpmg_t2_vs_n", "CPMG T2 against pulse number", "N", "", "T2", "s", true, true};
  PlotSeries data{"T2"};
  for (const auto& m : result) {
    analysis::write_decay_curve_csv(m.curve, ctx.file("decay_n" + std::to_string(m.n_pulses) + ".csv"));
    if (!m.fit) {
      ctx.failure("N=" + std::to_string(m.n_pulses) + ": " + m.note);
      continue;
    }
    out.row(m.n_pulses, m.fit->t2, m.fit->ci95[1], m.fit->n);
    points.push_back({static_cast<double>(m.n_pulses), m.fit->t2, m.fit->ci95[1]});
    data.x.push_back(static_cast<double>(m.n_pulses));
    data.y.push_back(m.fit->t2);
    data.err.push_back(m.fit->ci95[1]);
  }
  plot.series.push_back(data);
  if (points.size() >= 4) {
    const auto s = analysis::fit_scaling(points);
    csv::Writer sc(ctx.file("scaling.csv"), "prefactor_s,beta,beta_ci95,implied_alpha,flagged");
    sc.row(s.prefactor, s.beta, s.beta_ci95, s.implied_alpha.value_or(std::nan("")), s.flagged ? 1 : 0);
    PlotSeries line{"fit"};
    for (const auto& pt : points) {
      line.x.push_back(pt.n);
      line.y.push_back(s.prefactor * std::pow(pt.n, s.beta));
    }
    plot.series.push_back(line);
    if (s.flagged) ctx.stage().notes.push_back("scaling exponent outside (0, 1)");
  } else {
    ctx.failure("scaling fit: fewer than 4 successful T2 fits");
  }
  ctx.plot(std::move(plot));
}

inline void spectroscopy(const ExperimentConfig& cfg, const SpectroscopyProtocol& p, std::uint64_t seed,
                         RunContext& ctx) {
  const auto freqs = p.log_spacing ? logspace(p.f_min_hz, p.f_max_hz, p.n_freq)
                                   : linspace(p.f_min_hz, p.f_max_hz, p.n_freq);
  std::vector<double> taus;
  for (double f : freqs) taus.push_back(0.5 / f);
  auto scan = p.scan;
  scan.seed = seed;
  const auto result = analysis::spectroscopy_scan(*cfg.spectrum, taus, scan);
  spectra::write_psd_csv(result.psd, ctx.file("psd.csv"));
  csv::Writer pts(ctx.file("scan_points.csv"), "f_hz,tau_w_s,status,t2_s,stretch_n,n_max,s_rad2_per_s");
  for (const auto& pt : result.points) {
    const double nan = std::nan("");
    pts.row(pt.f_hz, pt.tau_w, std::string(analysis::to_string(pt.status)), pt.fit ? pt.fit->t2 : nan,
            pt.fit ? pt.fit->n : nan, pt.pulses.empty() ? std::size_t{0} : pt.pulses.back(),
            pt.status == analysis::PointStatus::kOk ? pt.s : nan);
    if (pt.status == analysis::PointStatus::kFitFailed) {
      ctx.failure("spectroscopy f=" + csv::format(pt.f_hz) + " Hz: " + pt.note);
    } else if (pt.status == analysis::PointStatus::kOutOfRange) {
      ctx.stage().notes.push_back("f=" + csv::format(pt.f_hz) + " Hz out of range: " + pt.note);
    }
  }
  const auto segs = analysis::fit_powerlaw_segments(result.psd, p.band_edges);
  csv::Writer sg(ctx.file("segments.csv"),
                 "lo_hz,hi_hz,n_points,fitted,exponent,exponent_ci95,amplitude,amplitude_ci95");
  for (const auto& s : segs) {
    sg.row(s.lo_hz, s.hi_hz, s.n_points, s.fitted ? 1 : 0, s.exponent, s.exponent_ci95, s.amplitude,
           s.amplitude_ci95);
    if (!s.fitted) ctx.stage().notes.push_back("band " + csv::format(s.lo_hz) + "-" + csv::format(s.hi_hz) + " Hz " + s.notice);
  }
  csv::Writer ln(ctx.file("lines.csv"), "f_hz,s_rad2_per_s,prominence");
  for (const auto& l : analysis::detect_lines(result.psd)) ln.row(l.f_hz, l.s, l.prominence);

  Plot plot{"noise_spectrum", "Reconstructed noise spectrum", "frequency", "Hz", "S", "rad^2/s", true, true};
  PlotSeries data{"reconstructed"};
  PlotSeries truth{"input model"};
  for (const auto& pt : result.psd.points) {
    data.x.push_back(pt.f_hz);
    data.y.push_back(pt.s);
    data.err.push_back(0.5 * (pt.ci_high - pt.ci_low));
    truth.x.push_back(pt.f_hz);
    truth.y.push_back(spectra::eval_psd(*cfg.spectrum, pt.f_hz));
  }
  plot.series = {data, truth};
  ctx.plot(std::move(plot));
}

inline int clifford_of(const std::string& gate) {
  static const std::map<std::string, rb::Primitive> names{
      {"X90", rb::Primitive::kX90},   {"-X90", rb::Primitive::kMinusX90}, {"Y90", rb::Primitive::kY90},
      {"-Y90", rb::Primitive::kMinusY90}, {"X180", rb::Primitive::kX180}, {"Y180", rb::Primitive::kY180}};
  return rb::CliffordGroup::instance().find(rb::primitive_unitary(names.at(gate)));
}

inline rb::ErrorModel rbm_error(const RbmProtocol& p) {
  switch (p.error) {
    case RbmErrorKind::kDepolarizing:
      if (p.target_clifford_fidelity) {
        return rb::Depolarizing{rb::depolarizing_for_decay(1.0 - 2.0 * (1.0 - *p.target_clifford_fidelity))};
      }
      return rb::Depolarizing{p.depolarizing};
    case RbmErrorKind::kQuasiStatic: return rb::QuasiStaticDetuning{p.sigma_rad_per_s};
    case RbmErrorKind::kRotation: return rb::RotationAngleError{p.rotation_epsilon};
  }
  return rb::Depolarizing{};
}

inline PlotSeries survival_series(const std::string& name, const std::vector<rb::SurvivalPoint>& s) {
  PlotSeries out{name};
  for (const auto& x : s) {
    out.x.push_back(static_cast<double>(x.m));
    out.y.push_back(x.mean);
    out.err.push_back(x.std_err);
  }
  return out;
}

inline void write_rbm_fit(const rb::RbmFit& f, const fs::path& path) {
  csv::Writer out(path, "a,p,b,p_ci95,p_clamped,f_clifford,f_primitive");
  out.row(f.a, f.p, f.b, f.p_ci95, f.p_clamped ? 1 : 0, f.f_clifford, f.f_primitive);
}

inline void rbm(const ExperimentConfig& cfg, const RbmProtocol& p, std::uint64_t seed, RunContext& ctx) {
  const auto model = rbm_error(p);
  auto settings = p.settings;
  settings.seed = seed;
  const auto ref = rb::simulate_rbm(model, settings);
  Plot plot{"rbm", "Randomized benchmarking", "number of Cliffords M", "", "survival", ""};
  const bool interleaved = cfg.kind == ExperimentKind::kInterleavedRbm;
  rb::write_survival_csv(ref.survival, ctx.file(interleaved ? "survival_reference.csv" : "survival.csv"));
  plot.series.push_back(survival_series("reference", ref.survival));
  if (ref.fit) {
    write_rbm_fit(ref.fit.value(), ctx.file(interleaved ? "rbm_fit_reference.csv" : "rbm_fit.csv"));
    if (ref.fit->p_clamped) ctx.stage().notes.push_back("reference decay clamped at p = 1");
  } else {
    ctx.failure("rbm reference fit: " + ref.fit.failure().reason);
  }
  if (interleaved) {
    settings.interleave = clifford_of(p.interleaved_gate);
    settings.seed = derive_seed(seed, 1);
    const auto il = rb::simulate_rbm(model, settings);
    rb::write_survival_csv(il.survival, ctx.file("survival_interleaved.csv"));
    plot.series.push_back(survival_series("interleaved " + p.interleaved_gate, il.survival));
    if (il.fit) {
      write_rbm_fit(il.fit.value(), ctx.file("rbm_fit_interleaved.csv"));
    } else {
      ctx.failure("rbm interleaved fit: " + il.fit.failure().reason);
    }
    if (ref.fit && il.fit) {
      const auto g = rb::interleaved_fidelity(ref.fit->p, il.fit->p);
      csv::Writer out(ctx.file("interleaved.csv"), "gate,p_ref,p_int,gate_fidelity,unphysical");
      out.row(p.interleaved_gate, ref.fit->p, il.fit->p, g.fidelity, g.unphysical ? 1 : 0);
      if (g.unphysical) ctx.stage().notes.push_back("interleaved decay exceeds the reference");
    }
  }
  ctx.plot(std::move(plot));
}

inline void stark_map(const StarkProtocol& p, std::uint64_t seed, RunContext& ctx) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, p.jitter_hz);
  std::vector<stark::GridPoint> grid;
  Plot plot{"stark_map", "ESR frequency over gate voltages", "V_G1", "V", "V_G2", "V"};
  plot.z_label = "f_ESR - f0 (Hz)";
  const double c1 = p.map.reference_voltages.at("G1");
  const double c2 = p.map.reference_voltages.at("G2");
  for (std::size_t j = 0; j < p.n_g2; ++j) {
    const double v2 = c2 + (static_cast<double>(j) - 0.5 * static_cast<double>(p.n_g2 - 1)) * p.step_v;
    plot.grid_y.push_back(v2);
    std::vector<double> row;
    for (std::size_t i = 0; i < p.n_g1; ++i) {
      const double v1 = c1 + (static_cast<double>(i) - 0.5 * static_cast<double>(p.n_g1 - 1)) * p.step_v;
      if (j == 0) plot.grid_x.push_back(v1);
      const double f = stark::esr_frequency(p.map, {{"G1", v1 - c1}, {"G2", v2 - c2}}) +
                       (p.jitter_hz > 0.0 ? jitter(rng) : 0.0);
      grid.push_back({v1, v2, f});
      row.push_back(f - p.map.f0_ref);
    }
    plot.grid_z.push_back(std::move(row));
  }
  csv::Writer g(ctx.file("stark_grid.csv"), "v_g1,v_g2,f_hz");
  for (const auto& x : grid) g.row(x.v_g1, x.v_g2, x.f_hz);
  try {
    const auto fit = stark::fit_stark_map(grid);
    csv::Writer out(ctx.file("stark_fit.csv"),
                    "f0_ref_hz,g1_hz_per_volt,g2_hz_per_volt,g1_reference_v,g2_reference_v,residual_rms_hz");
    out.row(fit.map.f0_ref, fit.map.coefficients.at("G1"), fit.map.coefficients.at("G2"),
            fit.map.reference_voltages.at("G1"), fit.map.reference_voltages.at("G2"), fit.residual_rms);
  } catch (const RankError& e) {
    ctx.failure(std::string("stark plane fit: ") + e.what());
  }
  ctx.plot(std::move(plot));
}

inline void tone_scan(const ExperimentConfig& cfg, const ToneProtocol& p, std::uint64_t seed,
                      RunContext& ctx) {
  std::vector<double> taus;
  for (double f : p.columns_hz) taus.push_back(0.5 / f);
  auto options = p.options;
  options.seed = seed;
  const auto scan =
      stark::tone_scan(*cfg.spectrum, p.tone, p.map, taus, p.total_time_s, p.amplitudes_vpp, options);
  for (const auto& n : scan.notices) ctx.stage().notes.push_back(n);
  stark::write_tone_map_csv(scan, ctx.file("tone_map.csv"));

  Plot plot{"tone_scan", "CPMG scan under a gate tone", "1/(2 tau_w)", "Hz", "tone amplitude", "Vpp"};
  plot.z_label = "P_up";
  std::vector<double> cols;
  for (const auto& c : scan.cells) {
    if (cols.empty() || c.f_hz != cols.back()) {
      if (std::find(cols.begin(), cols.end(), c.f_hz) == cols.end()) cols.push_back(c.f_hz);
    }
  }
  plot.grid_x = cols;
  plot.grid_y = p.amplitudes_vpp;
  plot.grid_z.assign(p.amplitudes_vpp.size(), std::vector<double>(cols.size(), 0.0));
  for (const auto& c : scan.cells) {
    const auto ix = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), c.f_hz) - cols.begin());
    const auto iy = static_cast<std::size_t>(
        std::find(p.amplitudes_vpp.begin(), p.amplitudes_vpp.end(), c.amplitude_pp) - p.amplitudes_vpp.begin());
    plot.grid_z[iy][ix] = c.p_up;
  }
  csv::Writer det(ctx.file("dips.csv"),
                  "harmonic,column_f_hz,amplitude_vpp,p_column,off_median,pooled_se,significance,detected");
  csv::Writer thr(ctx.file("thresholds.csv"), "harmonic,column_f_hz,threshold_vpp");
  for (int k = 1; k <= p.harmonics; ++k) {
    const double target = p.tone.f_tone_hz / k;
    // Nearest scan column to f_tone / k.
    double best = -1.0;
    for (double f : cols) {
      if (best < 0.0 || std::abs(f - target) < std::abs(best - target)) best = f;
    }
    if (best < 0.0 || std::abs(best - target) > 0.02 * target) continue;
    const auto d = stark::detect_dips(scan, best, p.tone.f_tone_hz);
    for (const auto& t : d.per_amplitude) {
      det.row(k, best, t.amplitude_pp, t.p_column, t.off_median, t.pooled_se, t.significance, t.detected ? 1 : 0);
    }
    thr.row(k, best, d.threshold_pp.value_or(std::nan("")));
  }
  const double tau1 = 0.5 / p.tone.f_tone_hz;
  const auto n1 = static_cast<std::size_t>(std::max(1.0, std::round(p.total_time_s / tau1)));
  csv::Writer hw(ctx.file("harmonic_weights.csv"), "k,weight");
  for (const auto& h : stark::harmonic_weights(tau1, n1, p.tone.f_tone_hz, p.harmonics)) hw.row(h.k, h.weight);
  ctx.plot(std::move(plot));
}

inline void voltage_psd(const VoltageProtocol& p, std::uint64_t seed, RunContext& ctx) {
  auto trace = spectra::synthesize(p.voltage_model, p.sample_rate_hz, p.duration_s, seed);
  trace.quantity = spectra::TraceQuantity::kVoltage;
  spectra::WelchOptions w;
  w.segment_length = std::min(p.segment_length, trace.samples.size());
  const auto psd = spectra::psd_welch(trace, w);
  for (const auto& warn : psd.warnings) ctx.stage().notes.push_back(warn);
  spectra::write_psd_csv(psd, ctx.file("voltage_psd.csv"), true);
  const auto det = spectra::voltage_to_detuning_psd(psd, p.stark_hz_per_volt);
  spectra::write_psd_csv(det, ctx.file("detuning_psd.csv"));
  const double lo = std::max(p.band_lo_hz, psd.points.front().f_hz);
  const double hi = std::min(p.band_hi_hz, psd.points.back().f_hz);
  csv::Writer rms(ctx.file("rms.csv"), "band_lo_hz,band_hi_hz,v_rms,model_v_rms");
  rms.row(lo, hi, spectra::integrate_rms(psd, lo, hi), std::sqrt(spectra::band_power(p.voltage_model, lo, hi)));
  Plot plot{"voltage_psd", "Gate voltage noise", "frequency", "Hz", "S_V", "V^2/Hz", true, true};
  PlotSeries data{"welch"};
  // Log-spaced thinning keeps the plot file small.
  double next = 0.0;
  for (const auto& pt : psd.points) {
    if (pt.f_hz < next) continue;
    data.x.push_back(pt.f_hz);
    data.y.push_back(pt.s);
    data.err.push_back(0.5 * (pt.ci_high - pt.ci_low));
    next = pt.f_hz * 1.01;
  }
  plot.series.push_back(data);
  ctx.plot(std::move(plot));
}

inline void feedback(const FeedbackStage& f, std::uint64_t seed, RunContext& ctx) {
  auto settings = f.settings;
  settings.seed = seed;
  const auto r = frequency_feedback(f.drift, settings);
  write_feedback_csv(r, ctx.file("feedback.csv"));
  csv::Writer s(ctx.file("feedback_summary.csv"), "max_abs_residual_hz,rms_residual_hz,max_step_hz,lost_lock");
  s.row(r.max_abs_residual, r.rms_residual, r.max_step, r.lost_lock ? 1 : 0);
  if (r.lost_lock) ctx.stage().notes.push_back("frequency tracking lost lock: drift outruns the probe rate");
  Plot plot{"frequency_feedback", "ESR frequency tracking", "time", "s", "frequency offset", "Hz"};
  PlotSeries truth{"true"}, tracked{"tracked"};
  for (const auto& x : r.log) {
    truth.x.push_back(x.t);
    truth.y.push_back(x.f_true);
    tracked.x.push_back(x.t);
    tracked.y.push_back(x.f_tracked);
  }
  plot.series = {truth, tracked};
  ctx.plot(std::move(plot));
}

}  // namespace pipeline

// One run per output directory at a time.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".spinprobe.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw std::runtime_error("output directory is locked by another run: " + path_.string());
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFitFailure = 3;

struct RunOutcome {
  RunManifest manifest;
  fs::path manifest_path;
  int exit_code = kExitOk;
};

// Executes the configured pipeline. Worker count never changes the outputs.
inline RunOutcome run(const ExperimentConfig& cfg, std::optional<fs::path> output_override = std::nullopt) {
  const fs::path dir = output_override.value_or(cfg.output_dir);
  fs::create_directories(dir);
  DirectoryLock lock(dir);
  RunOutcome outcome;
  RunManifest& m = outcome.manifest;
  m.config = cfg.echo;
  m.master_seed = cfg.seed;
  RunContext ctx(dir, m);

  auto stage = [&](const std::string& name, std::uint64_t index, auto&& body) {
    StageRecord rec;
    rec.name = name;
    rec.seed = derive_seed(cfg.seed, index);
    m.stages.push_back(rec);
    const std::size_t failures_before = m.failures.size();
    const auto t0 = std::chrono::steady_clock::now();
    body(m.stages.back().seed);
    m.stages.back().wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (m.failures.size() > failures_before) m.stages.back().status = "fit_failures";
  };

  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        const std::string name = to_string(cfg.kind);
        stage(name, 0, [&](std::uint64_t seed) {
          if constexpr (std::is_same_v<P, RabiProtocol>) pipeline::rabi_chevron(cfg, p, seed, ctx);
          if constexpr (std::is_same_v<P, DecayProtocol>) pipeline::decay(cfg, p, seed, ctx);
          if constexpr (std::is_same_v<P, T2VsNProtocol>) pipeline::t2_vs_n(cfg, p, seed, ctx);
          if constexpr (std::is_same_v<P, SpectroscopyProtocol>) pipeline::spectroscopy(cfg, p, seed, ctx);
          if constexpr (std::is_same_v<P, RbmProtocol>) pipeline::rbm(cfg, p, seed, ctx);
          if constexpr (std::is_same_v<P, StarkProtocol>) pipeline::stark_map(p, seed, ctx);
          if constexpr (std::is_same_v<P, ToneProtocol>) pipeline::tone_scan(cfg, p, seed, ctx);
          if constexpr (std::is_same_v<P, VoltageProtocol>) pipeline::voltage_psd(p, seed, ctx);
        });
      },
      cfg.protocol);
  if (cfg.feedback) {
    stage("frequency_feedback", 1, [&](std::uint64_t seed) { pipeline::feedback(*cfg.feedback, seed, ctx); });
  }

  {
    Json plots = Json::array();
    for (const auto& p : ctx.plots()) plots.push_back(p.to_json());
    std::ofstream out(ctx.file("plot.json"));
    out << Json{{"kind", to_string(cfg.kind)}, {"figures", plots}}.dump(1) << '\n';
  }
  auto files = ctx.files();
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    m.outputs.push_back({f, sha256_file(dir / f), fs::file_size(dir / f)});
  }
  outcome.manifest_path = dir / "manifest.json";
  write_manifest(m, outcome.manifest_path);
  outcome.exit_code = m.failures.empty() ? kExitOk : kExitFitFailure;
  return outcome;
}

struct RerunOutcome {
  RunOutcome run;
  std::vector<std::string> mismatches;  // outputs whose checksum changed
};

// Re-executes a manifest from its config echo and compares checksums.
inline RerunOutcome rerun(const fs::path& manifest_path, std::optional<fs::path> output_override = std::nullopt) {
  const auto original = read_manifest(manifest_path);
  const auto cfg = parse_config(original.config);
  RerunOutcome out;
  out.run = run(cfg, output_override);
  out.mismatches = inventory_mismatches(original.outputs, out.run.manifest.outputs);
  return out;
}

}  // namespace spinprobe::harness
