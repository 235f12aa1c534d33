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

// Experiment configuration: one JSON document per run. Every field is read
// through a path-tracking reader so schema errors name the offending field,
// and unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "spinprobe/analysis.hpp"
#include "spinprobe/benchmarking.hpp"
#include "spinprobe/harness/feedback.hpp"
#include "spinprobe/qubitsim.hpp"
#include "spinprobe/spectra.hpp"
#include "spinprobe/starktone.hpp"

namespace spinprobe::harness {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class ExperimentKind {
  kRabiChevron,
  kRamsey,
  kHahn,
  kCpmgT2VsN,
  kNoiseSpectroscopy,
  kRbm,
  kInterleavedRbm,
  kStarkMap,
  kToneScan,
  kVoltagePsd,
};

struct KindInfo {
  ExperimentKind kind;
  const char* name;
  const char* summary;
};

inline constexpr KindInfo kKinds[] = {
    {ExperimentKind::kRabiChevron, "rabi_chevron", "P_up over drive detuning and duration"},
    {ExperimentKind::kRamsey, "ramsey", "free-induction decay and T2*"},
    {ExperimentKind::kHahn, "hahn", "single-echo decay and T2 Hahn"},
    {ExperimentKind::kCpmgT2VsN, "cpmg_t2_vs_n", "CPMG T2 against pulse number and scaling fit"},
    {ExperimentKind::kNoiseSpectroscopy, "noise_spectroscopy", "CPMG noise spectroscopy and band fits"},
    {ExperimentKind::kRbm, "rbm", "randomized benchmarking"},
    {ExperimentKind::kInterleavedRbm, "interleaved_rbm", "interleaved randomized benchmarking"},
    {ExperimentKind::kStarkMap, "stark_map", "ESR frequency over two gate voltages and plane fit"},
    {ExperimentKind::kToneScan, "tone_scan", "CPMG scan under an injected gate tone"},
    {ExperimentKind::kVoltagePsd, "voltage_psd", "Welch PSD of a gate-voltage trace"},
};

inline const char* to_string(ExperimentKind k) {
  for (const auto& i : kKinds) {
    if (i.kind == k) return i.name;
  }
  return "?";
}

// Reads one JSON object, remembering which keys were consumed.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const Json* v = get(key, fallback.has_value());
    if (!v) return *fallback;
    if (!v->is_number()) throw ConfigError(field(key), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw ConfigError(field(key), "must be finite");
    return x;
  }

  double positive(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const double x = number(key, fallback);
    if (!(x > 0.0)) throw ConfigError(field(key), "must be > 0");
    return x;
  }

  std::uint64_t unsigned_int(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) {
    const Json* v = get(key, fallback.has_value());
    if (!v) return *fallback;
    if (!v->is_number_integer() || v->get<long long>() < 0) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  std::size_t count(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) {
    const auto x = unsigned_int(key, fallback);
    if (x < 1) throw ConfigError(field(key), "must be >= 1");
    return static_cast<std::size_t>(x);
  }

  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) {
    const Json* v = get(key, fallback.has_value());
    if (!v) return *fallback;
    if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const Json* v = get(key, fallback.has_value());
    if (!v) return *fallback;
    if (!v->is_string()) throw ConfigError(field(key), "expected a string");
    return v->get<std::string>();
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed,
                     std::optional<std::string> fallback = std::nullopt) {
    const auto s = string(key, fallback);
    for (const auto& a : allowed) {
      if (a == s) return s;
    }
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError(field(key), "must be one of " + list);
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
    const Json* v = get(key, fallback.has_value());
    if (!v) return *fallback;
    if (!v->is_array() || v->empty()) throw ConfigError(field(key), "expected a non-empty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key,
                                  std::optional<std::vector<std::size_t>> fallback = std::nullopt) {
    const Json* v = get(key, fallback.has_value());
    if (!v) return *fallback;
    if (!v->is_array() || v->empty()) throw ConfigError(field(key), "expected a non-empty array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      if (!e.is_number_integer() || e.get<long long>() < 1) {
        throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected an integer >= 1");
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::optional<Reader> object(const std::string& key, bool required = false) {
    const Json* v = get(key, !required);
    if (!v) return std::nullopt;
    return Reader(*v, field(key));
  }

  const Json* array(const std::string& key, bool required = false) {
    const Json* v = get(key, !required);
    if (v && !v->is_array()) throw ConfigError(field(key), "expected an array");
    return v;
  }

  // Rejects keys that no accessor asked for.
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError(field(k), "unknown field");
    }
  }

 private:
  const Json* get(const std::string& key, bool optional) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) {
      if (optional) return nullptr;
      throw ConfigError(field(key), "required field is missing");
    }
    return &j_.at(key);
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

struct RabiProtocol {
  double detuning_span_hz = 4e6;  // grid is symmetric about 0
  std::size_t n_detuning = 81;
  double t_max_s = 5e-6;
  std::size_t n_time = 101;
  std::size_t shots = 0;  // 0: ideal probabilities only
};

enum class CoherenceEngine { kFilterFunction, kMonteCarlo };

struct DecayProtocol {
  double t_max_s = 0.0;  // 0: chosen from the filter-function decay
  std::size_t n_points = 40;
  CoherenceEngine engine = CoherenceEngine::kFilterFunction;
  std::size_t n_traj = 500;
  std::size_t shots = 100;
  std::optional<double> low_cutoff_hz;
  qubit::Projection projection = qubit::Projection::kMinus;
};

struct T2VsNProtocol {
  std::vector<std::size_t> pulse_numbers{1, 2, 4, 8, 16, 32, 64};
  analysis::T2ScanOptions options;
};

struct SpectroscopyProtocol {
  double f_min_hz = 1.3e3;
  double f_max_hz = 50e3;
  std::size_t n_freq = 24;
  bool log_spacing = true;
  std::vector<double> band_edges{2e3, 2e4};
  analysis::ScanProtocol scan;
};

enum class RbmErrorKind { kDepolarizing, kQuasiStatic, kRotation };

struct RbmProtocol {
  rb::RbmSettings settings;
  RbmErrorKind error = RbmErrorKind::kDepolarizing;
  double depolarizing = 0.0;
  std::optional<double> target_clifford_fidelity;
  double sigma_rad_per_s = 0.0;
  double rotation_epsilon = 0.0;
  std::string interleaved_gate = "X90";
};

struct StarkProtocol {
  stark::StarkMap map;
  double step_v = 8e-3;
  std::size_t n_g1 = 5;
  std::size_t n_g2 = 5;
  double jitter_hz = 10e3;
};

struct ToneProtocol {
  stark::StarkMap map;
  stark::ToneConfig tone;
  std::vector<double> columns_hz;
  double total_time_s = 200e-6;
  std::vector<double> amplitudes_vpp;
  stark::ToneScanOptions options;
  int harmonics = 5;
};

struct VoltageProtocol {
  spectra::SpectrumModel voltage_model = spectra::SpectrumModel::white(1e-18);
  double sample_rate_hz = 131072.0;
  double duration_s = 64.0;
  std::size_t segment_length = 1u << 20;
  double band_lo_hz = 0.2;
  double band_hi_hz = 50e3;
  double stark_hz_per_volt = -22.88e6;
};

using Protocol = std::variant<RabiProtocol, DecayProtocol, T2VsNProtocol, SpectroscopyProtocol,
                              RbmProtocol, StarkProtocol, ToneProtocol, VoltageProtocol>;

struct FeedbackStage {
  DriftModel drift;
  FeedbackSettings settings;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kNoiseSpectroscopy;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  qubit::QubitParams qubit;
  std::optional<spectra::SpectrumModel> spectrum;
  qubit::DephasingConvention convention;
  Protocol protocol;
  std::optional<FeedbackStage> feedback;
  Json echo;  // the document as read
};

namespace detail {

inline spectra::SpectrumModel read_spectrum(Reader r) {
  std::vector<spectra::PowerLawTerm> laws;
  std::vector<spectra::SpectralLine> lines;
  std::optional<double> floor;
  if (r.has("white_floor")) {
    floor = r.number("white_floor");
    if (*floor < 0.0) throw ConfigError(r.field("white_floor"), "must be >= 0");
  }
  if (const Json* a = r.array("power_laws")) {
    for (std::size_t i = 0; i < a->size(); ++i) {
      Reader t((*a)[i], r.field("power_laws") + "[" + std::to_string(i) + "]");
      const double amp = t.number("amplitude");
      if (amp < 0.0) throw ConfigError(t.field("amplitude"), "must be >= 0");
      laws.push_back({amp, t.positive("exponent")});
      t.finish();
    }
  }
  if (const Json* a = r.array("lines")) {
    for (std::size_t i = 0; i < a->size(); ++i) {
      Reader t((*a)[i], r.field("lines") + "[" + std::to_string(i) + "]");
      const double c = t.positive("center_hz");
      const double p = t.number("power");
      if (p < 0.0) throw ConfigError(t.field("power"), "must be >= 0");
      lines.push_back({c, p, t.positive("linewidth_hz", 1.0)});
      t.finish();
    }
  }
  r.finish();
  if (laws.empty() && !floor && lines.empty()) {
    throw ConfigError(r.field("white_floor"), "spectrum needs at least one component");
  }
  return spectra::SpectrumModel(std::move(laws), floor, std::move(lines));
}

inline qubit::QubitParams read_qubit(Reader r) {
  qubit::QubitParams q;
  q.g_factor = r.positive("g_factor", q.g_factor);
  q.b_dc = r.positive("b_dc_tesla", q.b_dc);
  q.rabi_frequency = 0.5 / r.positive("pi_time_s", q.pi_time());
  q.t1 = r.positive("t1_s", q.t1);
  if (auto ro = r.object("readout")) {
    q.readout.fidelity_up = ro->number("fidelity_up", q.readout.fidelity_up);
    q.readout.fidelity_down = ro->number("fidelity_down", q.readout.fidelity_down);
    ro->finish();
  }
  r.finish();
  try {
    q.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(r.field("readout"), e.what());
  }
  return q;
}

inline stark::StarkMap read_stark(std::optional<Reader> r) {
  stark::StarkMap m;
  if (!r) return m;
  m.f0_ref = r->positive("f0_ref_hz", m.f0_ref);
  m.coefficients["G1"] = r->number("g1_hz_per_volt", m.coefficients["G1"]);
  m.coefficients["G2"] = r->number("g2_hz_per_volt", m.coefficients["G2"]);
  m.reference_voltages["G1"] = r->number("g1_reference_v", 0.0);
  m.reference_voltages["G2"] = r->number("g2_reference_v", 0.0);
  r->finish();
  return m;
}

inline qubit::Projection read_projection(Reader& r, qubit::Projection fallback) {
  const auto s = r.choice("projection", {"minus", "plus"},
                          fallback == qubit::Projection::kMinus ? "minus" : "plus");
  return s == "minus" ? qubit::Projection::kMinus : qubit::Projection::kPlus;
}

inline Protocol read_protocol(ExperimentKind kind, Reader p, const ExperimentConfig& cfg) {
  switch (kind) {
    case ExperimentKind::kRabiChevron: {
      RabiProtocol x;
      x.detuning_span_hz = p.positive("detuning_span_hz", x.detuning_span_hz);
      x.n_detuning = p.count("n_detuning", x.n_detuning);
      x.t_max_s = p.positive("t_max_s", x.t_max_s);
      x.n_time = p.count("n_time", x.n_time);
      x.shots = p.unsigned_int("shots", 0);
      p.finish();
      return x;
    }
    case ExperimentKind::kRamsey:
    case ExperimentKind::kHahn: {
      DecayProtocol x;
      x.t_max_s = p.number("t_max_s", 0.0);
      if (x.t_max_s < 0.0) throw ConfigError(p.field("t_max_s"), "must be >= 0");
      x.n_points = p.count("n_points", x.n_points);
      if (x.n_points < 5) throw ConfigError(p.field("n_points"), "must be >= 5");
      x.engine = p.choice("engine", {"filter_function", "monte_carlo"}, "filter_function") == "monte_carlo"
                     ? CoherenceEngine::kMonteCarlo
                     : CoherenceEngine::kFilterFunction;
      x.n_traj = p.count("n_traj", x.n_traj);
      if (x.n_traj < 100) throw ConfigError(p.field("n_traj"), "must be >= 100");
      x.shots = p.count("shots", x.shots);
      if (p.has("low_cutoff_hz")) x.low_cutoff_hz = p.positive("low_cutoff_hz");
      x.projection = read_projection(p, x.projection);
      p.finish();
      return x;
    }
    case ExperimentKind::kCpmgT2VsN: {
      T2VsNProtocol x;
      x.pulse_numbers = p.counts("pulse_numbers", x.pulse_numbers);
      if (x.pulse_numbers.size() < 4) throw ConfigError(p.field("pulse_numbers"), "need >= 4 entries");
      auto& o = x.options;
      o.engine = p.choice("engine", {"filter_function", "monte_carlo"}, "filter_function") == "monte_carlo"
                     ? analysis::Engine::kMonteCarlo
                     : analysis::Engine::kFilterFunction;
      o.n_traj = p.count("n_traj", o.n_traj);
      if (o.n_traj < 100) throw ConfigError(p.field("n_traj"), "must be >= 100");
      o.n_points = p.count("n_points", o.n_points);
      if (o.n_points < 5) throw ConfigError(p.field("n_points"), "must be >= 5");
      o.target_coherence = p.positive("target_coherence", o.target_coherence);
      if (p.has("low_cutoff_hz")) o.low_cutoff_hz = p.positive("low_cutoff_hz");
      o.convention = cfg.convention;
      p.finish();
      return x;
    }
    case ExperimentKind::kNoiseSpectroscopy: {
      SpectroscopyProtocol x;
      x.f_min_hz = p.positive("f_min_hz", x.f_min_hz);
      x.f_max_hz = p.positive("f_max_hz", x.f_max_hz);
      if (!(x.f_max_hz > x.f_min_hz)) throw ConfigError(p.field("f_max_hz"), "must exceed f_min_hz");
      x.n_freq = p.count("n_freq", x.n_freq);
      x.log_spacing = p.choice("spacing", {"log", "linear"}, "log") == "log";
      x.band_edges = p.numbers("band_edges", x.band_edges);
      auto& s = x.scan;
      s.engine = p.choice("engine", {"filter_function", "monte_carlo"}, "monte_carlo") == "monte_carlo"
                     ? analysis::Engine::kMonteCarlo
                     : analysis::Engine::kFilterFunction;
      s.n_traj = p.count("n_traj", s.n_traj);
      if (s.n_traj < 100) throw ConfigError(p.field("n_traj"), "must be >= 100");
      s.n_points = p.count("n_points", s.n_points);
      if (s.n_points < 5) throw ConfigError(p.field("n_points"), "must be >= 5");
      s.target_coherence = p.positive("target_coherence", s.target_coherence);
      s.readout = p.choice("readout", {"expectation", "single_shot"}, "expectation") == "single_shot"
                      ? analysis::ReadoutMode::kSingleShot
                      : analysis::ReadoutMode::kExpectation;
      s.shots = p.count("shots", s.shots);
      if (s.readout == analysis::ReadoutMode::kSingleShot) s.fidelity = cfg.qubit.readout;
      s.mc.samples_per_segment = p.count("samples_per_segment", s.mc.samples_per_segment);
      if (s.mc.samples_per_segment < 8) throw ConfigError(p.field("samples_per_segment"), "must be >= 8");
      s.convention = cfg.convention;
      p.finish();
      return x;
    }
    case ExperimentKind::kRbm:
    case ExperimentKind::kInterleavedRbm: {
      RbmProtocol x;
      auto& s = x.settings;
      s.lengths = p.counts("lengths", std::vector<std::size_t>{1, 10, 25, 50, 100, 150, 200, 300});
      s.n_sequences = p.count("n_sequences", s.n_sequences);
      s.shots = p.count("shots", s.shots);
      s.readout = cfg.qubit.readout;
      if (kind == ExperimentKind::kInterleavedRbm) {
        x.interleaved_gate = p.choice("interleaved_gate", {"X90", "-X90", "Y90", "-Y90", "X180", "Y180"}, "X90");
      }
      auto e = p.object("error_model", true);
      const auto type = e->choice("type", {"depolarizing", "quasi_static", "rotation"});
      if (type == "depolarizing") {
        x.error = RbmErrorKind::kDepolarizing;
        if (e->has("clifford_fidelity")) {
          x.target_clifford_fidelity = e->number("clifford_fidelity");
          if (!(*x.target_clifford_fidelity > 0.5 && *x.target_clifford_fidelity <= 1.0)) {
            throw ConfigError(e->field("clifford_fidelity"), "must lie in (0.5, 1]");
          }
        } else {
          x.depolarizing = e->number("per_primitive");
          if (x.depolarizing < 0.0 || x.depolarizing > 1.0) {
            throw ConfigError(e->field("per_primitive"), "must lie in [0, 1]");
          }
        }
      } else if (type == "quasi_static") {
        x.error = RbmErrorKind::kQuasiStatic;
        x.sigma_rad_per_s = e->number("sigma_rad_per_s");
        if (x.sigma_rad_per_s < 0.0) throw ConfigError(e->field("sigma_rad_per_s"), "must be >= 0");
      } else {
        x.error = RbmErrorKind::kRotation;
        x.rotation_epsilon = e->number("epsilon");
      }
      e->finish();
      p.finish();
      return x;
    }
    case ExperimentKind::kStarkMap: {
      StarkProtocol x;
      x.map = read_stark(p.object("stark"));
      x.step_v = p.positive("step_v", x.step_v);
      x.n_g1 = p.count("n_g1", x.n_g1);
      x.n_g2 = p.count("n_g2", x.n_g2);
      x.jitter_hz = p.number("jitter_hz", x.jitter_hz);
      if (x.jitter_hz < 0.0) throw ConfigError(p.field("jitter_hz"), "must be >= 0");
      p.finish();
      return x;
    }
    case ExperimentKind::kToneScan: {
      ToneProtocol x;
      x.map = read_stark(p.object("stark"));
      x.tone.gate = p.choice("gate", {"G1", "G2"}, "G2");
      x.tone.f_tone_hz = p.positive("f_tone_hz", x.tone.f_tone_hz);
      if (p.has("phase_rad")) x.tone.phase = p.number("phase_rad");
      x.columns_hz = p.numbers("columns_hz");
      for (std::size_t i = 0; i < x.columns_hz.size(); ++i) {
        if (!(x.columns_hz[i] > 0.0)) throw ConfigError(p.field("columns_hz") + "[" + std::to_string(i) + "]", "must be > 0");
      }
      x.total_time_s = p.positive("total_time_s", x.total_time_s);
      x.amplitudes_vpp = p.numbers("amplitudes_vpp");
      for (std::size_t i = 0; i < x.amplitudes_vpp.size(); ++i) {
        if (x.amplitudes_vpp[i] < 0.0) throw ConfigError(p.field("amplitudes_vpp") + "[" + std::to_string(i) + "]", "must be >= 0");
      }
      auto& o = x.options;
      o.engine = p.choice("engine", {"filter_function", "monte_carlo"}, "filter_function") == "monte_carlo"
                     ? stark::ToneEngine::kMonteCarlo
                     : stark::ToneEngine::kFilterFunction;
      o.shots = p.count("shots", o.shots);
      o.n_traj = p.count("n_traj", o.n_traj);
      if (o.n_traj < 100) throw ConfigError(p.field("n_traj"), "must be >= 100");
      o.readout = cfg.qubit.readout;
      o.projection = read_projection(p, o.projection);
      o.convention = cfg.convention;
      x.harmonics = static_cast<int>(p.count("harmonics", 5));
      p.finish();
      return x;
    }
    case ExperimentKind::kVoltagePsd: {
      VoltageProtocol x;
      x.voltage_model = read_spectrum(*p.object("voltage_spectrum", true));
      x.sample_rate_hz = p.positive("sample_rate_hz", x.sample_rate_hz);
      x.duration_s = p.positive("duration_s", x.duration_s);
      x.segment_length = p.count("segment_length", x.segment_length);
      x.band_lo_hz = p.positive("band_lo_hz", x.band_lo_hz);
      x.band_hi_hz = p.positive("band_hi_hz", x.band_hi_hz);
      if (!(x.band_hi_hz > x.band_lo_hz)) throw ConfigError(p.field("band_hi_hz"), "must exceed band_lo_hz");
      x.stark_hz_per_volt = p.number("stark_hz_per_volt", x.stark_hz_per_volt);
      p.finish();
      return x;
    }
  }
  throw ConfigError("kind", "unhandled experiment kind");
}

inline FeedbackStage read_feedback(Reader r, const qubit::QubitParams& q) {
  FeedbackStage f;
  auto d = r.object("drift", true);
  const auto type = d->choice("type", {"none", "linear", "random_walk"});
  if (type == "linear") {
    f.drift.kind = DriftKind::kLinear;
    f.drift.rate_hz_per_s = d->number("rate_hz_per_s");
  } else if (type == "random_walk") {
    f.drift.kind = DriftKind::kRandomWalk;
    f.drift.diffusion_hz2_per_s = d->number("diffusion_hz2_per_s");
    if (f.drift.diffusion_hz2_per_s < 0.0) throw ConfigError(d->field("diffusion_hz2_per_s"), "must be >= 0");
  }
  d->finish();
  auto& s = f.settings;
  s.duration_s = r.positive("duration_s", s.duration_s);
  s.probe_interval_s = r.positive("probe_interval_s", s.probe_interval_s);
  s.probe_offset_hz = r.number("probe_offset_hz", 0.0);
  s.gain = r.positive("gain", s.gain);
  s.shots = r.unsigned_int("shots", 0);
  s.rabi_hz = q.rabi_frequency;
  s.readout = q.readout;
  r.finish();
  return f;
}

}  // namespace detail

inline ExperimentKind parse_kind(const std::string& name) {
  for (const auto& i : kKinds) {
    if (name == i.name) return i.kind;
  }
  throw ConfigError("kind", "unknown experiment kind '" + name + "'");
}

// Validates the whole document before anything runs.
inline ExperimentConfig parse_config(const Json& doc) {
  Reader r(doc, "");
  ExperimentConfig cfg;
  cfg.echo = doc;
  cfg.kind = parse_kind(r.string("kind"));
  cfg.seed = r.unsigned_int("seed");
  cfg.output_dir = r.string("output_dir");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  r.string("description", "");
  if (auto q = r.object("qubit")) cfg.qubit = detail::read_qubit(*q);
  if (auto s = r.object("spectrum")) cfg.spectrum = detail::read_spectrum(*s);
  cfg.convention = r.choice("convention", {"spectroscopic", "physical"}, "spectroscopic") == "physical"
                       ? qubit::DephasingConvention::physical()
                       : qubit::DephasingConvention::spectroscopic();
  const bool needs_spectrum = cfg.kind == ExperimentKind::kRamsey || cfg.kind == ExperimentKind::kHahn ||
                              cfg.kind == ExperimentKind::kCpmgT2VsN ||
                              cfg.kind == ExperimentKind::kNoiseSpectroscopy ||
                              cfg.kind == ExperimentKind::kToneScan;
  if (needs_spectrum && !cfg.spectrum) throw ConfigError("spectrum", "required for kind " + std::string(to_string(cfg.kind)));
  auto p = r.object("protocol", cfg.kind == ExperimentKind::kRbm || cfg.kind == ExperimentKind::kInterleavedRbm ||
                                    cfg.kind == ExperimentKind::kToneScan || cfg.kind == ExperimentKind::kVoltagePsd);
  cfg.protocol = detail::read_protocol(cfg.kind, p ? *p : Reader(Json::object(), "protocol"), cfg);
  if (auto f = r.object("frequency_feedback")) cfg.feedback = detail::read_feedback(*f, cfg.qubit);
  r.finish();
  return cfg;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_json_file(path));
}

}  // namespace spinprobe::harness
