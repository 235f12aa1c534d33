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

// Echo pulse schedules and their filter functions.
//
// A schedule is a list of instantaneous pi pulses inside [0, T]. In the
// toggling frame the accumulated phase is integral y(t) delta_omega(t) dt,
// with y = +1 before the first pulse and flipping sign at each pulse.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/errors.hpp"

namespace spinprobe::sequences {

enum class PulseAxis { kX, kY };
enum class SequenceKind { kRamsey, kHahn, kCp, kCpmg };

inline const char* to_string(SequenceKind kind) {
  switch (kind) {
    case SequenceKind::kRamsey: return "ramsey";
    case SequenceKind::kHahn: return "hahn";
    case SequenceKind::kCp: return "cp";
    case SequenceKind::kCpmg: return "cpmg";
  }
  return "?";
}

struct Segment {
  double start = 0.0;
  double end = 0.0;
  double sign = 1.0;
  double length() const { return end - start; }
};

class PulseSchedule {
 public:
  PulseSchedule(std::vector<double> pulse_times, double total_time, PulseAxis axis,
                SequenceKind kind)
      : pulse_times_(std::move(pulse_times)), total_time_(total_time), axis_(axis), kind_(kind) {
    if (!(total_time_ > 0.0) || !std::isfinite(total_time_)) {
      throw PreconditionError("PulseSchedule: total time must be > 0");
    }
    double prev = 0.0;
    for (double t : pulse_times_) {
      if (!(t > prev) || !(t < total_time_)) {
        throw PreconditionError("PulseSchedule: pulse times must increase strictly inside (0, T)");
      }
      prev = t;
    }
    const std::size_t n = pulse_times_.size();
    uniform_ = n > 0;
    for (std::size_t k = 0; k < n && uniform_; ++k) {
      const double expect = (static_cast<double>(k) + 0.5) * total_time_ / static_cast<double>(n);
      uniform_ = std::abs(pulse_times_[k] - expect) <= 1e-12 * total_time_;
    }
  }

  const std::vector<double>& pulse_times() const { return pulse_times_; }
  double total_time() const { return total_time_; }
  PulseAxis axis() const { return axis_; }
  SequenceKind kind() const { return kind_; }
  std::size_t pulse_count() const { return pulse_times_.size(); }

  // True when the pulses sit at (k - 1/2) T/N (Hahn, CP and CPMG timing).
  bool is_uniform() const { return uniform_; }

  // Wait time between pulses for CP/CPMG (T/N); T for Ramsey.
  double wait_time() const {
    return pulse_times_.empty() ? total_time_
                                : total_time_ / static_cast<double>(pulse_times_.size());
  }

  std::vector<Segment> segments() const {
    std::vector<Segment> out;
    out.reserve(pulse_times_.size() + 1);
    double start = 0.0;
    double sign = 1.0;
    for (double t : pulse_times_) {
      out.push_back({start, t, sign});
      start = t;
      sign = -sign;
    }
    out.push_back({start, total_time_, sign});
    return out;
  }

  double shortest_segment() const {
    double m = total_time_;
    for (const auto& s : segments()) m = std::min(m, s.length());
    return m;
  }

  bool same_timing(const PulseSchedule& other, double rel_tol = 1e-12) const {
    if (pulse_times_.size() != other.pulse_times_.size()) return false;
    const double tol = rel_tol * total_time_;
    if (std::abs(total_time_ - other.total_time_) > tol) return false;
    for (std::size_t i = 0; i < pulse_times_.size(); ++i) {
      if (std::abs(pulse_times_[i] - other.pulse_times_[i]) > tol) return false;
    }
    return true;
  }

 private:
  std::vector<double> pulse_times_;
  double total_time_;
  PulseAxis axis_;
  SequenceKind kind_;
  bool uniform_ = false;
};

namespace detail {
inline std::vector<double> cpmg_times(std::size_t n, double tau_w) {
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = (static_cast<double>(k) + 0.5) * tau_w;
  return t;
}
}  // namespace detail

// N pulses at (k - 1/2) tau_w, k = 1..N; total time N tau_w; Y axis.
inline PulseSchedule make_cpmg(std::size_t n_pulses, double tau_w) {
  if (n_pulses < 1) throw PreconditionError("make_cpmg: N must be >= 1");
  if (!(tau_w > 0.0)) throw PreconditionError("make_cpmg: tau_w must be > 0");
  return PulseSchedule(detail::cpmg_times(n_pulses, tau_w), static_cast<double>(n_pulses) * tau_w,
                       PulseAxis::kY, SequenceKind::kCpmg);
}

// CPMG timing with X-axis pulses; `total_time` is the full precession time.
inline PulseSchedule make_cp(std::size_t n_pulses, double total_time) {
  if (n_pulses < 1) throw PreconditionError("make_cp: N must be >= 1");
  if (!(total_time > 0.0)) throw PreconditionError("make_cp: t must be > 0");
  const double tau_w = total_time / static_cast<double>(n_pulses);
  return PulseSchedule(detail::cpmg_times(n_pulses, tau_w), total_time, PulseAxis::kX,
                       SequenceKind::kCp);
}

inline PulseSchedule make_ramsey(double total_time) {
  if (!(total_time > 0.0)) throw PreconditionError("make_ramsey: t must be > 0");
  return PulseSchedule({}, total_time, PulseAxis::kX, SequenceKind::kRamsey);
}

inline PulseSchedule make_hahn(double total_time) {
  if (!(total_time > 0.0)) throw PreconditionError("make_hahn: t must be > 0");
  return PulseSchedule({0.5 * total_time}, total_time, PulseAxis::kX, SequenceKind::kHahn);
}

// Y(omega) = integral_0^T y(t) exp(i omega t) dt, summed per segment as
// exp(i omega t_mid) * L * sinc(omega L / 2).
inline std::complex<double> filter_transform(const PulseSchedule& schedule, double omega) {
  std::complex<double> y{0.0, 0.0};
  for (const auto& s : schedule.segments()) {
    const double len = s.length();
    const double x = 0.5 * omega * len;
    const double sinc = std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x;
    const double mid = 0.5 * (s.start + s.end);
    y += s.sign * len * sinc * std::polar(1.0, omega * mid);
  }
  return y;
}

namespace detail {

// Closed form for CPMG timing: the toggling function is N cells of length
// tau with signs (-1)^k (+, -), giving
//   |Y|^2 = 16 sin^4(w tau/4) / w^2 * sin^2(N x/2) / sin^2(x/2),  x = w tau + pi.
inline double uniform_filter(const PulseSchedule& schedule, double omega) {
  const double n = static_cast<double>(schedule.pulse_count());
  const double tau = schedule.total_time() / n;
  if (omega == 0.0) return 0.0;
  const double q = std::sin(0.25 * omega * tau);
  const double cell = 16.0 * q * q * q * q / (omega * omega);
  const double x = std::remainder(omega * tau + std::numbers::pi, 2.0 * std::numbers::pi);
  const double sh = std::sin(0.5 * x);
  double dirichlet;
  if (std::abs(sh) < 1e-7) {
    dirichlet = n * n;
  } else {
    const double sn = std::sin(0.5 * n * x);
    dirichlet = sn * sn / (sh * sh);
  }
  return cell * dirichlet;
}

}  // namespace detail

// |Y(2 pi f)|^2 in s^2.
inline double filter_function(const PulseSchedule& schedule, double f_hz) {
  if (!(f_hz >= 0.0)) throw DomainError("filter_function: f must be >= 0");
  const double omega = 2.0 * std::numbers::pi * f_hz;
  if (schedule.is_uniform()) return detail::uniform_filter(schedule, omega);
  return std::norm(filter_transform(schedule, omega));
}

// Boundary form of the toggling function: y(t) = sum_k w_k H(t - t_k) on
// [0, T] with the last weight returning y to zero at T.
struct Boundary {
  double time = 0.0;
  double weight = 0.0;
};

inline std::vector<Boundary> boundaries(const PulseSchedule& schedule) {
  std::vector<Boundary> out;
  out.reserve(schedule.pulse_count() + 2);
  double sign = 1.0;
  out.push_back({0.0, 1.0});
  for (double t : schedule.pulse_times()) {
    out.push_back({t, -2.0 * sign});
    sign = -sign;
  }
  out.push_back({schedule.total_time(), -sign});
  return out;
}

// Order m such that |Y(omega)|^2 ~ omega^(2m) as omega -> 0 (0, 1 or 2).
inline int low_frequency_order(const PulseSchedule& schedule) {
  double m0 = 0.0;
  double m1 = 0.0;
  for (const auto& s : schedule.segments()) {
    m0 += s.sign * s.length();
    m1 += s.sign * 0.5 * (s.end * s.end - s.start * s.start);
  }
  const double t = schedule.total_time();
  if (std::abs(m0) > 1e-9 * t) return 0;
  if (std::abs(m1) > 1e-9 * t * t) return 1;
  return 2;
}

inline void write_schedule_csv(const PulseSchedule& schedule, const std::filesystem::path& path) {
  csv::Writer out(path, "pulse_index,time_s");
  for (std::size_t i = 0; i < schedule.pulse_times().size(); ++i) {
    out.row(i, schedule.pulse_times()[i]);
  }
}

}  // namespace spinprobe::sequences
