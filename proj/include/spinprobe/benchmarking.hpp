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

// Single-qubit Clifford randomized benchmarking: group construction from
// pi/2 and pi primitives, sequence generation, Bloch-vector simulation under
// configurable gate error, and decay fitting.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spinprobe/core/csv.hpp"
#include "spinprobe/core/errors.hpp"
#include "spinprobe/core/parallel.hpp"
#include "spinprobe/fitting.hpp"
#include "spinprobe/qubitsim.hpp"

namespace spinprobe::rb {

using Unitary = Eigen::Matrix2cd;

enum class Primitive { kI, kX90, kMinusX90, kY90, kMinusY90, kX180, kY180 };

inline const char* to_string(Primitive p) {
  switch (p) {
    case Primitive::kI: return "I";
    case Primitive::kX90: return "X90";
    case Primitive::kMinusX90: return "-X90";
    case Primitive::kY90: return "Y90";
    case Primitive::kMinusY90: return "-Y90";
    case Primitive::kX180: return "X180";
    case Primitive::kY180: return "Y180";
  }
  return "?";
}

struct AxisAngle {
  Eigen::Vector3d axis{0.0, 0.0, 1.0};
  double angle = 0.0;
};

inline AxisAngle axis_angle(Primitive p) {
  const double h = 0.5 * std::numbers::pi;
  const Eigen::Vector3d x(1, 0, 0), y(0, 1, 0), z(0, 0, 1);
  switch (p) {
    case Primitive::kI: return {z, 0.0};
    case Primitive::kX90: return {x, h};
    case Primitive::kMinusX90: return {-x, h};
    case Primitive::kY90: return {y, h};
    case Primitive::kMinusY90: return {-y, h};
    case Primitive::kX180: return {x, 2 * h};
    case Primitive::kY180: return {y, 2 * h};
  }
  return {};
}

// exp(-i angle/2 n.sigma)
inline Unitary su2(const Eigen::Vector3d& n, double angle) {
  using C = std::complex<double>;
  const double c = std::cos(0.5 * angle);
  const double s = std::sin(0.5 * angle);
  Unitary u;
  u << C(c, -s * n.z()), C(-s * n.y(), -s * n.x()),
       C(s * n.y(), -s * n.x()), C(c, s * n.z());
  return u;
}

inline Unitary primitive_unitary(Primitive p) {
  const auto aa = axis_angle(p);
  return su2(aa.axis, aa.angle);
}

// Bloch-sphere rotation matrix (Rodrigues).
inline Eigen::Matrix3d so3(const Eigen::Vector3d& n, double angle) {
  return Eigen::AngleAxisd(angle, n.normalized()).toRotationMatrix();
}

// Equal up to global phase: |Tr(A^dag B)| = 2.
inline bool equal_up_to_phase(const Unitary& a, const Unitary& b, double tol = 1e-9) {
  return std::abs(std::abs((a.adjoint() * b).trace()) - 2.0) < tol;
}

struct CliffordElement {
  int index = 0;
  Unitary unitary;
  std::vector<Primitive> decomposition;  // applied left to right in time
};

class CliffordGroup {
 public:
  static const CliffordGroup& instance() {
    static const CliffordGroup group;
    return group;
  }

  std::size_t size() const { return elements_.size(); }
  const CliffordElement& operator[](std::size_t i) const { return elements_[i]; }
  const std::vector<CliffordElement>& elements() const { return elements_; }

  // Index of the element equal to `u` up to phase, or -1.
  int find(const Unitary& u) const {
    for (const auto& e : elements_) {
      if (equal_up_to_phase(e.unitary, u)) return e.index;
    }
    return -1;
  }

  // Element for "apply a, then b" (unitary U_b U_a).
  int compose(int a, int b) const { return table_[a][b]; }
  int inverse(int a) const { return inverse_[a]; }
  int identity() const { return 0; }

  double mean_decomposition_length() const {
    double total = 0.0;
    for (const auto& e : elements_) total += static_cast<double>(e.decomposition.size());
    return total / static_cast<double>(elements_.size());
  }

 private:
  // Breadth-first search over the non-identity primitives gives each element
  // a minimal-length decomposition; the identity is the explicit I gate.
  CliffordGroup() {
    const std::array<Primitive, 6> gens{Primitive::kX90, Primitive::kMinusX90, Primitive::kY90,
                                        Primitive::kMinusY90, Primitive::kX180, Primitive::kY180};
    elements_.push_back({0, Unitary::Identity(), {Primitive::kI}});
    std::deque<int> queue{0};
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      for (Primitive g : gens) {
        const Unitary u = primitive_unitary(g) * elements_[cur].unitary;
        if (find(u) >= 0) continue;
        CliffordElement e;
        e.index = static_cast<int>(elements_.size());
        e.unitary = u;
        if (cur != 0) e.decomposition = elements_[cur].decomposition;
        e.decomposition.push_back(g);
        elements_.push_back(std::move(e));
        queue.push_back(elements_.back().index);
      }
    }
    const int n = static_cast<int>(elements_.size());
    table_.assign(n, std::vector<int>(n, -1));
    inverse_.assign(n, -1);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        table_[a][b] = find(elements_[b].unitary * elements_[a].unitary);
        if (table_[a][b] == 0) inverse_[a] = b;
      }
    }
  }

  std::vector<CliffordElement> elements_;
  std::vector<std::vector<int>> table_;
  std::vector<int> inverse_;
};

inline const std::vector<CliffordElement>& clifford_group() {
  return CliffordGroup::instance().elements();
}

struct RbmSequence {
  std::vector<int> gates;  // in time order, interleaved gate included
  int recovery = 0;
};

// M uniformly random Cliffords (each followed by `interleave` if given) and
// the recovery element that returns the product to the identity.
inline RbmSequence random_rbm_sequence(std::size_t m, std::optional<int> interleave,
                                       std::uint64_t seed) {
  if (m < 1) throw PreconditionError("random_rbm_sequence: M must be >= 1");
  const auto& group = CliffordGroup::instance();
  if (interleave && (*interleave < 0 || *interleave >= static_cast<int>(group.size()))) {
    throw PreconditionError("random_rbm_sequence: interleaved gate index out of range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(group.size()) - 1);
  RbmSequence seq;
  int product = group.identity();
  for (std::size_t i = 0; i < m; ++i) {
    const int g = pick(rng);
    seq.gates.push_back(g);
    product = group.compose(product, g);
    if (interleave) {
      seq.gates.push_back(*interleave);
      product = group.compose(product, *interleave);
    }
  }
  seq.recovery = group.inverse(product);
  return seq;
}

struct Depolarizing {
  double probability = 0.0;  // per primitive, including I
};

struct QuasiStaticDetuning {
  double sigma = 0.0;           // rad/s, standard deviation per shot
  double pi_time = 1.75e-6;     // s
  double wait_time = 100e-9;    // s, after each primitive
};

struct RotationAngleError {
  double epsilon = 0.0;  // relative over-rotation
};

using ErrorModel = std::variant<Depolarizing, QuasiStaticDetuning, RotationAngleError>;

// Quasi-static detuning spread from the model's power between f_lo and f_hi.
inline double quasi_static_sigma(const spectra::SpectrumModel& model, double f_lo, double f_hi) {
  return std::sqrt(spectra::band_power(model, f_lo, f_hi));
}

namespace detail {

inline std::size_t primitive_count(const RbmSequence& seq) {
  const auto& group = CliffordGroup::instance();
  std::size_t n = group[seq.recovery].decomposition.size();
  for (int g : seq.gates) n += group[g].decomposition.size();
  return n;
}

inline std::vector<Primitive> flatten(const RbmSequence& seq) {
  const auto& group = CliffordGroup::instance();
  std::vector<Primitive> out;
  for (int g : seq.gates) {
    const auto& d = group[g].decomposition;
    out.insert(out.end(), d.begin(), d.end());
  }
  const auto& d = group[seq.recovery].decomposition;
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

// Rotation for one primitive under a static detuning delta (rad/s): the
// drive (Rabi angular rate pi / pi_time) and delta combine into a tilted
// axis; the inter-gate wait adds precession about z.
inline Eigen::Matrix3d detuned_rotation(Primitive p, double delta, const QuasiStaticDetuning& q) {
  const double rabi = std::numbers::pi / q.pi_time;
  const auto aa = axis_angle(p);
  Eigen::Matrix3d r;
  if (p == Primitive::kI) {
    r = so3(Eigen::Vector3d::UnitZ(), delta * 0.5 * q.pi_time);
  } else {
    const double duration = aa.angle / rabi;
    const Eigen::Vector3d field = rabi * aa.axis + delta * Eigen::Vector3d::UnitZ();
    r = so3(field, field.norm() * duration);
  }
  return so3(Eigen::Vector3d::UnitZ(), delta * q.wait_time) * r;
}

// Probability that the sequence returns the qubit to its initial state.
template <class Rng>
double survival(const std::vector<Primitive>& prims, const ErrorModel& model, Rng& rng) {
  const Eigen::Vector3d r0(0.0, 0.0, 1.0);
  if (const auto* dep = std::get_if<Depolarizing>(&model)) {
    Eigen::Vector3d r = r0;
    for (Primitive p : prims) {
      const auto aa = axis_angle(p);
      if (aa.angle != 0.0) r = so3(aa.axis, aa.angle) * r;
    }
    const double shrink = std::pow(1.0 - dep->probability, static_cast<double>(prims.size()));
    return 0.5 * (1.0 + shrink * r.dot(r0));
  }
  if (const auto* rot = std::get_if<RotationAngleError>(&model)) {
    Eigen::Vector3d r = r0;
    for (Primitive p : prims) {
      const auto aa = axis_angle(p);
      if (aa.angle != 0.0) r = so3(aa.axis, aa.angle * (1.0 + rot->epsilon)) * r;
    }
    return 0.5 * (1.0 + r.dot(r0));
  }
  const auto& q = std::get<QuasiStaticDetuning>(model);
  const double delta = std::normal_distribution<double>(0.0, q.sigma)(rng);
  Eigen::Vector3d r = r0;
  for (Primitive p : prims) r = detuned_rotation(p, delta, q) * r;
  return 0.5 * (1.0 + r.dot(r0));
}

}  // namespace detail

struct SurvivalPoint {
  std::size_t m = 0;
  double mean = 0.0;
  double std_err = 0.0;
  std::size_t n_sequences = 0;
};

struct RbmFit {
  double a = 0.0;
  double p = 0.0;
  double b = 0.0;
  double p_ci95 = 0.0;
  bool p_clamped = false;
  double f_clifford = 0.0;
  double f_primitive = 0.0;
};

inline constexpr double kPrimitivesPerClifford = 1.875;

inline double clifford_fidelity(double p) { return 1.0 - 0.5 * (1.0 - p); }
inline double primitive_fidelity(double f_clifford,
                                 double primitives_per_clifford = kPrimitivesPerClifford) {
  return 1.0 - (1.0 - f_clifford) / primitives_per_clifford;
}

// Weighted fit of A p^M + B with B in [0, 1] and p <= 1.
inline fit::FitResult<RbmFit> fit_rbm(std::span<const SurvivalPoint> survival) {
  std::vector<std::size_t> ms;
  for (const auto& s : survival) ms.push_back(s.m);
  std::sort(ms.begin(), ms.end());
  if (std::unique(ms.begin(), ms.end()) - ms.begin() < 4) {
    throw PreconditionError("fit_rbm: need >= 4 distinct M values");
  }
  const std::size_t n = survival.size();
  bool weighted = true;
  for (const auto& s : survival) weighted = weighted && s.std_err > 0.0;

  // Start from a log-linear fit with B at the mixed-state value 0.5.
  std::vector<double> x, y;
  for (const auto& s : survival) {
    if (s.mean - 0.5 > 1e-6) {
      x.push_back(static_cast<double>(s.m));
      y.push_back(std::log(s.mean - 0.5));
    }
  }
  double p0 = 0.99;
  double a0 = survival.front().mean - 0.5;
  if (x.size() >= 2) {
    try {
      const auto line = fit::linear_fit(x, y);
      p0 = std::clamp(std::exp(line.slope), 0.5, 1.0);
      a0 = std::exp(line.intercept);
    } catch (const std::invalid_argument&) {
    }
  }
  auto residual = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd r(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double model = v[0] * std::pow(v[1], static_cast<double>(survival[i].m)) + v[2];
      r[i] = (model - survival[i].mean) / (weighted ? survival[i].std_err : 1.0);
    }
    return r;
  };
  auto jacobian = [&](const Eigen::VectorXd& v) {
    Eigen::MatrixXd j(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const double m = static_cast<double>(survival[i].m);
      const double w = weighted ? survival[i].std_err : 1.0;
      j(i, 0) = std::pow(v[1], m) / w;
      j(i, 1) = m > 0 ? v[0] * m * std::pow(v[1], m - 1.0) / w : 0.0;
      j(i, 2) = 1.0 / w;
    }
    return j;
  };
  Eigen::VectorXd x0(3), lo(3), hi(3);
  x0 << a0, p0, 0.5;
  lo << -2.0, 0.0, 0.0;
  hi << 2.0, 1.0, 1.0;
  const auto s = fit::levenberg_marquardt(residual, jacobian, x0, lo, hi);
  if (!s.converged) return fit::FitFailure{"fit_rbm: no convergence", s.iterations, s.cost};
  RbmFit out;
  out.a = s.x[0];
  out.p = s.x[1];
  out.b = s.x[2];
  out.p_clamped = out.p >= 1.0 - 1e-12;
  const double dof = static_cast<double>(n) - 3.0;
  const auto cov = fit::covariance(s.jacobian, dof > 0 ? s.cost / dof : 1.0);
  out.p_ci95 = fit::t_quantile(std::max(dof, 1.0)) * std::sqrt(std::max(cov(1, 1), 0.0));
  out.f_clifford = clifford_fidelity(out.p);
  out.f_primitive = primitive_fidelity(out.f_clifford);
  return out;
}

struct InterleavedResult {
  double fidelity = 0.0;
  bool unphysical = false;  // p_int > p_ref or outside (0, 1]
};

// F_gate = 1 - (1 - p_int / p_ref) / 2.
inline InterleavedResult interleaved_fidelity(double p_ref, double p_int) {
  if (p_ref == 0.0) throw DomainError("interleaved_fidelity: p_ref must be nonzero");
  InterleavedResult r;
  r.fidelity = 1.0 - 0.5 * (1.0 - p_int / p_ref);
  r.unphysical = !(p_int > 0.0 && p_int <= p_ref && p_ref <= 1.0);
  return r;
}

struct RbmSettings {
  std::vector<std::size_t> lengths;
  std::size_t n_sequences = 30;
  std::size_t shots = 100;
  qubit::ReadoutFidelity readout;
  std::optional<int> interleave;
  std::uint64_t seed = 1;
  unsigned workers = 0;
};

struct RbmResult {
  std::vector<SurvivalPoint> survival;
  fit::FitResult<RbmFit> fit = fit::FitFailure{"not fitted"};
};

// Each (length, sequence) pair draws its gates and shots from
// derive_seed(seed, length index, sequence index).
inline RbmResult simulate_rbm(const ErrorModel& model, const RbmSettings& settings) {
  if (settings.lengths.empty()) throw PreconditionError("simulate_rbm: no sequence lengths");
  if (settings.n_sequences < 1 || settings.shots < 1) {
    throw PreconditionError("simulate_rbm: n_sequences and shots must be >= 1");
  }
  const std::size_t nm = settings.lengths.size();
  const std::size_t ns = settings.n_sequences;
  std::vector<double> measured(nm * ns);
  const bool per_shot = std::holds_alternative<QuasiStaticDetuning>(model);
  parallel_for(
      nm * ns,
      [&](std::size_t job) {
        const std::size_t mi = job / ns;
        const std::size_t si = job % ns;
        const std::uint64_t seed = derive_seed(settings.seed, mi, si);
        const auto seq = random_rbm_sequence(settings.lengths[mi], settings.interleave, seed);
        const auto prims = detail::flatten(seq);
        std::mt19937_64 rng(derive_seed(seed, 0x5407));
        std::size_t ups = 0;
        if (per_shot) {
          for (std::size_t k = 0; k < settings.shots; ++k) {
            const double p = detail::survival(prims, model, rng);
            std::bernoulli_distribution shot(qubit::measured_probability(p, settings.readout));
            ups += shot(rng) ? 1 : 0;
          }
        } else {
          const double p = detail::survival(prims, model, rng);
          ups = qubit::measure(p, settings.shots, settings.readout, rng).ups;
        }
        measured[job] = static_cast<double>(ups) / static_cast<double>(settings.shots);
      },
      settings.workers);

  RbmResult result;
  for (std::size_t mi = 0; mi < nm; ++mi) {
    double mean = 0.0;
    for (std::size_t si = 0; si < ns; ++si) mean += measured[mi * ns + si];
    mean /= static_cast<double>(ns);
    double var = 0.0;
    for (std::size_t si = 0; si < ns; ++si) var += std::pow(measured[mi * ns + si] - mean, 2);
    double se = ns > 1 ? std::sqrt(var / static_cast<double>(ns - 1) / static_cast<double>(ns)) : 0.0;
    // Floor at the binomial error of the pooled shots.
    const double pooled = std::sqrt(std::max(mean * (1.0 - mean), 1e-4) /
                                    static_cast<double>(ns * settings.shots));
    se = std::max(se, pooled);
    result.survival.push_back({settings.lengths[mi], mean, se, ns});
  }
  result.fit = fit_rbm(result.survival);
  return result;
}

// Depolarizing probability per primitive giving Clifford decay parameter p
// (p = mean over the group of (1 - d)^L).
inline double depolarizing_for_decay(double p_target) {
  const auto& group = CliffordGroup::instance();
  auto decay = [&](double d) {
    double s = 0.0;
    for (const auto& e : group.elements()) {
      s += std::pow(1.0 - d, static_cast<double>(e.decomposition.size()));
    }
    return s / static_cast<double>(group.size());
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (decay(mid) > p_target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline void write_survival_csv(std::span<const SurvivalPoint> survival,
                               const std::filesystem::path& path) {
  csv::Writer out(path, "M,mean_survival,std_err,n_sequences");
  for (const auto& s : survival) out.row(s.m, s.mean, s.std_err, s.n_sequences);
}

}  // namespace spinprobe::rb
