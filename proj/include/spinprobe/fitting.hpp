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

// Bounded Levenberg-Marquardt, weighted linear regression and the fit result
// wrapper shared by the decay, benchmarking and Stark fits.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>

namespace spinprobe::fit {

struct FitFailure {
  std::string reason;
  int iterations = 0;
  double final_cost = std::numeric_limits<double>::quiet_NaN();
};

// Either a fitted value or a failure carrying diagnostics.
template <class T>
class FitResult {
 public:
  FitResult(T value) : v_(std::move(value)) {}
  FitResult(FitFailure failure) : v_(std::move(failure)) {}

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }

  const T& value() const {
    if (!ok()) throw std::runtime_error("fit failed: " + failure().reason);
    return std::get<T>(v_);
  }
  const T& operator*() const { return value(); }
  const T* operator->() const { return &value(); }
  const FitFailure& failure() const { return std::get<FitFailure>(v_); }

 private:
  std::variant<T, FitFailure> v_;
};

// Two-sided quantile of Student's t (normal limit for dof <= 0 is not used).
inline double t_quantile(double dof, double confidence = 0.95) {
  if (!(dof > 0.0)) return std::numeric_limits<double>::infinity();
  const boost::math::students_t dist(dof);
  return boost::math::quantile(dist, 0.5 + 0.5 * confidence);
}

struct LmOptions {
  int max_iterations = 500;
  double xtol = 1e-13;
  double ftol = 1e-15;
  double gtol = 1e-14;
};

struct LmSummary {
  Eigen::VectorXd x;
  Eigen::MatrixXd jacobian;  // at x
  Eigen::VectorXd residuals;
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

template <class Residual>
Eigen::MatrixXd numeric_jacobian(Residual&& residual, const Eigen::VectorXd& x) {
  const Eigen::VectorXd f0 = residual(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * std::max(std::abs(x[j]), 1e-8);
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (residual(xp) - residual(xm)) / (2.0 * h);
  }
  return jac;
}

// Minimizes |r(x)|^2 subject to lower <= x <= upper. Parameters pinned at a
// bound by the gradient are frozen for the step (projected active set).
template <class Residual, class Jacobian>
LmSummary levenberg_marquardt(Residual&& residual, Jacobian&& jacobian, Eigen::VectorXd x,
                              const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                              const LmOptions& options = {}) {
  const Eigen::Index k = x.size();
  x = x.cwiseMax(lower).cwiseMin(upper);
  LmSummary out;
  Eigen::VectorXd f = residual(x);
  double cost = f.squaredNorm();
  double lambda = 1e-3;
  Eigen::MatrixXd jac = jacobian(x);
  int it = 0;
  bool converged = false;
  while (it < options.max_iterations) {
    ++it;
    if (!std::isfinite(cost)) break;
    const Eigen::VectorXd g = jac.transpose() * f;
    Eigen::Array<bool, Eigen::Dynamic, 1> free(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const bool at_lo = x[j] <= lower[j] && g[j] > 0.0;
      const bool at_hi = x[j] >= upper[j] && g[j] < 0.0;
      free[j] = !(at_lo || at_hi) && lower[j] < upper[j];
    }
    double gmax = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (free[j]) gmax = std::max(gmax, std::abs(g[j]) * std::max(std::abs(x[j]), 1e-300));
    }
    if (gmax <= options.gtol * std::max(cost, 1e-300) || cost == 0.0) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd a = jac.transpose() * jac;
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::MatrixXd m = a;
      for (Eigen::Index j = 0; j < k; ++j) {
        m(j, j) += lambda * std::max(a(j, j), 1e-300);
        if (!free[j]) {
          m.row(j).setZero();
          m.col(j).setZero();
          m(j, j) = 1.0;
        }
      }
      Eigen::VectorXd rhs = -g;
      for (Eigen::Index j = 0; j < k; ++j) {
        if (!free[j]) rhs[j] = 0.0;
      }
      const Eigen::VectorXd step = m.ldlt().solve(rhs);
      const Eigen::VectorXd xn = (x + step).cwiseMax(lower).cwiseMin(upper);
      const Eigen::VectorXd fn = residual(xn);
      const double cn = fn.squaredNorm();
      if (std::isfinite(cn) && cn <= cost) {
        const double dx = (xn - x).cwiseAbs().cwiseQuotient(x.cwiseAbs().cwiseMax(1e-300)).maxCoeff();
        const double df = (cost - cn) / std::max(cost, 1e-300);
        x = xn;
        f = fn;
        cost = cn;
        jac = jacobian(x);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (dx <= options.xtol || df <= options.ftol) converged = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      // No downhill step at any damping: a (constrained) stationary point.
      converged = true;
      break;
    }
    if (converged) break;
  }
  out.x = x;
  out.residuals = f;
  out.jacobian = jac;
  out.cost = cost;
  out.iterations = it;
  out.converged = converged && std::isfinite(cost);
  return out;
}

template <class Residual>
LmSummary levenberg_marquardt(Residual&& residual, Eigen::VectorXd x, const Eigen::VectorXd& lower,
                              const Eigen::VectorXd& upper, const LmOptions& options = {}) {
  return levenberg_marquardt(
      residual, [&](const Eigen::VectorXd& p) { return numeric_jacobian(residual, p); }, std::move(x),
      lower, upper, options);
}

// Covariance (J^T J)^-1, optionally scaled by the reduced chi-square.
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& jacobian, double scale = 1.0) {
  const Eigen::MatrixXd a = jacobian.transpose() * jacobian;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  return cod.pseudoInverse() * scale;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
  double cov = 0.0;  // cov(slope, intercept)
  double reduced_chi2 = 0.0;
  std::size_t n = 0;
};

// Weighted least squares y = intercept + slope x. Unit weights if empty.
// Standard errors are scaled by the reduced chi-square.
inline LineFit linear_fit(const std::vector<double>& x, const std::vector<double>& y,
                          std::vector<double> weights = {}) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("linear_fit: need >= 2 paired points");
  if (weights.empty()) weights.assign(n, 1.0);
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += weights[i];
    sx += weights[i] * x[i];
    sy += weights[i] * y[i];
  }
  const double mx = sx / sw;
  const double my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += weights[i] * (x[i] - mx) * (x[i] - mx);
    sxy += weights[i] * (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("linear_fit: x values are degenerate");
  LineFit out;
  out.n = n;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - out.intercept - out.slope * x[i];
    chi2 += weights[i] * r * r;
  }
  out.reduced_chi2 = n > 2 ? chi2 / static_cast<double>(n - 2) : 0.0;
  const double s2 = out.reduced_chi2;
  out.slope_se = std::sqrt(s2 / sxx);
  out.intercept_se = std::sqrt(s2 * (1.0 / sw + mx * mx / sxx));
  out.cov = -mx * s2 / sxx;
  return out;
}

}  // namespace spinprobe::fit
