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

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace spinprobe::fft {

namespace detail {

// FFTW planning is not thread-safe, execution with the new-array interface
// is. Plans are created once per length and kept for the process lifetime.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan complex_to_real(int n) { return get(c2r_, n, false); }
  fftw_plan real_to_complex(int n) { return get(r2c_, n, true); }

 private:
  fftw_plan get(std::map<int, fftw_plan>& plans, int n, bool forward) {
    std::lock_guard lock(mutex_);
    if (auto it = plans.find(n); it != plans.end()) return it->second;
    double* real = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* cplx = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan = forward ? fftw_plan_dft_r2c_1d(n, real, cplx, flags)
                             : fftw_plan_dft_c2r_1d(n, cplx, real, flags);
    fftw_free(real);
    fftw_free(cplx);
    if (plan == nullptr) throw std::runtime_error("fftw planning failed");
    plans.emplace(n, plan);
    return plan;
  }

  std::mutex mutex_;
  std::map<int, fftw_plan> c2r_;
  std::map<int, fftw_plan> r2c_;
};

inline fftw_complex* as_fftw(std::complex<double>* p) {
  return reinterpret_cast<fftw_complex*>(p);
}

}  // namespace detail

// Unnormalized inverse real DFT: x_j = sum_k X_k exp(+2 pi i j k / n) with
// Hermitian completion of the half spectrum (n/2 + 1 bins).
inline std::vector<double> inverse_real(std::vector<std::complex<double>> half, std::size_t n) {
  if (half.size() != n / 2 + 1) throw std::invalid_argument("inverse_real: half-spectrum size");
  std::vector<double> out(n);
  fftw_plan plan = detail::PlanCache::instance().complex_to_real(static_cast<int>(n));
  fftw_execute_dft_c2r(plan, detail::as_fftw(half.data()), out.data());
  return out;
}

// Unnormalized forward real DFT, returning n/2 + 1 bins.
inline std::vector<std::complex<double>> forward_real(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_plan plan = detail::PlanCache::instance().real_to_complex(static_cast<int>(n));
  fftw_execute_dft_r2c(plan, in.data(), detail::as_fftw(out.data()));
  return out;
}

}  // namespace spinprobe::fft
