#pragma once

#include <complex>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

#include "csip/grid.hpp"

namespace csip {

// Thin FFTW wrapper: in-place 2D complex-to-complex transforms.  The planner
// is serialized behind a mutex (FFTW's planner is not thread safe); plans use
// FFTW_ESTIMATE so results are deterministic run to run.
class Fft2 {
public:
  // sign = FFTW_FORWARD (-1) or FFTW_BACKWARD (+1); unnormalized as in FFTW.
  static void transform(std::vector<cplx>& a, int n, int sign) {
    if (static_cast<long long>(a.size()) != static_cast<long long>(n) * n)
      throw std::invalid_argument("Fft2: size mismatch");
    static std::mutex planner_mutex;
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(planner_mutex);
      plan = fftw_plan_dft_2d(n, n, reinterpret_cast<fftw_complex*>(a.data()),
                              reinterpret_cast<fftw_complex*>(a.data()), sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
      std::lock_guard<std::mutex> lock(planner_mutex);
      fftw_destroy_plan(plan);
    }
  }

  static void forward(std::vector<cplx>& a, int n) { transform(a, n, FFTW_FORWARD); }
  static void backward(std::vector<cplx>& a, int n) { transform(a, n, FFTW_BACKWARD); }

  // Signed frequency of DFT bin k on an n-point grid of spacing h:
  // xi = k'/(n h), k' = k for k < n/2, else k - n.
  static double freq(int k, int n, double h) {
    int kk = 2 * k < n ? k : k - n;
    return kk / (n * h);
  }
};

} // namespace csip
