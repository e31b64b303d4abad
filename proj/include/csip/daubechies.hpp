#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csip/multi_index.hpp"

namespace csip {

// Compactly supported orthogonal wavelet family (Daubechies db1..db4).
// Scaling filter h normalized to sum sqrt(2); phi supported on [0, T-1] with
// T = h.size().  The wavelet filter is g_k = (-1)^k h_{T-1-k}, so psi shares
// the support [0, T-1].
struct WaveletFamily {
  std::string name;
  std::vector<double> h;      // scaling (lowpass) filter
  int vanishing_moments = 0;  // p for dbp

  int taps() const { return static_cast<int>(h.size()); }
  int support_len() const { return taps() - 1; } // supp phi = [0, support_len]

  std::vector<double> g() const {
    const int T = taps();
    std::vector<double> out(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k)
      out[static_cast<std::size_t>(k)] = ((k & 1) ? -1.0 : 1.0) * h[static_cast<std::size_t>(T - 1 - k)];
    return out;
  }

  static WaveletFamily daubechies(int p) {
    WaveletFamily f;
    f.name = "db" + std::to_string(p);
    f.vanishing_moments = p;
    switch (p) {
      case 1:
        f.h = {0.7071067811865476, 0.7071067811865476};
        break;
      case 2:
        f.h = {0.4829629131445341, 0.8365163037378079, 0.2241438680420134, -0.1294095225512604};
        break;
      case 3:
        f.h = {0.3326705529500825, 0.8068915093110924, 0.4598775021184914,
               -0.1350110200102546, -0.0854412738820267, 0.0352262918857095};
        break;
      case 4:
        f.h = {0.2303778133088964, 0.7148465705529154, 0.6308807679298587, -0.0279837694168599,
               -0.1870348117190931, 0.0308413818355607, 0.0328830116668852, -0.0105974017850690};
        break;
      default:
        throw std::invalid_argument("WaveletFamily: only db1..db4 are provided");
    }
    f.validate();
    return f;
  }

  // QMF sanity: sum h = sqrt(2); shift-2 orthonormality sum_k h_k h_{k+2m} = delta_{m0}.
  void validate(double tol = 1e-12) const {
    const int T = taps();
    double s = 0;
    for (double c : h) s += c;
    if (std::abs(s - std::sqrt(2.0)) > tol) throw std::runtime_error(name + ": filter sum != sqrt(2)");
    for (int m = 0; 2 * m < T; ++m) {
      double dot = 0;
      for (int k = 0; k + 2 * m < T; ++k) dot += h[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(k + 2 * m)];
      if (std::abs(dot - (m == 0 ? 1.0 : 0.0)) > tol)
        throw std::runtime_error(name + ": filter not orthonormal at shift " + std::to_string(2 * m));
    }
  }
};

// Dyadic-grid values of the scaling function / wavelet by the cascade
// algorithm: exact integer values from the eigenvector (eigenvalue 1) of
// A_{i,k} = sqrt(2) h_{2i-k}, refined by the two-scale relation.  Returned
// vector holds f(k / 2^depth) for k = 0 .. support_len * 2^depth.
inline std::vector<double> cascade_scaling(const WaveletFamily& fam, int depth) {
  const int T = fam.taps();
  const int L = fam.support_len();
  std::vector<double> phi0(static_cast<std::size_t>(L + 1), 0.0);
  if (T == 2) {
    phi0[0] = 1.0; // Haar: phi(0)=1, phi(1)=0 with right-open support convention
  } else {
    // Interior integer values: nullspace of (A - I) on indices 1..L-1.
    const int m = L - 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
    for (int i = 1; i <= L - 1; ++i)
      for (int k = 1; k <= L - 1; ++k) {
        int idx = 2 * i - k;
        if (idx >= 0 && idx < T) A(i - 1, k - 1) = std::sqrt(2.0) * fam.h[static_cast<std::size_t>(idx)];
      }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A - Eigen::MatrixXd::Identity(m, m));
    lu.setThreshold(1e-9);
    Eigen::MatrixXd ker = lu.kernel();
    if (ker.cols() < 1) throw std::runtime_error("cascade_scaling: no eigenvalue-1 eigenvector");
    Eigen::VectorXd v = ker.col(0);
    double s = v.sum();
    if (std::abs(s) < 1e-12) throw std::runtime_error("cascade_scaling: degenerate eigenvector");
    v /= s; // sum_k phi(k) = 1
    for (int i = 1; i <= L - 1; ++i) phi0[static_cast<std::size_t>(i)] = v(i - 1);
  }
  // Refine: values at level d+1 from level d via phi(x) = sqrt2 sum h_k phi(2x-k).
  std::vector<double> cur = phi0;
  for (int d = 1; d <= depth; ++d) {
    const long long nprev = L * (1LL << (d - 1));
    const long long ncur = L * (1LL << d);
    std::vector<double> nxt(static_cast<std::size_t>(ncur + 1), 0.0);
    for (long long k = 0; k <= ncur; ++k) {
      // x = k/2^d; 2x - m = (k - m*2^{d-1}) / 2^{d-1}
      double acc = 0;
      for (int mth = 0; mth < T; ++mth) {
        long long idx = k - static_cast<long long>(mth) * (1LL << (d - 1));
        if (idx >= 0 && idx <= nprev) acc += fam.h[static_cast<std::size_t>(mth)] * cur[static_cast<std::size_t>(idx)];
      }
      nxt[static_cast<std::size_t>(k)] = std::sqrt(2.0) * acc;
    }
    cur = std::move(nxt);
  }
  return cur;
}

inline std::vector<double> cascade_wavelet(const WaveletFamily& fam, int depth) {
  if (depth < 1) throw std::invalid_argument("cascade_wavelet: depth >= 1 required");
  const int T = fam.taps();
  const int L = fam.support_len();
  std::vector<double> phi = cascade_scaling(fam, depth - 1);
  std::vector<double> g = fam.g();
  const long long n = L * (1LL << depth);
  const long long nphi = L * (1LL << (depth - 1));
  std::vector<double> psi(static_cast<std::size_t>(n + 1), 0.0);
  for (long long k = 0; k <= n; ++k) {
    double acc = 0;
    for (int m = 0; m < T; ++m) {
      long long idx = k - static_cast<long long>(m) * (1LL << (depth - 1));
      if (idx >= 0 && idx <= nphi) acc += g[static_cast<std::size_t>(m)] * phi[static_cast<std::size_t>(idx)];
    }
    psi[static_cast<std::size_t>(k)] = std::sqrt(2.0) * acc;
  }
  return psi;
}

// Continuous Fourier transform (convention fhat(xi) = int f(x) e^{-2pi i x xi} dx)
// of the scaling function via the truncated infinite product
// phihat(xi) = prod_{k>=1} H(xi 2^{-k}) / sqrt(2),   H(xi) = sum h_n e^{-2pi i xi n}.
inline cplx fourier_scaling(const WaveletFamily& fam, double xi, int factors = 30) {
  const double two_pi = 6.283185307179586476925286766559;
  cplx prod{1.0, 0.0};
  double x = xi;
  for (int k = 0; k < factors; ++k) {
    x *= 0.5;
    cplx H{0, 0};
    for (int n = 0; n < fam.taps(); ++n)
      H += fam.h[static_cast<std::size_t>(n)] * std::polar(1.0, -two_pi * x * n);
    prod *= H / std::sqrt(2.0);
    if (std::abs(x) < 1e-12) break; // remaining factors are 1 + O(x)
  }
  return prod;
}

inline cplx fourier_wavelet(const WaveletFamily& fam, double xi, int factors = 30) {
  const double two_pi = 6.283185307179586476925286766559;
  std::vector<double> g = fam.g();
  cplx G{0, 0};
  for (int n = 0; n < fam.taps(); ++n)
    G += g[static_cast<std::size_t>(n)] * std::polar(1.0, -two_pi * (xi / 2) * n);
  return (G / std::sqrt(2.0)) * fourier_scaling(fam, xi / 2, factors);
}

} // namespace csip
