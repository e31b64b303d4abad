#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <vector>

#include "csip/multi_index.hpp"
#include "csip/rng.hpp"

namespace csip {

using CVec = std::vector<cplx>;

inline cplx vdot(const CVec& a, const CVec& b) {
  cplx s{0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

inline double vnorm(const CVec& a) {
  double s = 0;
  for (const auto& z : a) s += std::norm(z);
  return std::sqrt(s);
}

inline void vscale(CVec& a, double c) {
  for (auto& z : a) z *= c;
}

inline void vaxpy(CVec& y, cplx a, const CVec& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// Matrix-free linear map with explicit adjoint.
struct LinearMap {
  int dim_in = 0, dim_out = 0;
  std::function<CVec(const CVec&)> apply;
  std::function<CVec(const CVec&)> adjoint;
};

struct NormEstimate {
  double value = 0;
  int iterations = 0;
  bool converged = false;
};

// Largest singular value by power iteration on A*A.
inline NormEstimate estimate_operator_norm(const LinearMap& A, int max_iters = 300,
                                           double tol = 1e-6, std::uint64_t seed = 7) {
  if (A.dim_in <= 0) return {0.0, 0, true};
  RngStream rng = RngStream::derive(seed, "opnorm");
  CVec v(static_cast<std::size_t>(A.dim_in));
  for (auto& z : v) z = rng.normal_complex();
  double nv = vnorm(v);
  vscale(v, 1.0 / nv);
  NormEstimate est;
  double prev = 0;
  for (int it = 1; it <= max_iters; ++it) {
    CVec w = A.apply(v);
    double sigma = vnorm(w);
    est.value = sigma;
    est.iterations = it;
    if (sigma == 0.0) { est.converged = true; return est; }
    CVec z = A.adjoint(w);
    double nz = vnorm(z);
    if (nz == 0.0) { est.converged = true; return est; }
    vscale(z, 1.0 / nz);
    v = std::move(z);
    if (it > 2 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) {
      est.converged = true;
      return est;
    }
    prev = sigma;
  }
  return est;
}

// Smallest singular value by inverse power iteration on the normal operator,
// with inner conjugate-gradient solves (A*A is SPD when A is injective).
// Capped iterations; non-convergence is reported, not fatal.
inline NormEstimate estimate_smallest_sv(const LinearMap& A, int max_iters = 200,
                                         double tol = 1e-4, int cg_max = 400,
                                         double cg_tol = 1e-10, std::uint64_t seed = 11) {
  RngStream rng = RngStream::derive(seed, "minsv");
  const std::size_t n = static_cast<std::size_t>(A.dim_in);
  auto normal_op = [&](const CVec& x) { return A.adjoint(A.apply(x)); };

  auto cg_solve = [&](const CVec& rhs, const CVec& x0) {
    CVec x = x0;
    CVec r = rhs;
    CVec ax = normal_op(x);
    for (std::size_t i = 0; i < n; ++i) r[i] -= ax[i];
    CVec p = r;
    double rr = std::pow(vnorm(r), 2);
    const double stop = cg_tol * std::max(1e-300, std::pow(vnorm(rhs), 2));
    for (int it = 0; it < cg_max && rr > stop; ++it) {
      CVec ap = normal_op(p);
      cplx pap = vdot(p, ap);
      if (std::abs(pap) < 1e-300) break;
      double alpha = rr / pap.real();
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
      }
      double rr_new = std::pow(vnorm(r), 2);
      double beta = rr_new / rr;
      rr = rr_new;
      for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    return x;
  };

  CVec v(n);
  for (auto& z : v) z = rng.normal_complex();
  vscale(v, 1.0 / vnorm(v));
  NormEstimate est;
  double prev = -1;
  CVec z(n, cplx{0, 0});
  for (int it = 1; it <= max_iters; ++it) {
    z = cg_solve(v, z);
    double nz = vnorm(z);
    if (nz == 0.0) break;
    vscale(z, 1.0 / nz);
    v = z;
    double sigma = vnorm(A.apply(v)); // Rayleigh estimate of the smallest sv
    est.value = sigma;
    est.iterations = it;
    if (prev >= 0 && std::abs(sigma - prev) <= tol * std::max(1e-300, sigma)) {
      est.converged = true;
      return est;
    }
    prev = sigma;
  }
  return est;
}

} // namespace csip
