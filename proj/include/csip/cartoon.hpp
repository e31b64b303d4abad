#pragma once

// Cartoon-like test images: two C^2 regions separated by a random C^2 closed
// curve, supported in the unit disk.  The boundary is a radially perturbed
// circle rho(theta) = r0 + sum_k a_k cos(k theta + phi_k); each region carries
// a random quadratic polynomial, and a C^2 radial bump confines the whole
// image strictly inside the disk.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "csip/grid.hpp"
#include "csip/rng.hpp"
#include "csip/wavelets.hpp"

namespace csip {

struct CartoonParams {
  double r0 = 0.55;         // base radius of the boundary curve
  int harmonics = 4;        // radial perturbation harmonics
  double perturb = 0.1;     // max amplitude per harmonic (scaled by 1/k^2)
  double inner_amp = 1.0;   // polynomial coefficient scale inside the curve
  double outer_amp = 0.6;   // ... outside the curve
  double bump_lo = 0.8;     // bump is 1 below this radius
  double bump_hi = 0.95;    // ... and 0 above this one
};

struct CartoonShape {
  double r0 = 0;
  std::vector<double> amp, phase;   // harmonic k = 1.. amplitudes/phases
  std::vector<double> poly_in, poly_out; // 1, x, y, x^2, xy, y^2
  double bump_lo = 0, bump_hi = 0;

  double rho(double theta) const {
    double r = r0;
    for (std::size_t k = 0; k < amp.size(); ++k)
      r += amp[k] * std::cos(static_cast<double>(k + 1) * theta + phase[k]);
    return r;
  }

  bool inside(Point2 p) const { return p.norm() < rho(std::atan2(p.y, p.x)); }

  // C^2 cutoff: 1 on [0, lo], quintic smoothstep down to 0 at hi.
  double bump(double r) const {
    if (r <= bump_lo) return 1.0;
    if (r >= bump_hi) return 0.0;
    double t = (r - bump_lo) / (bump_hi - bump_lo);
    return 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
  }

  double value(Point2 p) const {
    const double w = bump(p.norm());
    if (w == 0.0) return 0.0;
    const std::vector<double>& c = inside(p) ? poly_in : poly_out;
    return w * (c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.x * p.x + c[4] * p.x * p.y +
                c[5] * p.y * p.y);
  }
};

inline CartoonShape make_cartoon_shape(const CartoonParams& params, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, "cartoon-shape");
  CartoonShape s;
  s.r0 = params.r0;
  s.bump_lo = params.bump_lo;
  s.bump_hi = params.bump_hi;
  for (int k = 1; k <= params.harmonics; ++k) {
    s.amp.push_back(rng.uniform(-params.perturb, params.perturb) / (k * k));
    s.phase.push_back(rng.uniform(0.0, 6.283185307179586476925286766559));
  }
  for (int i = 0; i < 6; ++i)
    s.poly_in.push_back(params.inner_amp * rng.uniform(-1.0, 1.0));
  for (int i = 0; i < 6; ++i)
    s.poly_out.push_back(params.outer_amp * rng.uniform(-1.0, 1.0));
  return s;
}

inline GridField rasterize_cartoon(const CartoonShape& shape, const AdaptedWaveletBasis& basis) {
  GridField f = basis.empty_field();
  for (int iy = 0; iy < f.n; ++iy) {
    double y = f.x0 + iy * f.h;
    for (int ix = 0; ix < f.n; ++ix)
      f.at(ix, iy) = shape.value({f.x0 + ix * f.h, y});
  }
  return f;
}

inline GridField generate_cartoon_image(const AdaptedWaveletBasis& basis,
                                        const CartoonParams& params, std::uint64_t seed) {
  return rasterize_cartoon(make_cartoon_shape(params, seed), basis);
}

// Number of scale-j atoms whose support box straddles the boundary curve
// (contains points on both sides), by corner/edge probing of the box.
inline int count_edge_atoms(const AdaptedWaveletBasis& basis, const CartoonShape& shape, int j) {
  const IndexSet& g = *basis.gamma();
  auto [lo, hi] = g.scale_range(j);
  const double L = basis.family().support_len();
  int count = 0;
  int last_nx = std::numeric_limits<int>::min(), last_ny = last_nx;
  for (int p = lo; p < hi; ++p) {
    const MultiIndex& mi = g[p];
    if (mi.n[0] == last_nx && mi.n[1] == last_ny) continue; // kinds share the box
    last_nx = mi.n[0];
    last_ny = mi.n[1];
    const double s = std::ldexp(1.0, -mi.j);
    const double x0 = mi.n[0] * s, y0 = mi.n[1] * s, w = L * s;
    bool any_in = false, any_out = false;
    const int probes = 4;
    for (int a = 0; a <= probes && !(any_in && any_out); ++a)
      for (int b = 0; b <= probes; ++b) {
        Point2 pt{x0 + w * a / probes, y0 + w * b / probes};
        (shape.inside(pt) ? any_in : any_out) = true;
        if (any_in && any_out) break;
      }
    if (any_in && any_out) ++count;
  }
  return count;
}

} // namespace csip
