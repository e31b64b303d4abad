#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "csip/multi_index.hpp"

namespace csip {

struct Point2 {
  double x = 0, y = 0;
  double norm() const { return std::hypot(x, y); }
};

// Square uniform grid sample of a field on [x0, x0 + n*h)^2, row-major with x
// fastest: value at (x0 + ix*h, x0 + iy*h) is v[iy*n + ix].  Periodic
// extension is assumed by the transforms that consume it.
struct GridField {
  int n = 0;
  double h = 0;
  double x0 = 0;
  std::vector<cplx> v;

  GridField() = default;
  GridField(int n_, double h_, double x0_) : n(n_), h(h_), x0(x0_), v(static_cast<std::size_t>(n_) * n_, cplx{0, 0}) {}

  cplx& at(int ix, int iy) { return v[static_cast<std::size_t>(iy) * n + ix]; }
  const cplx& at(int ix, int iy) const { return v[static_cast<std::size_t>(iy) * n + ix]; }

  double extent() const { return n * h; }

  bool same_grid(const GridField& o) const {
    return n == o.n && std::abs(h - o.h) < 1e-14 * h && std::abs(x0 - o.x0) < 1e-12;
  }

  // L2(dx) norm: h * ||v||_2.
  double norm_l2() const {
    double s = 0;
    for (const auto& z : v) s += std::norm(z);
    return h * std::sqrt(s);
  }

  double norm_inf() const {
    double s = 0;
    for (const auto& z : v) s = std::max(s, std::abs(z));
    return s;
  }

  // Bilinear interpolation; zero outside the grid box.
  cplx sample(Point2 p) const {
    double fx = (p.x - x0) / h, fy = (p.y - x0) / h;
    if (fx < 0 || fy < 0 || fx > n - 1 || fy > n - 1) return {0, 0};
    int ix = std::min(static_cast<int>(fx), n - 2);
    int iy = std::min(static_cast<int>(fy), n - 2);
    double ax = fx - ix, ay = fy - iy;
    return (1 - ax) * (1 - ay) * at(ix, iy) + ax * (1 - ay) * at(ix + 1, iy) +
           (1 - ax) * ay * at(ix, iy + 1) + ax * ay * at(ix + 1, iy + 1);
  }

  // Adjoint of `sample` w.r.t. counting inner products: spread val onto the
  // four surrounding nodes with the bilinear weights.
  void spread(Point2 p, cplx val) {
    double fx = (p.x - x0) / h, fy = (p.y - x0) / h;
    if (fx < 0 || fy < 0 || fx > n - 1 || fy > n - 1) return;
    int ix = std::min(static_cast<int>(fx), n - 2);
    int iy = std::min(static_cast<int>(fy), n - 2);
    double ax = fx - ix, ay = fy - iy;
    at(ix, iy) += (1 - ax) * (1 - ay) * val;
    at(ix + 1, iy) += ax * (1 - ay) * val;
    at(ix, iy + 1) += (1 - ax) * ay * val;
    at(ix + 1, iy + 1) += ax * ay * val;
  }
};

} // namespace csip
