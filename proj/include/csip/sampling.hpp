#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "csip/grid.hpp"
#include "csip/rng.hpp"

namespace csip {

// delta-dense, eta-separated finite point set in the frequency plane,
// realized as a jittered square lattice containing the origin exactly.
// delta and eta are recomputed from the points, never trusted from the
// construction parameters.
struct SeparatedLattice {
  std::vector<Point2> pts;
  double delta = 0;    // measured density radius (within the covered extent)
  double eta = 0;      // measured pairwise separation
  double R = 0;        // signal ball radius the lattice is adapted to
  double spacing = 0;
  double jitter = 0;
  double extent = 0;   // points cover [-extent, extent]^2
  int origin_index = -1;
};

namespace detail {
// grid-hash neighbor lookup over lattice points
struct CellHash {
  double cell;
  std::unordered_map<long long, std::vector<int>> map;
  static long long key(long long ix, long long iy) { return (ix << 32) ^ (iy & 0xffffffffLL); }
  CellHash(const std::vector<Point2>& pts, double cell_size) : cell(cell_size) {
    for (int i = 0; i < static_cast<int>(pts.size()); ++i)
      map[key(static_cast<long long>(std::floor(pts[static_cast<std::size_t>(i)].x / cell)),
              static_cast<long long>(std::floor(pts[static_cast<std::size_t>(i)].y / cell)))]
          .push_back(i);
  }
  template <class Fn>
  void for_neighbors(Point2 p, Fn&& fn) const {
    long long cx = static_cast<long long>(std::floor(p.x / cell));
    long long cy = static_cast<long long>(std::floor(p.y / cell));
    for (long long dy = -1; dy <= 1; ++dy)
      for (long long dx = -1; dx <= 1; ++dx) {
        auto it = map.find(key(cx + dx, cy + dy));
        if (it == map.end()) continue;
        for (int i : it->second) fn(i);
      }
  }
};
} // namespace detail

inline SeparatedLattice generate_lattice(double R, double spacing, double jitter,
                                         std::uint64_t seed, double extent = 20.0) {
  if (R <= 0 || spacing <= 0 || extent <= spacing)
    throw std::invalid_argument("generate_lattice: bad parameters");
  if (jitter >= spacing / 2) throw std::invalid_argument("generate_lattice: jitter must be < spacing/2");
  if (spacing * std::sqrt(0.5) + jitter >= 1.0 / (4.0 * R))
    throw std::invalid_argument("generate_lattice: delta bound spacing/sqrt2 + jitter < 1/(4R) violated");

  SeparatedLattice Z;
  Z.R = R;
  Z.spacing = spacing;
  Z.jitter = jitter;
  Z.extent = extent;
  RngStream rng = RngStream::derive(seed, "lattice");
  const int K = static_cast<int>(std::floor(extent / spacing));
  Z.pts.reserve(static_cast<std::size_t>(2 * K + 1) * (2 * K + 1));
  for (int iy = -K; iy <= K; ++iy)
    for (int ix = -K; ix <= K; ++ix) {
      Point2 p{ix * spacing, iy * spacing};
      if (ix == 0 && iy == 0) {
        Z.origin_index = static_cast<int>(Z.pts.size()); // 0 in Z exactly, unjittered
      } else if (jitter > 0) {
        p.x += rng.uniform(-jitter, jitter);
        p.y += rng.uniform(-jitter, jitter);
      }
      Z.pts.push_back(p);
    }

  // measured separation eta: nearest-neighbor min via cell hash
  detail::CellHash hash(Z.pts, spacing);
  double eta2 = std::numeric_limits<double>::max();
  for (int i = 0; i < static_cast<int>(Z.pts.size()); ++i) {
    Point2 a = Z.pts[static_cast<std::size_t>(i)];
    hash.for_neighbors(a, [&](int k) {
      if (k == i) return;
      Point2 b = Z.pts[static_cast<std::size_t>(k)];
      double d2 = (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
      eta2 = std::min(eta2, d2);
    });
  }
  Z.eta = std::sqrt(eta2);

  // measured density radius delta: worst nearest distance over a probe grid
  // strictly inside the covered extent (boundary cells would bias it).
  double delta = 0;
  const double lim = (K - 1) * spacing;
  const double step = spacing / 6.0;
  for (double y = -lim; y <= lim; y += step)
    for (double x = -lim; x <= lim; x += step) {
      Point2 p{x, y};
      double best = std::numeric_limits<double>::max();
      hash.for_neighbors(p, [&](int k) {
        Point2 b = Z.pts[static_cast<std::size_t>(k)];
        double d2 = (p.x - b.x) * (p.x - b.x) + (p.y - b.y) * (p.y - b.y);
        best = std::min(best, d2);
      });
      delta = std::max(delta, best);
    }
  Z.delta = std::sqrt(delta);
  if (Z.delta >= 1.0 / (4.0 * R))
    throw std::invalid_argument("generate_lattice: measured delta violates delta < 1/(4R)");
  return Z;
}

// Exact count of lattice points with |t| in [C0*2^j, C0*2^{j+1}).
inline int shell_count(const SeparatedLattice& Z, double C0, int j) {
  if (C0 <= 0 || j < 0) throw std::invalid_argument("shell_count: C0 > 0, j >= 0 required");
  const double lo = C0 * std::ldexp(1.0, j), hi = C0 * std::ldexp(1.0, j + 1);
  int c = 0;
  for (const auto& p : Z.pts) {
    double r = p.norm();
    if (r >= lo && r < hi) ++c;
  }
  return c;
}

enum class NoiseMode { uniform, nonuniform };

struct MeasurementPlan {
  std::vector<Point2> t;
  std::vector<double> fnu;   // density value at each sample
  std::vector<int> atom;     // lattice atom index, or -1 for continuous densities
  std::uint64_t seed = 0;
  NoiseMode mode = NoiseMode::uniform;
  int m() const { return static_cast<int>(t.size()); }
};

// Sampling density per the paper's normalization recipe f_nu = C_nu^{-1} g_nu.
// Continuous kinds are densities w.r.t. Lebesgue measure; the lattice kind is
// a pmf on Z cap B_N.
struct SamplingDensity {
  enum class Kind { uniform_ball, exponential, lattice_inverse_quadratic };
  Kind kind = Kind::uniform_ball;
  double N = 0;          // support ball radius (uniform / lattice truncation)
  double rate = 0;       // a in g(t) = e^{-a|t|}
  double C_nu = 0;       // normalization: f_nu = g_nu / C_nu
  double c_nu = 0;       // lower bound of f_nu on its support (0 if none)
  std::shared_ptr<const SeparatedLattice> lattice;
  std::vector<int> support_idx;   // lattice points inside B_N
  std::vector<double> cumw;       // cumulative pmf over support_idx

  double pdf(Point2 p) const {
    switch (kind) {
      case Kind::uniform_ball:
        return p.norm() <= N ? 1.0 / C_nu : 0.0;
      case Kind::exponential:
        return std::exp(-rate * p.norm()) / C_nu;
      case Kind::lattice_inverse_quadratic:
        return (1.0 / (1.0 + p.x * p.x + p.y * p.y)) / C_nu;
    }
    return 0;
  }

  static SamplingDensity uniform_ball(double N) {
    if (N <= 0) throw std::invalid_argument("uniform_ball: N > 0 required");
    SamplingDensity d;
    d.kind = Kind::uniform_ball;
    d.N = N;
    d.C_nu = 3.14159265358979323846 * N * N; // |B_N|
    d.c_nu = 1.0 / d.C_nu;
    return d;
  }

  static SamplingDensity exponential(double rate) {
    if (rate <= 0) throw std::invalid_argument("exponential: rate > 0 required");
    SamplingDensity d;
    d.kind = Kind::exponential;
    d.rate = rate;
    d.C_nu = 2.0 * 3.14159265358979323846 / (rate * rate); // int e^{-a|t|} dt over R^2
    d.c_nu = 0.0; // unbounded support: no positive lower bound
    return d;
  }

  static SamplingDensity inverse_quadratic(std::shared_ptr<const SeparatedLattice> Z, double N) {
    if (!Z || N <= 0) throw std::invalid_argument("inverse_quadratic: lattice and N > 0 required");
    if (N > Z->extent)
      throw std::invalid_argument("inverse_quadratic: N exceeds lattice extent");
    SamplingDensity d;
    d.kind = Kind::lattice_inverse_quadratic;
    d.N = N;
    d.lattice = Z;
    double acc = 0;
    double gmin = std::numeric_limits<double>::max();
    for (int i = 0; i < static_cast<int>(Z->pts.size()); ++i) {
      const Point2& p = Z->pts[static_cast<std::size_t>(i)];
      if (p.norm() > N) continue;
      double g = 1.0 / (1.0 + p.x * p.x + p.y * p.y);
      d.support_idx.push_back(i);
      acc += g;
      gmin = std::min(gmin, g);
      d.cumw.push_back(acc);
    }
    if (d.support_idx.empty()) throw std::invalid_argument("inverse_quadratic: empty support");
    d.C_nu = acc;
    for (auto& c : d.cumw) c /= acc;
    d.cumw.back() = 1.0;
    d.c_nu = gmin / acc;
    return d;
  }
};

inline MeasurementPlan draw_samples(const SamplingDensity& density, int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("draw_samples: m >= 1 required");
  RngStream rng = RngStream::derive(seed, "draw_samples");
  MeasurementPlan plan;
  plan.seed = seed;
  plan.t.reserve(static_cast<std::size_t>(m));
  plan.fnu.reserve(static_cast<std::size_t>(m));
  plan.atom.assign(static_cast<std::size_t>(m), -1);
  const double two_pi = 6.283185307179586476925286766559;
  for (int k = 0; k < m; ++k) {
    Point2 p;
    switch (density.kind) {
      case SamplingDensity::Kind::uniform_ball: {
        double r = density.N * std::sqrt(rng.next_double());
        double a = two_pi * rng.next_double();
        p = {r * std::cos(a), r * std::sin(a)};
        break;
      }
      case SamplingDensity::Kind::exponential: {
        // radial pdf a^2 r e^{-ar} = Gamma(2, 1/a): sum of two exponentials
        double u1 = rng.next_double(), u2 = rng.next_double();
        while (u1 <= 0) u1 = rng.next_double();
        while (u2 <= 0) u2 = rng.next_double();
        double r = -(std::log1p(-u1) + std::log1p(-u2)) / density.rate;
        double a = two_pi * rng.next_double();
        p = {r * std::cos(a), r * std::sin(a)};
        break;
      }
      case SamplingDensity::Kind::lattice_inverse_quadratic: {
        double u = rng.next_double();
        auto it = std::lower_bound(density.cumw.begin(), density.cumw.end(), u);
        std::size_t pos = static_cast<std::size_t>(it - density.cumw.begin());
        if (pos >= density.support_idx.size()) pos = density.support_idx.size() - 1;
        int idx = density.support_idx[pos];
        p = density.lattice->pts[static_cast<std::size_t>(idx)];
        plan.atom[static_cast<std::size_t>(k)] = idx;
        break;
      }
    }
    plan.t.push_back(p);
    plan.fnu.push_back(density.pdf(p));
  }
  return plan;
}

} // namespace csip
