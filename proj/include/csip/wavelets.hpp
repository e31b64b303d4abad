#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "csip/daubechies.hpp"
#include "csip/grid.hpp"
#include "csip/multi_index.hpp"

namespace csip {

namespace detail {

// One periodic analysis level along x for every row of an n*n array:
// approx into [0,n/2), detail into [n/2,n) of each row.
inline void dwt_rows(std::vector<cplx>& a, int n, const std::vector<double>& h,
                     const std::vector<double>& g, std::vector<cplx>& scratch) {
  const int T = static_cast<int>(h.size());
  const int half = n / 2;
  for (int y = 0; y < n; ++y) {
    cplx* row = a.data() + static_cast<std::size_t>(y) * n;
    for (int k = 0; k < half; ++k) {
      cplx c{0, 0}, d{0, 0};
      for (int i = 0; i < T; ++i) {
        const cplx& xv = row[(2 * k + i) % n];
        c += h[static_cast<std::size_t>(i)] * xv;
        d += g[static_cast<std::size_t>(i)] * xv;
      }
      scratch[static_cast<std::size_t>(k)] = c;
      scratch[static_cast<std::size_t>(half + k)] = d;
    }
    for (int k = 0; k < n; ++k) row[k] = scratch[static_cast<std::size_t>(k)];
  }
}

inline void idwt_rows(std::vector<cplx>& a, int n, const std::vector<double>& h,
                      const std::vector<double>& g, std::vector<cplx>& scratch) {
  const int T = static_cast<int>(h.size());
  const int half = n / 2;
  for (int y = 0; y < n; ++y) {
    cplx* row = a.data() + static_cast<std::size_t>(y) * n;
    std::fill(scratch.begin(), scratch.begin() + n, cplx{0, 0});
    for (int k = 0; k < half; ++k) {
      const cplx c = row[k], d = row[half + k];
      for (int i = 0; i < T; ++i)
        scratch[static_cast<std::size_t>((2 * k + i) % n)] +=
            h[static_cast<std::size_t>(i)] * c + g[static_cast<std::size_t>(i)] * d;
    }
    for (int k = 0; k < n; ++k) row[k] = scratch[static_cast<std::size_t>(k)];
  }
}

inline void transpose(std::vector<cplx>& a, int n) {
  for (int y = 0; y < n; ++y)
    for (int x = y + 1; x < n; ++x)
      std::swap(a[static_cast<std::size_t>(y) * n + x], a[static_cast<std::size_t>(x) * n + y]);
}

} // namespace detail

// Full Mallat pyramid of an orthogonal periodic 2D DWT, decomposed down to a
// coarsest S*S scaling block.  Detail level j holds three (S*2^j)^2 subbands;
// total coefficient count equals the input sample count (the transform is an
// orthogonal change of basis).
struct WaveletPyramid {
  int S = 0, q = 0;
  std::vector<cplx> scaling;                              // S*S, level 0
  std::vector<std::array<std::vector<cplx>, 3>> details;  // [j][kind-1], j = 0..q-1

  static WaveletPyramid zeros(int S, int q) {
    WaveletPyramid p;
    p.S = S;
    p.q = q;
    p.scaling.assign(static_cast<std::size_t>(S) * S, cplx{0, 0});
    p.details.resize(static_cast<std::size_t>(q));
    for (int j = 0; j < q; ++j) {
      std::size_t nj = static_cast<std::size_t>(S) << j;
      for (auto& band : p.details[static_cast<std::size_t>(j)]) band.assign(nj * nj, cplx{0, 0});
    }
    return p;
  }
};

// Forward transform of a (S*2^q)^2 array (row-major, x fastest).
inline WaveletPyramid dwt2_forward(std::vector<cplx> a, int S, int q, const WaveletFamily& fam) {
  const std::vector<double> h = fam.h, g = fam.g();
  WaveletPyramid pyr = WaveletPyramid::zeros(S, q);
  std::vector<cplx> scratch(static_cast<std::size_t>(S) << q);
  for (int j = q - 1; j >= 0; --j) {
    const int n = S << (j + 1); // current LL size
    detail::dwt_rows(a, n, h, g, scratch);
    detail::transpose(a, n);
    detail::dwt_rows(a, n, h, g, scratch);
    detail::transpose(a, n);
    // quadrants: x-half selects the x filter, y-half the y filter
    const int half = n / 2;
    auto& bands = pyr.details[static_cast<std::size_t>(j)];
    std::vector<cplx> ll(static_cast<std::size_t>(half) * half);
    for (int y = 0; y < half; ++y)
      for (int x = 0; x < half; ++x) {
        std::size_t src = static_cast<std::size_t>(y) * n;
        std::size_t dst = static_cast<std::size_t>(y) * half + x;
        ll[dst] = a[src + x];
        bands[0][dst] = a[src + half + x];                                   // detail_x: high x, low y
        bands[1][dst] = a[static_cast<std::size_t>(y + half) * n + x];       // detail_y
        bands[2][dst] = a[static_cast<std::size_t>(y + half) * n + half + x]; // detail_xy
      }
    a = std::move(ll);
    a.resize(static_cast<std::size_t>(half) * half);
  }
  pyr.scaling = std::move(a);
  return pyr;
}

inline std::vector<cplx> dwt2_inverse(const WaveletPyramid& pyr, const WaveletFamily& fam) {
  const std::vector<double> h = fam.h, g = fam.g();
  std::vector<cplx> a = pyr.scaling;
  std::vector<cplx> scratch(static_cast<std::size_t>(pyr.S) << pyr.q);
  for (int j = 0; j < pyr.q; ++j) {
    const int half = pyr.S << j;
    const int n = 2 * half;
    std::vector<cplx> full(static_cast<std::size_t>(n) * n);
    const auto& bands = pyr.details[static_cast<std::size_t>(j)];
    for (int y = 0; y < half; ++y)
      for (int x = 0; x < half; ++x) {
        std::size_t src = static_cast<std::size_t>(y) * half + x;
        full[static_cast<std::size_t>(y) * n + x] = a[src];
        full[static_cast<std::size_t>(y) * n + half + x] = bands[0][src];
        full[static_cast<std::size_t>(y + half) * n + x] = bands[1][src];
        full[static_cast<std::size_t>(y + half) * n + half + x] = bands[2][src];
      }
    detail::transpose(full, n);
    detail::idwt_rows(full, n, h, g, scratch);
    detail::transpose(full, n);
    detail::idwt_rows(full, n, h, g, scratch);
    a = std::move(full);
  }
  return a;
}

// Adapted 2D wavelet basis: all atoms up to scale j_max whose support box
// intersects the open unit disk, realized as an exact subfamily of the
// orthogonal periodic DWT on the grid [-S/2, S/2)^2 with spacing h = 2^-q.
// Scaling-kind atoms appear only at j = 0.  analyze/synthesize carry the L2
// quadrature weight h, so coefficient l2 norms equal grid L2 norms.
class AdaptedWaveletBasis {
public:
  static AdaptedWaveletBasis build(const WaveletFamily& fam, int j_max, int q, int S) {
    if (j_max < 0) throw std::invalid_argument("basis: j_max < 0");
    if (q < j_max + 2)
      throw std::invalid_argument("basis: grid spacing 2^-q must be <= 2^-(j_max+2)");
    if (S % 2 != 0) throw std::invalid_argument("basis: extent S must be even");
    const int L = fam.support_len();
    if (S / 2 < 1 + L)
      throw std::invalid_argument("basis: domain [-S/2,S/2) too small; needs S/2 >= 1 + support_len");
    AdaptedWaveletBasis b;
    b.fam_ = fam;
    b.j_max_ = j_max;
    b.q_ = q;
    b.S_ = S;
    b.G_ = S << q;
    b.h_ = std::ldexp(1.0, -q);
    b.x0_ = -S / 2.0;

    std::vector<MultiIndex> idx;
    const double Lf = static_cast<double>(L);
    for (int j = 0; j <= j_max; ++j) {
      const double scale = std::ldexp(1.0, -j);
      const int nmin = (-S / 2) << j;
      const int count = S << j;
      for (int ny = nmin; ny < nmin + count; ++ny)
        for (int nx = nmin; nx < nmin + count; ++nx) {
          // support box [n*2^-j, (n+L)*2^-j] per axis; keep if it meets the open unit disk
          double bx0 = nx * scale, bx1 = (nx + Lf) * scale;
          double by0 = ny * scale, by1 = (ny + Lf) * scale;
          double cx = std::clamp(0.0, bx0, bx1), cy = std::clamp(0.0, by0, by1);
          if (cx * cx + cy * cy >= 1.0) continue;
          // K geometry bookkeeping
          b.K_box_ = std::max({b.K_box_, std::abs(bx0), std::abs(bx1), std::abs(by0), std::abs(by1)});
          for (double ex : {bx0, bx1})
            for (double ey : {by0, by1})
              b.K_radius_ = std::max(b.K_radius_, std::hypot(ex, ey));
          MultiIndex mi{j, {nx, ny}, WaveletKind::detail_x};
          idx.push_back(mi);
          mi.kind = WaveletKind::detail_y;
          idx.push_back(mi);
          mi.kind = WaveletKind::detail_xy;
          idx.push_back(mi);
          if (j == 0) {
            mi.kind = WaveletKind::scaling;
            idx.push_back(mi);
          }
        }
    }
    b.gamma_ = std::make_shared<const IndexSet>(std::move(idx));
    return b;
  }

  const WaveletFamily& family() const { return fam_; }
  std::shared_ptr<const IndexSet> gamma() const { return gamma_; }
  int j_max() const { return j_max_; }
  int q() const { return q_; }
  int S() const { return S_; }
  int grid_n() const { return G_; }
  double grid_h() const { return h_; }
  double grid_x0() const { return x0_; }
  double K_box() const { return K_box_; }        // max |coordinate| over supp(Gamma)
  double K_radius() const { return K_radius_; }  // max |x| over supp(Gamma)

  GridField empty_field() const { return GridField(G_, h_, x0_); }

  bool matches_grid(const GridField& f) const {
    return f.n == G_ && std::abs(f.h - h_) < 1e-14 && std::abs(f.x0 - x0_) < 1e-12;
  }

  // n-range [nmin, nmin+count) per axis of the full periodic level-j band.
  std::pair<int, int> level_n_range(int j) const { return {(-S_ / 2) << j, S_ << j}; }

  CoefficientVector analyze(const GridField& f) const {
    if (!matches_grid(f)) throw std::invalid_argument("analyze: field grid does not match basis grid");
    WaveletPyramid pyr = dwt2_forward(f.v, S_, q_, fam_);
    CoefficientVector x(gamma_);
    for (int p = 0; p < gamma_->size(); ++p) x[p] = h_ * pyramid_at(pyr, (*gamma_)[p]);
    return x;
  }

  GridField synthesize(const CoefficientVector& x) const {
    if (x.iset != gamma_) check_aligned(x);
    WaveletPyramid pyr = WaveletPyramid::zeros(S_, q_);
    for (int p = 0; p < x.size(); ++p) pyramid_at(pyr, (*x.iset)[p]) = x[p] / h_;
    GridField f = empty_field();
    f.v = dwt2_inverse(pyr, fam_);
    return f;
  }

  // Littlewood-Paley equivalent H^s norm: scaling block at weight 1,
  // detail scale j at weight 2^{sj}.  Valid for |s| < r.
  double sobolev_equiv_norm(const CoefficientVector& x, double s) const {
    if (std::abs(s) >= fam_.vanishing_moments)
      throw std::invalid_argument("sobolev_equiv_norm: |s| must be < family regularity");
    check_aligned(x);
    double acc = 0;
    for (int p = 0; p < x.size(); ++p) {
      const MultiIndex& mi = (*x.iset)[p];
      double w = (mi.kind == WaveletKind::scaling) ? 1.0 : std::exp2(s * mi.j);
      acc += w * w * std::norm(x[p]);
    }
    return std::sqrt(acc);
  }

  // Pointwise evaluation of the continuous atom via cascade tables
  // (independent of the grid DWT; linear interpolation at dyadic depth 10).
  double evaluate(const MultiIndex& mi, Point2 pt) const {
    ensure_tables();
    const double s2j = std::ldexp(1.0, mi.j);
    double u = s2j * pt.x - mi.n[0];
    double v = s2j * pt.y - mi.n[1];
    bool wx = mi.kind == WaveletKind::detail_x || mi.kind == WaveletKind::detail_xy;
    bool wy = mi.kind == WaveletKind::detail_y || mi.kind == WaveletKind::detail_xy;
    return s2j * table_eval(wx, u) * table_eval(wy, v);
  }

  std::string descriptor() const {
    return "{\"family\":\"" + fam_.name + "\",\"j_max\":" + std::to_string(j_max_) +
           ",\"q\":" + std::to_string(q_) + ",\"S\":" + std::to_string(S_) + "}";
  }

private:
  cplx& pyramid_at(WaveletPyramid& pyr, const MultiIndex& mi) const {
    const int nj = S_ << mi.j;
    const int off = (S_ / 2) << mi.j;
    int kx = mi.n[0] + off, ky = mi.n[1] + off;
    kx = ((kx % nj) + nj) % nj;
    ky = ((ky % nj) + nj) % nj;
    std::size_t flat = static_cast<std::size_t>(ky) * nj + kx;
    if (mi.kind == WaveletKind::scaling) {
      if (mi.j != 0) throw std::invalid_argument("scaling kind only at j = 0");
      return pyr.scaling[flat];
    }
    return pyr.details[static_cast<std::size_t>(mi.j)][static_cast<std::size_t>(mi.kind) - 1][flat];
  }
  cplx pyramid_at(const WaveletPyramid& pyr, const MultiIndex& mi) const {
    return const_cast<AdaptedWaveletBasis*>(this)->pyramid_at(const_cast<WaveletPyramid&>(pyr), mi);
  }

  void check_aligned(const CoefficientVector& x) const {
    if (!x.iset) throw std::invalid_argument("coefficient vector without index set");
    for (int p = 0; p < x.size(); ++p)
      if (!gamma_->contains((*x.iset)[p]))
        throw std::invalid_argument("coefficient vector index outside basis Gamma");
  }

  void ensure_tables() const {
    if (!phi_tab_.empty()) return;
    phi_tab_ = cascade_scaling(fam_, kTabDepth);
    psi_tab_ = cascade_wavelet(fam_, kTabDepth);
  }

  double table_eval(bool wavelet, double t) const {
    const double L = fam_.support_len();
    if (t <= 0.0 || t >= L) return 0.0;
    const auto& tab = wavelet ? psi_tab_ : phi_tab_;
    double f = std::ldexp(t, kTabDepth);
    std::size_t i = static_cast<std::size_t>(f);
    double a = f - static_cast<double>(i);
    if (i + 1 >= tab.size()) return tab.back();
    return (1 - a) * tab[i] + a * tab[i + 1];
  }

  static constexpr int kTabDepth = 10;

  WaveletFamily fam_;
  int j_max_ = 0, q_ = 0, S_ = 0, G_ = 0;
  double h_ = 0, x0_ = 0;
  double K_box_ = 0, K_radius_ = 0;
  std::shared_ptr<const IndexSet> gamma_;
  mutable std::vector<double> phi_tab_, psi_tab_;
};

} // namespace csip
