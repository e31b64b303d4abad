#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "csip/fft.hpp"
#include "csip/grid.hpp"
#include "csip/linop.hpp"
#include "csip/sampling.hpp"
#include "csip/wavelets.hpp"

namespace csip {

// Real-valued function table on a square grid with bilinear sampling.
struct RealTable {
  int n = 0;
  double h = 0, x0 = 0;
  std::vector<double> v;

  double at(int ix, int iy) const { return v[static_cast<std::size_t>(iy) * n + ix]; }

  double sample(Point2 p) const {
    double fx = (p.x - x0) / h, fy = (p.y - x0) / h;
    if (fx < 0 || fy < 0 || fx > n - 1 || fy > n - 1) return 0.0;
    int ix = std::min(static_cast<int>(fx), n - 2);
    int iy = std::min(static_cast<int>(fy), n - 2);
    double ax = fx - ix, ay = fy - iy;
    return (1 - ax) * (1 - ay) * at(ix, iy) + ax * (1 - ay) * at(ix + 1, iy) +
           (1 - ax) * ay * at(ix, iy + 1) + ax * ay * at(ix + 1, iy + 1);
  }

  double max_abs() const {
    double s = 0;
    for (double x : v) s = std::max(s, std::abs(x));
    return s;
  }
};

// (2 pi)^2: converts |xi|^2 in cycles to the (I - Delta) symbol.
inline constexpr double four_pi_sq = 39.478417604357434475337963999505;

// Smallest 5-smooth integer >= n (decent FFT sizes).
inline int next_fast_size(int n) {
  for (int m = n;; ++m) {
    int r = m;
    for (int p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

// Bessel-potential convolution U = (I - Delta)^{-b/2}: Fourier multiplier
// (1 + 4pi^2|xi|^2)^{-b/2} over frequencies xi in cycles, so the kernel is the
// classical Bessel potential with e^{-|x|} decay, applied on a padded periodic
// grid.  Pointwise measurements of basis atoms go through
// precomputed translation-response tables G_{j,eps} = kappa_b * phi_{j,0,eps},
// built spectrally from the exact continuous wavelet Fourier transforms, so
// F_t phi_{j,n,eps} = G_{j,eps}(t - n 2^{-j}).
class BesselConvolutionOp {
public:
  BesselConvolutionOp(std::shared_ptr<const AdaptedWaveletBasis> basis, double b,
                      double sample_radius, double pad_margin = 26.0)
      : basis_(std::move(basis)), b_(b), sample_radius_(sample_radius) {
    if (b_ <= 2.0) throw std::invalid_argument("BesselConvolutionOp: b > 2 required");
    if (sample_radius_ <= 0) throw std::invalid_argument("BesselConvolutionOp: sample radius > 0");
    pad_h_ = basis_->grid_h();
    double half = std::max(sample_radius_, basis_->K_box()) + pad_margin;
    pad_n_ = next_fast_size(static_cast<int>(std::ceil(2 * half / pad_h_)));
    while (pad_n_ % 2 != 0) pad_n_ = next_fast_size(pad_n_ + 1); // keep nodes aligned
    pad_x0_ = -0.5 * pad_n_ * pad_h_;
    build_tables();
  }

  double b() const { return b_; }
  double sample_radius() const { return sample_radius_; }
  const AdaptedWaveletBasis& basis() const { return *basis_; }
  int pad_n() const { return pad_n_; }
  double pad_h() const { return pad_h_; }
  double pad_x0() const { return pad_x0_; }

  // Forward field U u on the padded grid.  u must share the grid spacing and
  // be node-aligned with the padded grid.
  GridField apply(const GridField& u, bool check_padding = true) const {
    if (std::abs(u.h - pad_h_) > 1e-14)
      throw std::invalid_argument("bessel_apply: grid spacing mismatch");
    double offf = (u.x0 - pad_x0_) / pad_h_;
    int off = static_cast<int>(std::lround(offf));
    if (std::abs(offf - off) > 1e-9 || off < 0 || off + u.n > pad_n_)
      throw std::invalid_argument("bessel_apply: input grid not contained in padded grid");
    std::vector<cplx> a(static_cast<std::size_t>(pad_n_) * pad_n_, cplx{0, 0});
    for (int y = 0; y < u.n; ++y)
      for (int x = 0; x < u.n; ++x)
        a[static_cast<std::size_t>(y + off) * pad_n_ + (x + off)] = u.at(x, y);
    Fft2::forward(a, pad_n_);
    for (int ky = 0; ky < pad_n_; ++ky) {
      double xy = Fft2::freq(ky, pad_n_, pad_h_);
      for (int kx = 0; kx < pad_n_; ++kx) {
        double xx = Fft2::freq(kx, pad_n_, pad_h_);
        a[static_cast<std::size_t>(ky) * pad_n_ + kx] *=
            std::pow(1.0 + four_pi_sq * (xx * xx + xy * xy), -0.5 * b_);
      }
    }
    Fft2::backward(a, pad_n_);
    GridField out(pad_n_, pad_h_, pad_x0_);
    const double scale = 1.0 / (static_cast<double>(pad_n_) * pad_n_);
    for (std::size_t i = 0; i < a.size(); ++i) out.v[i] = a[i] * scale;
    if (check_padding) {
      // energy on the outermost ring must be negligible
      double ring = 0;
      for (int i = 0; i < pad_n_; ++i) {
        ring += std::norm(out.at(i, 0)) + std::norm(out.at(i, pad_n_ - 1));
        ring += std::norm(out.at(0, i)) + std::norm(out.at(pad_n_ - 1, i));
      }
      double un = 0;
      for (const auto& z : u.v) un += std::norm(z);
      if (un > 0 && std::sqrt(ring) > 1e-9 * std::sqrt(un))
        throw std::runtime_error("bessel_apply: insufficient padding (boundary energy)");
    }
    return out;
  }

  // Samples of the convolution kernel kappa_b on the padded grid.
  GridField kernel() const {
    GridField delta(pad_n_, pad_h_, pad_x0_);
    int c = static_cast<int>(std::lround(-pad_x0_ / pad_h_));
    delta.at(c, c) = 1.0 / (pad_h_ * pad_h_);
    // a delta has a flat spectrum, so the boundary-ring check would flag
    // benign Nyquist-band ringing rather than genuine wrap-around
    return apply(delta, /*check_padding=*/false);
  }

  cplx sample_pointwise(const GridField& forward_field, Point2 t) const {
    if (t.norm() > sample_radius_ + 1e-9)
      throw std::invalid_argument("sample_pointwise: t outside sampling radius");
    return forward_field.sample(t);
  }

  // F_t phi_{j,n,kind} via the translation-response tables.
  cplx response(const MultiIndex& mi, Point2 t) const {
    const RealTable& tab = table(mi.j, mi.kind);
    double s = std::ldexp(1.0, -mi.j);
    return {tab.sample({t.x - mi.n[0] * s, t.y - mi.n[1] * s}), 0.0};
  }

  const RealTable& table(int j, WaveletKind k) const {
    if (j < 0 || j > basis_->j_max()) throw std::invalid_argument("bessel table: scale out of range");
    if (k == WaveletKind::scaling && j != 0) throw std::invalid_argument("bessel table: scaling only at j=0");
    return tables_[static_cast<std::size_t>(j * 4 + static_cast<int>(k))];
  }

private:
  void build_tables() {
    const WaveletFamily& fam = basis_->family();
    const double ht = std::ldexp(1.0, -5);
    const double half = 18.0 + fam.support_len();
    const int nt = next_fast_size(static_cast<int>(std::ceil(2 * half / ht)));
    const double x0 = -0.5 * nt * ht;
    const double two_pi = 6.283185307179586476925286766559;

    std::vector<double> mult(static_cast<std::size_t>(nt) * nt);
    for (int ky = 0; ky < nt; ++ky) {
      double xy = Fft2::freq(ky, nt, ht);
      for (int kx = 0; kx < nt; ++kx) {
        double xx = Fft2::freq(kx, nt, ht);
        mult[static_cast<std::size_t>(ky) * nt + kx] =
            std::pow(1.0 + four_pi_sq * (xx * xx + xy * xy), -0.5 * b_);
      }
    }

    tables_.assign(static_cast<std::size_t>(basis_->j_max() + 1) * 4, RealTable{});
    std::vector<cplx> axis_s(static_cast<std::size_t>(nt)), axis_w(static_cast<std::size_t>(nt));
    std::vector<cplx> a(static_cast<std::size_t>(nt) * nt);
    for (int j = 0; j <= basis_->j_max(); ++j) {
      const double sj = std::ldexp(1.0, -j);
      for (int k = 0; k < nt; ++k) {
        double xi = Fft2::freq(k, nt, ht);
        cplx ph = std::polar(1.0, two_pi * xi * x0);
        axis_s[static_cast<std::size_t>(k)] = fourier_scaling(fam, xi * sj) * ph;
        axis_w[static_cast<std::size_t>(k)] = fourier_wavelet(fam, xi * sj) * ph;
      }
      for (WaveletKind kind : {WaveletKind::scaling, WaveletKind::detail_x, WaveletKind::detail_y,
                               WaveletKind::detail_xy}) {
        if (kind == WaveletKind::scaling && j != 0) continue;
        bool wx = kind == WaveletKind::detail_x || kind == WaveletKind::detail_xy;
        bool wy = kind == WaveletKind::detail_y || kind == WaveletKind::detail_xy;
        const auto& ax = wx ? axis_w : axis_s;
        const auto& ay = wy ? axis_w : axis_s;
        for (int ky = 0; ky < nt; ++ky)
          for (int kx = 0; kx < nt; ++kx) {
            std::size_t i = static_cast<std::size_t>(ky) * nt + kx;
            a[i] = sj * mult[i] * ax[static_cast<std::size_t>(kx)] * ay[static_cast<std::size_t>(ky)];
          }
        Fft2::backward(a, nt);
        RealTable tab;
        tab.n = nt;
        tab.h = ht;
        tab.x0 = x0;
        tab.v.resize(a.size());
        const double dxi2 = 1.0 / ((nt * ht) * (nt * ht));
        for (std::size_t i = 0; i < a.size(); ++i) tab.v[i] = a[i].real() * dxi2;
        tables_[static_cast<std::size_t>(j * 4 + static_cast<int>(kind))] = std::move(tab);
      }
    }
  }

  std::shared_ptr<const AdaptedWaveletBasis> basis_;
  double b_ = 0, sample_radius_ = 0;
  int pad_n_ = 0;
  double pad_h_ = 0, pad_x0_ = 0;
  std::vector<RealTable> tables_;
};

// Coefficient field descriptor for the elliptic problem.
struct SigmaSpec {
  enum class Kind { constant, sine } kind = Kind::constant;
  double base = 1.0;
  double amp = 0.0;
  double freq = 1.0;

  double operator()(Point2 p) const {
    if (kind == Kind::constant) return base;
    const double pi = 3.14159265358979323846;
    return base + amp * std::sin(freq * pi * p.x) * std::sin(freq * pi * p.y);
  }
};

// Solution operator of -div(sigma grad w) = u on Omega = (-L, L)^2 with
// homogeneous Dirichlet data: flux-form five-point stencil, face-averaged
// sigma, factored once with a sparse LDLT and reused for every solve.
class EllipticSolutionOp {
public:
  EllipticSolutionOp(double L, double h, SigmaSpec sigma) : L_(L), h_(h), sigma_(sigma) {
    if (L <= 0 || h <= 0) throw std::invalid_argument("EllipticSolutionOp: L, h > 0 required");
    double nf = 2 * L / h - 1;
    n_ = static_cast<int>(std::lround(nf));
    if (std::abs(nf - n_) > 1e-9 || n_ < 3)
      throw std::invalid_argument("EllipticSolutionOp: 2L/h must be an integer >= 4");
    x0_ = -L + h;
    assemble();
  }

  int n() const { return n_; }
  double h() const { return h_; }
  double L() const { return L_; }
  double x0() const { return x0_; }
  double lambda_floor() const { return lambda_; }
  double c_sigma() const { return c_sigma_; }

  // Solve with the source restricted to the PDE nodes (u may live on any
  // node-aligned grid with the same spacing; values are read at the nodes).
  GridField solve(const GridField& u) const {
    std::vector<cplx> rhs(static_cast<std::size_t>(n_) * n_);
    double offf = (x0_ - u.x0) / u.h;
    int off = static_cast<int>(std::lround(offf));
    bool aligned = std::abs(u.h - h_) < 1e-14 && std::abs(offf - off) < 1e-9;
    for (int iy = 0; iy < n_; ++iy)
      for (int ix = 0; ix < n_; ++ix) {
        cplx val;
        if (aligned) {
          int ux = ix + off, uy = iy + off;
          val = (ux >= 0 && uy >= 0 && ux < u.n && uy < u.n) ? u.at(ux, uy) : cplx{0, 0};
        } else {
          val = u.sample({x0_ + ix * h_, x0_ + iy * h_});
        }
        rhs[static_cast<std::size_t>(iy) * n_ + ix] = val;
      }
    return solve_nodes(rhs);
  }

  GridField solve_nodes(const std::vector<cplx>& rhs) const {
    const std::size_t N = static_cast<std::size_t>(n_) * n_;
    if (rhs.size() != N) throw std::invalid_argument("solve_nodes: size mismatch");
    Eigen::VectorXd br(N), bi(N);
    for (std::size_t i = 0; i < N; ++i) {
      br(static_cast<Eigen::Index>(i)) = rhs[i].real();
      bi(static_cast<Eigen::Index>(i)) = rhs[i].imag();
    }
    Eigen::VectorXd wr = ldlt_.solve(br);
    Eigen::VectorXd wi = ldlt_.solve(bi);
    // residual check (direct solve should be at rounding level)
    double rn = (mat_ * wr - br).norm() + (mat_ * wi - bi).norm();
    double bn = br.norm() + bi.norm();
    if (bn > 0 && rn > 1e-10 * bn)
      throw std::runtime_error("elliptic_solve: residual exceeds 1e-10 relative");
    GridField w(n_, h_, x0_);
    for (std::size_t i = 0; i < N; ++i)
      w.v[i] = cplx{wr(static_cast<Eigen::Index>(i)), wi(static_cast<Eigen::Index>(i))};
    return w;
  }

  cplx sample_pointwise(const GridField& w, Point2 t) const {
    if (std::abs(t.x) >= L_ || std::abs(t.y) >= L_)
      throw std::invalid_argument("sample_pointwise: t outside Omega");
    return w.sample(t);
  }

  // Adjoint of (node restriction -> solve -> bilinear sample at t) w.r.t.
  // counting inner products: spread, solve (self-adjoint), read at nodes.
  std::vector<cplx> adjoint_point_sources(const std::vector<Point2>& ts,
                                          const std::vector<cplx>& vals) const {
    GridField g(n_, h_, x0_);
    for (std::size_t k = 0; k < ts.size(); ++k) g.spread(ts[k], vals[k]);
    GridField w = solve_nodes(g.v);
    return w.v;
  }

private:
  void assemble() {
    const std::size_t N = static_cast<std::size_t>(n_) * n_;
    auto node = [&](int ix, int iy) { return Point2{x0_ + ix * h_, x0_ + iy * h_}; };
    lambda_ = std::numeric_limits<double>::max();
    double gradmax = 0;
    for (int iy = -1; iy <= n_; ++iy)
      for (int ix = -1; ix <= n_; ++ix) {
        Point2 p = node(ix, iy);
        double s = sigma_(p);
        lambda_ = std::min(lambda_, s);
        double gx = (sigma_({p.x + h_, p.y}) - s) / h_;
        double gy = (sigma_({p.x, p.y + h_}) - s) / h_;
        gradmax = std::max(gradmax, std::hypot(gx, gy));
      }
    if (lambda_ <= 0) throw std::invalid_argument("EllipticSolutionOp: sigma violates ellipticity");
    c_sigma_ = gradmax;

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * N);
    const double ih2 = 1.0 / (h_ * h_);
    for (int iy = 0; iy < n_; ++iy)
      for (int ix = 0; ix < n_; ++ix) {
        int p = iy * n_ + ix;
        double sc = sigma_(node(ix, iy));
        double diag = 0;
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          int jx = ix + dx[d], jy = iy + dy[d];
          double sf = 0.5 * (sc + sigma_(node(jx, jy)));
          diag += sf * ih2;
          if (jx >= 0 && jy >= 0 && jx < n_ && jy < n_)
            trip.emplace_back(p, jy * n_ + jx, -sf * ih2);
        }
        trip.emplace_back(p, p, diag);
      }
    mat_.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    mat_.setFromTriplets(trip.begin(), trip.end());
    ldlt_.compute(mat_);
    if (ldlt_.info() != Eigen::Success)
      throw std::runtime_error("EllipticSolutionOp: factorization failed (singular/indefinite system)");
  }

  double L_ = 0, h_ = 0, x0_ = 0, lambda_ = 0, c_sigma_ = 0;
  int n_ = 0;
  SigmaSpec sigma_;
  Eigen::SparseMatrix<double> mat_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
};

// Modulated Fourier measurements F_t u = (1+|t|^2)^{-b/2} uhat(t) on a
// separated lattice.  Atom responses use the exact continuous wavelet Fourier
// transforms; field responses use direct quadrature over the grid.
class ModulatedFourierOp {
public:
  ModulatedFourierOp(std::shared_ptr<const AdaptedWaveletBasis> basis,
                     std::shared_ptr<const SeparatedLattice> lattice, double b, double R)
      : basis_(std::move(basis)), lattice_(std::move(lattice)), b_(b), R_(R) {
    int r = basis_->family().vanishing_moments;
    if (!(b_ > 0 && b_ < r))
      throw std::invalid_argument("ModulatedFourierOp: b in (0, r) required");
    if (R_ <= basis_->K_radius())
      throw std::invalid_argument("ModulatedFourierOp: R must exceed the basis support radius");
    if (lattice_->delta >= 1.0 / (4.0 * R_))
      throw std::invalid_argument("ModulatedFourierOp: lattice delta too large for this R");
  }

  double b() const { return b_; }
  double R() const { return R_; }
  const AdaptedWaveletBasis& basis() const { return *basis_; }
  const SeparatedLattice& lattice() const { return *lattice_; }

  double modulation(Point2 t) const { return std::pow(1.0 + t.x * t.x + t.y * t.y, -0.5 * b_); }

  cplx response(const MultiIndex& mi, Point2 t) const {
    const WaveletFamily& fam = basis_->family();
    const double sj = std::ldexp(1.0, -mi.j);
    bool wx = mi.kind == WaveletKind::detail_x || mi.kind == WaveletKind::detail_xy;
    bool wy = mi.kind == WaveletKind::detail_y || mi.kind == WaveletKind::detail_xy;
    cplx fx = wx ? fourier_wavelet(fam, t.x * sj) : fourier_scaling(fam, t.x * sj);
    cplx fy = wy ? fourier_wavelet(fam, t.y * sj) : fourier_scaling(fam, t.y * sj);
    const double two_pi = 6.283185307179586476925286766559;
    cplx phase = std::polar(1.0, -two_pi * (t.x * mi.n[0] + t.y * mi.n[1]) * sj);
    // conjugate-linear pairing <u, psi_t> reduces to uhat(t) for real atoms
    return modulation(t) * sj * fx * fy * phase;
  }

  // Direct quadrature of (1+|t|^2)^{-b/2} int u(x) e^{-2pi i t.x} dx.
  cplx fourier_coeff(const GridField& u, Point2 t) const {
    const double two_pi = 6.283185307179586476925286766559;
    cplx acc{0, 0};
    for (int iy = 0; iy < u.n; ++iy) {
      double y = u.x0 + iy * u.h;
      cplx rowacc{0, 0};
      for (int ix = 0; ix < u.n; ++ix) {
        double x = u.x0 + ix * u.h;
        rowacc += u.at(ix, iy) * std::polar(1.0, -two_pi * t.x * x);
      }
      acc += rowacc * std::polar(1.0, -two_pi * t.y * y);
    }
    return modulation(t) * acc * (u.h * u.h);
  }

private:
  std::shared_ptr<const AdaptedWaveletBasis> basis_;
  std::shared_ptr<const SeparatedLattice> lattice_;
  double b_ = 0, R_ = 0;
};

// Truncation projections P_N / P_N^perp.
inline GridField apply_truncation(const GridField& f, double N, bool complement = false) {
  if (N <= 0) throw std::invalid_argument("apply_truncation: N > 0 required");
  GridField out = f;
  for (int iy = 0; iy < f.n; ++iy)
    for (int ix = 0; ix < f.n; ++ix) {
      double x = f.x0 + ix * f.h, y = f.x0 + iy * f.h;
      bool inside = x * x + y * y <= N * N;
      if (inside == complement) out.at(ix, iy) = 0;
    }
  return out;
}

inline std::vector<cplx> apply_truncation(const std::vector<cplx>& vals,
                                          const SeparatedLattice& Z, double N,
                                          bool complement = false) {
  if (N <= 0) throw std::invalid_argument("apply_truncation: N > 0 required");
  if (vals.size() != Z.pts.size()) throw std::invalid_argument("apply_truncation: size mismatch");
  std::vector<cplx> out = vals;
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool inside = Z.pts[i].norm() <= N;
    if (inside == complement) out[i] = 0;
  }
  return out;
}

} // namespace csip
