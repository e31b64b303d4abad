#pragma once

// Numerical estimation of the structural constants behind the recovery
// guarantees: quasi-diagonalization (c, C), the balancing norms
// ||P_N^perp U Phi* iota_{<= j0}||, the coherence envelope (B, d), and the
// sample-complexity formula tau / m-bound.
//
// Each forward operator is wrapped as an exact-adjoint LinearMap from
// coefficients on Lambda_{<= j0} to quadrature-weighted samples of the
// measurement-domain image, so that the plain l2 norm of the output equals
// the continuum L2 norm up to discretization.  Power iteration then needs no
// separate inner products.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "csip/fft.hpp"
#include "csip/forward_ops.hpp"
#include "csip/linop.hpp"
#include "csip/multi_index.hpp"
#include "csip/wavelets.hpp"

namespace csip {

// Measurement-domain truncation: none, keep |t| <= N (P_N), or keep
// |t| > N (P_N^perp).
struct DomainMask {
  enum class Kind { none, inside, outside };
  Kind kind = Kind::none;
  double N = 0;
};

namespace detail {

inline bool mask_keeps(const DomainMask& m, Point2 t) {
  switch (m.kind) {
    case DomainMask::Kind::none: return true;
    case DomainMask::Kind::inside: return t.norm() <= m.N;
    case DomainMask::Kind::outside: return t.norm() > m.N;
  }
  return true;
}

inline std::shared_ptr<const IndexSet> checked_prefix(const AdaptedWaveletBasis& basis, int j0) {
  auto iset = basis.gamma()->prefix(j0);
  // prefix positions must coincide with gamma positions (canonical order)
  for (int p = 0; p < iset->size(); ++p)
    if (!((*iset)[p] == (*basis.gamma())[p]))
      throw std::logic_error("verify: index prefix is not a canonical prefix");
  return iset;
}

inline CoefficientVector to_coeffs(std::shared_ptr<const IndexSet> iset, const CVec& x) {
  CoefficientVector c(iset);
  c.v = x;
  return c;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Bessel deconvolution field map: x -> h * (kappa_b * Phi* x) on the padded
// grid, optionally masked in space.  The spectral multiplier is self-adjoint,
// so the adjoint is analyze-of-the-masked-filtered-field with matching
// quadrature factors.
class BesselFieldMap {
public:
  BesselFieldMap(std::shared_ptr<const BesselConvolutionOp> op, int j0, DomainMask mask = {})
      : op_(std::move(op)), mask_(mask) {
    basis_ = &op_->basis();
    iset_ = detail::checked_prefix(*basis_, j0);
    n_ = op_->pad_n();
    h_ = op_->pad_h();
    x0_ = op_->pad_x0();
    off_ = static_cast<int>(std::lround((basis_->grid_x0() - x0_) / h_));
  }

  const IndexSet& iset() const { return *iset_; }
  std::shared_ptr<const IndexSet> iset_ptr() const { return iset_; }

  LinearMap map() const {
    const int dim_out = n_ * n_;
    return {iset_->size(), dim_out, [this](const CVec& x) { return forward(x); },
            [this](const CVec& y) { return backward(y); }};
  }

private:
  void filter(std::vector<cplx>& a) const {
    Fft2::forward(a, n_);
    for (int ky = 0; ky < n_; ++ky) {
      const double xy = Fft2::freq(ky, n_, h_);
      for (int kx = 0; kx < n_; ++kx) {
        const double xx = Fft2::freq(kx, n_, h_);
        a[static_cast<std::size_t>(ky) * n_ + kx] *=
            std::pow(1.0 + four_pi_sq * (xx * xx + xy * xy), -0.5 * op_->b());
      }
    }
    Fft2::backward(a, n_);
    const double scale = 1.0 / (static_cast<double>(n_) * n_);
    for (auto& z : a) z *= scale;
  }

  void apply_mask(std::vector<cplx>& a) const {
    if (mask_.kind == DomainMask::Kind::none) return;
    for (int iy = 0; iy < n_; ++iy)
      for (int ix = 0; ix < n_; ++ix)
        if (!detail::mask_keeps(mask_, {x0_ + ix * h_, x0_ + iy * h_}))
          a[static_cast<std::size_t>(iy) * n_ + ix] = 0;
  }

  CVec forward(const CVec& x) const {
    GridField u = basis_->synthesize(detail::to_coeffs(iset_, x));
    std::vector<cplx> a(static_cast<std::size_t>(n_) * n_, cplx{0, 0});
    for (int y = 0; y < u.n; ++y)
      for (int xx = 0; xx < u.n; ++xx)
        a[static_cast<std::size_t>(y + off_) * n_ + (xx + off_)] = u.at(xx, y);
    filter(a);
    for (auto& z : a) z *= h_;
    apply_mask(a);
    return a;
  }

  CVec backward(const CVec& y) const {
    std::vector<cplx> a = y;
    apply_mask(a);
    for (auto& z : a) z *= h_;
    filter(a); // self-adjoint
    GridField g = basis_->empty_field();
    for (int yy = 0; yy < g.n; ++yy)
      for (int xx = 0; xx < g.n; ++xx)
        g.at(xx, yy) = a[static_cast<std::size_t>(yy + off_) * n_ + (xx + off_)];
    CoefficientVector c = basis_->analyze(g);
    CVec out(static_cast<std::size_t>(iset_->size()));
    const double s = 1.0 / (basis_->grid_h() * basis_->grid_h());
    for (int p = 0; p < iset_->size(); ++p) out[static_cast<std::size_t>(p)] = c[p] * s;
    return out;
  }

  std::shared_ptr<const BesselConvolutionOp> op_;
  const AdaptedWaveletBasis* basis_;
  std::shared_ptr<const IndexSet> iset_;
  DomainMask mask_;
  int n_ = 0, off_ = 0;
  double h_ = 0, x0_ = 0;
};

// ---------------------------------------------------------------------------
// Elliptic solution map: x -> h * F(Phi* x) on the PDE grid.  The discrete
// solve is self-adjoint (symmetric stencil), so the adjoint mirrors the
// forward chain exactly.
class EllipticFieldMap {
public:
  EllipticFieldMap(std::shared_ptr<const EllipticSolutionOp> op,
                   std::shared_ptr<const AdaptedWaveletBasis> basis, int j0, DomainMask mask = {})
      : op_(std::move(op)), basis_(std::move(basis)), mask_(mask) {
    if (std::abs(basis_->grid_h() - op_->h()) > 1e-14)
      throw std::invalid_argument("EllipticFieldMap: basis and PDE grids must share spacing");
    iset_ = detail::checked_prefix(*basis_, j0);
    const double offf = (basis_->grid_x0() - op_->x0()) / op_->h();
    off_ = static_cast<int>(std::lround(offf));
    if (std::abs(offf - off_) > 1e-9 || off_ < 0 || off_ + basis_->grid_n() > op_->n())
      throw std::invalid_argument("EllipticFieldMap: basis grid not contained in the domain");
  }

  const IndexSet& iset() const { return *iset_; }
  std::shared_ptr<const IndexSet> iset_ptr() const { return iset_; }

  LinearMap map() const {
    const int n = op_->n();
    return {iset_->size(), n * n, [this](const CVec& x) { return forward(x); },
            [this](const CVec& y) { return backward(y); }};
  }

private:
  void apply_mask(GridField& w) const {
    if (mask_.kind == DomainMask::Kind::none) return;
    for (int iy = 0; iy < w.n; ++iy)
      for (int ix = 0; ix < w.n; ++ix)
        if (!detail::mask_keeps(mask_, {w.x0 + ix * w.h, w.x0 + iy * w.h})) w.at(ix, iy) = 0;
  }

  CVec forward(const CVec& x) const {
    GridField w = op_->solve(basis_->synthesize(detail::to_coeffs(iset_, x)));
    apply_mask(w);
    CVec out(w.v.size());
    for (std::size_t i = 0; i < w.v.size(); ++i) out[i] = w.v[i] * op_->h();
    return out;
  }

  CVec backward(const CVec& y) const {
    GridField g(op_->n(), op_->h(), op_->x0());
    g.v = y;
    apply_mask(g);
    for (auto& z : g.v) z *= op_->h();
    GridField w = op_->solve(g); // self-adjoint solve
    GridField r = basis_->empty_field();
    for (int iy = 0; iy < r.n; ++iy)
      for (int ix = 0; ix < r.n; ++ix) r.at(ix, iy) = w.at(ix + off_, iy + off_);
    CoefficientVector c = basis_->analyze(r);
    CVec out(static_cast<std::size_t>(iset_->size()));
    const double s = 1.0 / (basis_->grid_h() * basis_->grid_h());
    for (int p = 0; p < iset_->size(); ++p) out[static_cast<std::size_t>(p)] = c[p] * s;
    return out;
  }

  std::shared_ptr<const EllipticSolutionOp> op_;
  std::shared_ptr<const AdaptedWaveletBasis> basis_;
  std::shared_ptr<const IndexSet> iset_;
  DomainMask mask_;
  int off_ = 0;
};

// ---------------------------------------------------------------------------
// Modulated Fourier spectrum map: x -> sqrt(df^2) * (1+|t|^2)^{-b/2} uhat(t)
// sampled on the padded frequency grid, optionally masked in frequency.  The
// Nyquist band must contain all mask radii of interest.
class FourierSpectrumMap {
public:
  FourierSpectrumMap(std::shared_ptr<const ModulatedFourierOp> op, int j0, DomainMask mask = {},
                     double pad_extent = 64.0)
      : op_(std::move(op)), mask_(mask) {
    basis_ = &op_->basis();
    iset_ = detail::checked_prefix(*basis_, j0);
    h_ = basis_->grid_h();
    n_ = next_fast_size(static_cast<int>(std::ceil(pad_extent / h_)));
    while (n_ % 2 != 0) n_ = next_fast_size(n_ + 1);
    x0_ = -0.5 * n_ * h_;
    off_ = static_cast<int>(std::lround((basis_->grid_x0() - x0_) / h_));
    const double nyquist = 0.5 / h_;
    if (mask_.kind != DomainMask::Kind::none && mask_.N >= nyquist)
      throw std::invalid_argument("FourierSpectrumMap: mask radius beyond the Nyquist band");
  }

  const IndexSet& iset() const { return *iset_; }
  std::shared_ptr<const IndexSet> iset_ptr() const { return iset_; }
  double df() const { return 1.0 / (n_ * h_); }

  LinearMap map() const {
    return {iset_->size(), n_ * n_, [this](const CVec& x) { return forward(x); },
            [this](const CVec& y) { return backward(y); }};
  }

private:
  double weight(int kx, int ky) const {
    const double tx = Fft2::freq(kx, n_, h_), ty = Fft2::freq(ky, n_, h_);
    if (!detail::mask_keeps(mask_, {tx, ty})) return 0.0;
    return std::pow(1.0 + tx * tx + ty * ty, -0.5 * op_->b());
  }

  CVec forward(const CVec& x) const {
    GridField u = basis_->synthesize(detail::to_coeffs(iset_, x));
    std::vector<cplx> a(static_cast<std::size_t>(n_) * n_, cplx{0, 0});
    // e^{-2 pi i t x} phases: shift so index 0 corresponds to x0_
    for (int y = 0; y < u.n; ++y)
      for (int xx = 0; xx < u.n; ++xx)
        a[static_cast<std::size_t>(y + off_) * n_ + (xx + off_)] = u.at(xx, y);
    Fft2::forward(a, n_);
    const double q = h_ * h_ * df(); // FT quadrature times the L2 frequency weight
    for (int ky = 0; ky < n_; ++ky)
      for (int kx = 0; kx < n_; ++kx) {
        const std::size_t i = static_cast<std::size_t>(ky) * n_ + kx;
        a[i] *= q * weight(kx, ky) * phase(kx, ky);
      }
    return a;
  }

  CVec backward(const CVec& y) const {
    std::vector<cplx> a = y;
    const double q = h_ * h_ * df();
    for (int ky = 0; ky < n_; ++ky)
      for (int kx = 0; kx < n_; ++kx) {
        const std::size_t i = static_cast<std::size_t>(ky) * n_ + kx;
        a[i] *= q * weight(kx, ky) * std::conj(phase(kx, ky));
      }
    Fft2::backward(a, n_); // adjoint of the unnormalized forward DFT
    GridField g = basis_->empty_field();
    for (int yy = 0; yy < g.n; ++yy)
      for (int xx = 0; xx < g.n; ++xx)
        g.at(xx, yy) = a[static_cast<std::size_t>(yy + off_) * n_ + (xx + off_)];
    CoefficientVector c = basis_->analyze(g);
    CVec out(static_cast<std::size_t>(iset_->size()));
    const double s = 1.0 / (h_ * h_);
    for (int p = 0; p < iset_->size(); ++p) out[static_cast<std::size_t>(p)] = c[p] * s;
    return out;
  }

  // FFT index k pairs grid index i with phase e^{-2 pi i f (x0 + i h)}; the
  // DFT itself supplies e^{-2 pi i k i / n}, so correct by e^{-2 pi i f x0}.
  cplx phase(int kx, int ky) const {
    const double tx = Fft2::freq(kx, n_, h_), ty = Fft2::freq(ky, n_, h_);
    return std::polar(1.0, -2 * 3.14159265358979323846 * (tx + ty) * x0_);
  }

  std::shared_ptr<const ModulatedFourierOp> op_;
  const AdaptedWaveletBasis* basis_;
  std::shared_ptr<const IndexSet> iset_;
  DomainMask mask_;
  int n_ = 0, off_ = 0;
  double h_ = 0, x0_ = 0;
};

// ---------------------------------------------------------------------------
// The map() closures above capture `this`, so the field-map object must
// outlive the LinearMap.  owned_map ties the lifetimes together, which is
// what estimate_balancing's per-N factory needs.
template <class FieldMap>
LinearMap owned_map(std::shared_ptr<const FieldMap> fm) {
  LinearMap inner = fm->map();
  return {inner.dim_in, inner.dim_out,
          [fm, inner](const CVec& x) { return inner.apply(x); },
          [fm, inner](const CVec& y) { return inner.adjoint(y); }};
}

template <class FieldMap, class... Args>
LinearMap owned_map_of(Args&&... args) {
  return owned_map(std::make_shared<const FieldMap>(std::forward<Args>(args)...));
}

// ---------------------------------------------------------------------------
// Estimators.

struct QuasiDiagEstimate {
  double c = 0, C = 0;
  bool converged = false;
  int iterations = 0;
};

// Extreme Rayleigh quotients of ||A x||^2 / sum 2^{-2bj} |x_{j,n}|^2 via the
// diagonally rescaled operator B = A diag(2^{bj}).
inline QuasiDiagEstimate estimate_quasi_diag(const LinearMap& A, const IndexSet& iset, double b,
                                             int max_iters = 200) {
  if (b < 0) throw std::invalid_argument("estimate_quasi_diag: b >= 0 required");
  if (A.dim_in != iset.size()) throw std::invalid_argument("estimate_quasi_diag: dimension mismatch");
  std::vector<double> d(static_cast<std::size_t>(iset.size()));
  for (int p = 0; p < iset.size(); ++p) d[static_cast<std::size_t>(p)] = std::exp2(b * iset[p].j);
  LinearMap B{A.dim_in, A.dim_out,
              [&, d](const CVec& x) {
                CVec z = x;
                for (std::size_t i = 0; i < z.size(); ++i) z[i] *= d[i];
                return A.apply(z);
              },
              [&, d](const CVec& y) {
                CVec z = A.adjoint(y);
                for (std::size_t i = 0; i < z.size(); ++i) z[i] *= d[i];
                return z;
              }};
  NormEstimate top = estimate_operator_norm(B, 300, 1e-6);
  NormEstimate bot = estimate_smallest_sv(B, max_iters);
  QuasiDiagEstimate est;
  est.C = top.value * top.value;
  est.c = bot.value * bot.value;
  est.converged = top.converged && bot.converged;
  est.iterations = top.iterations + bot.iterations;
  return est;
}

struct BalancingEstimate {
  std::vector<double> N;
  std::vector<double> norm;    // ||P_N^perp U Phi* iota_{<= j0}||
  double threshold = 0;        // theta 2^{-b j0} with theta = sqrt(c/2)
  double N_balanced = -1;      // smallest N meeting the threshold, or -1
};

// Per-N operator norms of the masked forward map.  make_map(N) must return
// the map with the P_N^perp mask applied.
inline BalancingEstimate estimate_balancing(const std::function<LinearMap(double)>& make_map,
                                            const std::vector<double>& Ns, int j0, double b,
                                            double c) {
  if (Ns.empty()) throw std::invalid_argument("estimate_balancing: empty N list");
  BalancingEstimate est;
  est.threshold = std::sqrt(0.5 * c) * std::exp2(-b * j0);
  for (double N : Ns) {
    LinearMap m = make_map(N);
    NormEstimate ne = estimate_operator_norm(m, 300, 1e-6);
    est.N.push_back(N);
    est.norm.push_back(ne.value);
    if (est.N_balanced < 0 && ne.value <= est.threshold) est.N_balanced = N;
  }
  return est;
}

struct CoherenceEstimate {
  std::vector<int> scales;
  std::vector<double> scale_max;  // max_{t,n} ||F_t phi_{j,n}|| per scale
  double d_fit = 0;               // from least squares of log2(max) vs j
  double r2 = 0;
  double B = 0;                   // max f_nu(t)^{-1/2} 2^{d j} ||F_t phi||
};

// response(mi, t) -> measurement value; fnu(t) -> sampling density at t.
inline CoherenceEstimate estimate_coherence(
    const std::function<cplx(const MultiIndex&, Point2)>& response,
    const std::function<double(Point2)>& fnu, const IndexSet& iset,
    const std::vector<Point2>& probes) {
  if (iset.max_scale() < 2) throw std::invalid_argument("estimate_coherence: need >= 3 scales");
  CoherenceEstimate est;
  std::vector<std::vector<double>> per_scale_fnu_max; // track for B after d is fitted
  for (int j = 0; j <= iset.max_scale(); ++j) {
    auto [lo, hi] = iset.scale_range(j);
    if (lo >= hi) continue;
    double mx = 0;
    std::vector<double> fw; // max over n of f^{-1/2}|resp| per probe
    fw.reserve(probes.size());
    for (const Point2& t : probes) {
      double mt = 0, md = 0;
      for (int p = lo; p < hi; ++p) {
        const double r = std::abs(response(iset[p], t));
        mt = std::max(mt, r);
        // scaling atoms live at a single scale and carry no decay
        // information; keep them out of the regression but inside B
        if (iset[p].kind != WaveletKind::scaling) md = std::max(md, r);
      }
      mx = std::max(mx, md);
      fw.push_back(mt / std::sqrt(fnu(t)));
    }
    est.scales.push_back(j);
    est.scale_max.push_back(mx);
    per_scale_fnu_max.push_back(std::move(fw));
  }
  if (est.scales.size() < 3) throw std::invalid_argument("estimate_coherence: need >= 3 scales");
  // least squares: log2(max_j) = a - d j
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  const int n = static_cast<int>(est.scales.size());
  for (int i = 0; i < n; ++i) {
    const double x = est.scales[static_cast<std::size_t>(i)];
    const double y = std::log2(est.scale_max[static_cast<std::size_t>(i)]);
    sx += x; sy += y; sxx += x * x; sxy += x * y; syy += y * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  est.d_fit = -slope;
  const double ybar = sy / n, a = ybar - slope * sx / n;
  double ssres = 0, sstot = 0;
  for (int i = 0; i < n; ++i) {
    const double x = est.scales[static_cast<std::size_t>(i)];
    const double y = std::log2(est.scale_max[static_cast<std::size_t>(i)]);
    ssres += (y - (a + slope * x)) * (y - (a + slope * x));
    sstot += (y - ybar) * (y - ybar);
  }
  est.r2 = sstot > 0 ? 1.0 - ssres / sstot : 1.0;
  for (std::size_t i = 0; i < per_scale_fnu_max.size(); ++i) {
    const double w = std::exp2(est.d_fit * est.scales[i]);
    for (double v : per_scale_fnu_max[i]) est.B = std::max(est.B, w * v);
  }
  return est;
}

struct SampleComplexity {
  double tau = 0;
  double m_bound = 0;
};

// tau = B^2 2^{2(b-d)j0} 2^{2(1-zeta)b j0} s and
// m >= C0 tau max{ log^3(tau) log(M), log(1/gamma) }.
inline SampleComplexity sample_complexity(double B, double b, double d, double zeta, int j0,
                                          double s, double M, double gamma, double C0 = 1.0) {
  if (!(s >= 2 && s <= M)) throw std::invalid_argument("sample_complexity: need 2 <= s <= M");
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("sample_complexity: gamma in (0,1)");
  SampleComplexity sc;
  sc.tau = B * B * std::exp2(2 * (b - d) * j0) * std::exp2(2 * (1 - zeta) * b * j0) * s;
  const double lt = std::log(sc.tau);
  sc.m_bound = C0 * sc.tau * std::max(lt * lt * lt * std::log(M), std::log(1.0 / gamma));
  return sc;
}

// ---------------------------------------------------------------------------
// Aggregate report.

struct VerificationReport {
  std::string case_name;
  int j0 = 0;
  double b = 0;
  QuasiDiagEstimate qd;
  BalancingEstimate bal;
  CoherenceEstimate coh;
  SampleComplexity sc;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"case", case_name},
                        {"j0", j0},
                        {"b", b},
                        {"quasi_diag", {{"c", qd.c}, {"C", qd.C}, {"converged", qd.converged},
                                        {"iterations", qd.iterations}}},
                        {"sample_complexity", {{"tau", sc.tau}, {"m_bound", sc.m_bound}}}};
    j["balancing"] = {{"threshold", bal.threshold},
                      {"N_balanced", bal.N_balanced},
                      {"N", bal.N},
                      {"norm", bal.norm}};
    j["coherence"] = {{"B", coh.B}, {"d_fit", coh.d_fit}, {"r2", coh.r2},
                      {"scales", coh.scales}, {"scale_max", coh.scale_max}};
    return j;
  }

  // One CSV with heterogeneous rows: kind is "scale" (coherence) or "N"
  // (balancing).
  std::string to_csv() const {
    std::string out = "kind,key,value\n";
    for (std::size_t i = 0; i < coh.scales.size(); ++i)
      out += "scale," + std::to_string(coh.scales[i]) + "," + std::to_string(coh.scale_max[i]) + "\n";
    for (std::size_t i = 0; i < bal.N.size(); ++i)
      out += "N," + std::to_string(bal.N[i]) + "," + std::to_string(bal.norm[i]) + "\n";
    return out;
  }
};

// Uniform probe grid over [-R, R]^2 (41 x 41 by default) for coherence scans.
inline std::vector<Point2> probe_grid(double R, int side = 41) {
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(side) * side);
  for (int iy = 0; iy < side; ++iy)
    for (int ix = 0; ix < side; ++ix)
      pts.push_back({-R + 2 * R * ix / (side - 1), -R + 2 * R * iy / (side - 1)});
  return pts;
}

} // namespace csip
