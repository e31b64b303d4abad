#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace csip {

using cplx = std::complex<double>;

// Subband kind of a 2D separable wavelet atom.  `scaling` (both factors are
// scaling functions) appears only at the coarsest retained scale j = 0; the
// three detail kinds exist at every scale.  Kind order fixes the canonical
// index order together with (scale, row-major translation).
enum class WaveletKind : std::uint8_t { scaling = 0, detail_x = 1, detail_y = 2, detail_xy = 3 };

inline const char* kind_name(WaveletKind k) {
  switch (k) {
    case WaveletKind::scaling:   return "scaling";
    case WaveletKind::detail_x:  return "detail_x";
    case WaveletKind::detail_y:  return "detail_y";
    case WaveletKind::detail_xy: return "detail_xy";
  }
  return "?";
}

struct MultiIndex {
  int j = 0;                      // dyadic scale, j >= 0
  std::array<int, 2> n{0, 0};    // integer translation (periodic canonical range)
  WaveletKind kind = WaveletKind::detail_xy;

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
  // Canonical order: scale, then kind, then row-major translation (n[1] slow).
  friend bool operator<(const MultiIndex& a, const MultiIndex& b) {
    if (a.j != b.j) return a.j < b.j;
    if (a.kind != b.kind) return a.kind < b.kind;
    if (a.n[1] != b.n[1]) return a.n[1] < b.n[1];
    return a.n[0] < b.n[0];
  }
};

// Finite ordered family of multi-indices with O(1) lookup and per-scale
// contiguous ranges.  Indices are stored in canonical order; positions are
// stable identifiers for coefficient vectors.
class IndexSet {
public:
  IndexSet() = default;

  explicit IndexSet(std::vector<MultiIndex> idx) : idx_(std::move(idx)) {
    std::sort(idx_.begin(), idx_.end());
    if (std::adjacent_find(idx_.begin(), idx_.end()) != idx_.end())
      throw std::invalid_argument("IndexSet: duplicate multi-index");
    pos_.reserve(idx_.size() * 2);
    max_scale_ = -1;
    for (std::size_t p = 0; p < idx_.size(); ++p) {
      if (idx_[p].j < 0) throw std::invalid_argument("IndexSet: negative scale");
      pos_.emplace(key(idx_[p]), static_cast<int>(p));
      max_scale_ = std::max(max_scale_, idx_[p].j);
    }
    scale_begin_.assign(static_cast<std::size_t>(max_scale_ + 2), static_cast<int>(idx_.size()));
    for (std::size_t p = idx_.size(); p-- > 0;)
      scale_begin_[static_cast<std::size_t>(idx_[p].j)] = static_cast<int>(p);
    // make begins monotone for empty scales
    for (std::size_t j = scale_begin_.size() - 1; j-- > 0;)
      scale_begin_[j] = std::min(scale_begin_[j], scale_begin_[j + 1]);
  }

  int size() const { return static_cast<int>(idx_.size()); }
  bool empty() const { return idx_.empty(); }
  int max_scale() const { return max_scale_; }
  const MultiIndex& operator[](int p) const { return idx_[static_cast<std::size_t>(p)]; }
  const std::vector<MultiIndex>& indices() const { return idx_; }

  // Position of `mi`, or -1 if absent.
  int position(const MultiIndex& mi) const {
    auto it = pos_.find(key(mi));
    return it == pos_.end() ? -1 : it->second;
  }
  bool contains(const MultiIndex& mi) const { return position(mi) >= 0; }

  // Half-open position range [lo, hi) of scale j (empty if j out of range).
  std::pair<int, int> scale_range(int j) const {
    if (j < 0 || j > max_scale_) return {size(), size()};
    return {scale_begin_[static_cast<std::size_t>(j)], scale_begin_[static_cast<std::size_t>(j + 1)]};
  }

  // Number of positions with scale <= j0 (a canonical-order prefix).
  int count_up_to(int j0) const {
    if (j0 < 0) return 0;
    if (j0 >= max_scale_) return size();
    return scale_begin_[static_cast<std::size_t>(j0 + 1)];
  }

  // Sub-IndexSet of all indices with scale <= j0.
  std::shared_ptr<const IndexSet> prefix(int j0) const {
    std::vector<MultiIndex> sub(idx_.begin(), idx_.begin() + count_up_to(j0));
    return std::make_shared<const IndexSet>(std::move(sub));
  }

private:
  static std::uint64_t key(const MultiIndex& mi) {
    auto u = [](int v) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)); };
    std::uint64_t h = u(mi.j) * 4u + static_cast<std::uint64_t>(mi.kind);
    h = h * 0x100000001b3ull ^ u(mi.n[0]);
    h = h * 0x100000001b3ull ^ u(mi.n[1]);
    return h;
  }

  std::vector<MultiIndex> idx_;
  std::unordered_map<std::uint64_t, int> pos_;
  std::vector<int> scale_begin_;
  int max_scale_ = -1;
};

// Complex coefficient vector aligned to an IndexSet.
struct CoefficientVector {
  std::shared_ptr<const IndexSet> iset;
  std::vector<cplx> v;

  CoefficientVector() = default;
  explicit CoefficientVector(std::shared_ptr<const IndexSet> is)
      : iset(std::move(is)), v(iset ? static_cast<std::size_t>(iset->size()) : 0, cplx{0, 0}) {}
  CoefficientVector(std::shared_ptr<const IndexSet> is, std::vector<cplx> vals)
      : iset(std::move(is)), v(std::move(vals)) {
    if (!iset || static_cast<int>(v.size()) != iset->size())
      throw std::invalid_argument("CoefficientVector: size mismatch with IndexSet");
  }

  int size() const { return static_cast<int>(v.size()); }
  cplx& operator[](int p) { return v[static_cast<std::size_t>(p)]; }
  const cplx& operator[](int p) const { return v[static_cast<std::size_t>(p)]; }

  double norm2() const {
    double s = 0;
    for (const auto& z : v) s += std::norm(z);
    return std::sqrt(s);
  }
};

// Diagonal scale weights W with entry 2^{b j} for every index at scale j.
struct DiagonalWeights {
  double b = 0.0;
  double zeta = 1.0; // exponent used by weighted_l1 / apply_weights
  // Guard: 2^{|zeta*b*j|} must stay finitely representable.
  static constexpr double kMaxLog2 = 1000.0;

  double weight(int j) const { return std::exp2(b * j); }

  double powz(int j, int sign) const {
    double e = static_cast<double>(sign) * zeta * b * j;
    if (std::abs(e) > kMaxLog2)
      throw std::overflow_error("DiagonalWeights: 2^" + std::to_string(e) + " not representable");
    return std::exp2(e);
  }
};

// --- index_model operations ------------------------------------------------

// Zero all coefficients except those at scale j.
inline CoefficientVector project_scale(const CoefficientVector& x, int j) {
  CoefficientVector out(x.iset);
  auto [lo, hi] = x.iset->scale_range(j);
  for (int p = lo; p < hi; ++p) out[p] = x[p];
  return out;
}

// Keep scales <= j0 (complement=false) or > j0 (complement=true).
inline CoefficientVector project_up_to(const CoefficientVector& x, int j0, bool complement = false) {
  CoefficientVector out(x.iset);
  int cut = x.iset->count_up_to(j0);
  if (!complement)
    std::copy(x.v.begin(), x.v.begin() + cut, out.v.begin());
  else
    std::copy(x.v.begin() + cut, x.v.end(), out.v.begin() + cut);
  return out;
}

// sigma_s(x)_p: lp error of the best s-term approximation, p in (0, 2].
// Ties in |x| keep the earlier canonical position among the s retained terms.
inline double best_sparse_error(const CoefficientVector& x, int s, double p = 1.0) {
  if (!(p > 0.0) || p > 2.0) throw std::invalid_argument("best_sparse_error: p must be in (0,2]");
  if (s < 0) throw std::invalid_argument("best_sparse_error: s < 0");
  const int M = x.size();
  if (s >= M) return 0.0;
  std::vector<int> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(x[a]) > std::abs(x[b]);
  });
  double acc = 0;
  for (int r = s; r < M; ++r) acc += std::pow(std::abs(x[order[static_cast<std::size_t>(r)]]), p);
  return std::pow(acc, 1.0 / p);
}

// || W^{-zeta} x ||_1 = sum_i 2^{-zeta b j(i)} |x_i|.
inline double weighted_l1(const CoefficientVector& x, const DiagonalWeights& w) {
  double s = 0;
  for (int p = 0; p < x.size(); ++p) s += w.powz((*x.iset)[p].j, -1) * std::abs(x[p]);
  return s;
}

// x -> W^{sign*zeta} x, sign in {+1, -1}.
inline CoefficientVector apply_weights(const CoefficientVector& x, const DiagonalWeights& w, int sign) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("apply_weights: sign must be +-1");
  CoefficientVector out(x.iset);
  for (int p = 0; p < x.size(); ++p) out[p] = x[p] * w.powz((*x.iset)[p].j, sign);
  return out;
}

} // namespace csip
