#pragma once

// Configuration-driven experiment runner: the three case studies
// (deconvolution under uniform / exponential sampling, elliptic inverse
// source, modulated Fourier) and the cartoon-like scaling study.  Reports are
// deterministic functions of (config, seed): every trial derives its own RNG
// streams, records are sorted, and no timing data enters the report.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "csip/cartoon.hpp"
#include "csip/forward_ops.hpp"
#include "csip/multi_index.hpp"
#include "csip/sampling.hpp"
#include "csip/solver.hpp"
#include "csip/wavelets.hpp"

namespace csip {

enum class CaseTag { deconv_uniform, deconv_exponential, elliptic, fourier, cartoon_study };

inline const char* case_tag_name(CaseTag t) {
  switch (t) {
    case CaseTag::deconv_uniform:     return "deconv-uniform";
    case CaseTag::deconv_exponential: return "deconv-exponential";
    case CaseTag::elliptic:           return "elliptic";
    case CaseTag::fourier:            return "fourier";
    case CaseTag::cartoon_study:      return "cartoon-study";
  }
  return "?";
}

inline CaseTag case_tag_parse(const std::string& s) {
  for (CaseTag t : {CaseTag::deconv_uniform, CaseTag::deconv_exponential, CaseTag::elliptic,
                    CaseTag::fourier, CaseTag::cartoon_study})
    if (s == case_tag_name(t)) return t;
  throw std::invalid_argument("unknown case tag: " + s);
}

struct ExperimentConfig {
  CaseTag tag = CaseTag::deconv_uniform;

  // basis
  int r = 2;        // Daubechies vanishing moments
  int j0 = 2;
  int q = 0;        // grid depth; 0 -> signal_j_max + 2
  int S = 0;        // grid extent; 0 -> smallest admissible for the family

  // signal
  std::string signal = "sparse"; // "sparse" | "cartoon"
  int sparsity = 3;
  int signal_extra_scales = 0;   // signal lives on scales <= j0 + extra
  CartoonParams cartoon;

  // operator
  double b = 2.5;
  SigmaSpec sigma;                 // elliptic
  double domain_L = 0;             // elliptic; 0 -> auto from basis support
  double elliptic_h = 0;           // 0 -> basis grid spacing
  double lattice_spacing = 0;      // fourier; 0 -> auto from R
  double lattice_jitter = 0;
  double lattice_extent = 0;       // 0 -> auto
  double N = 0;                    // sampling/truncation radius; 0 -> case rule
  double exp_rate = 0;             // exponential density rate; 0 -> 1.0

  // sweep
  std::vector<int> m_list;
  std::vector<double> beta_list;
  int trials = 10;
  std::uint64_t seed = 1;

  // noise + solver
  NoiseMode noise_mode = NoiseMode::uniform;
  double zeta = 1.0;
  double C3 = 1.0;
  double tol = 1e-7;
  int max_iters = 150000;
  bool oracle_eps = false;
  std::size_t dense_limit = 20'000'000;

  // execution
  int threads = 1;
  double budget_sec = 0; // 0 = unlimited; capped trials are flagged in records

  // cartoon study
  double C0_scale = 1.0;
  int m_cap = 4096;

  void validate() const {
    if (r < 2 || r > 10) throw std::invalid_argument("config: r in [2,10] required");
    if (j0 < 0) throw std::invalid_argument("config: j0 >= 0 required");
    if (trials < 1) throw std::invalid_argument("config: trials >= 1 required");
    if (zeta < 0 || zeta > 1) throw std::invalid_argument("config: zeta in [0,1] required");
    if (signal != "sparse" && signal != "cartoon")
      throw std::invalid_argument("config: signal must be sparse or cartoon");
    switch (tag) {
      case CaseTag::deconv_uniform:
      case CaseTag::deconv_exponential:
        if (!(b > 2)) throw std::invalid_argument("config: deconvolution requires b > 2");
        break;
      case CaseTag::fourier:
        if (!(b > 0 && b < r))
          throw std::invalid_argument("config: fourier requires b in (0, r)");
        break;
      case CaseTag::elliptic:
        break;
      case CaseTag::cartoon_study: {
        if (!(b > 2)) throw std::invalid_argument("config: cartoon study requires b > 2");
        if (zeta != 1.0) throw std::invalid_argument("config: cartoon study pins zeta = 1");
        if (beta_list.size() < 3)
          throw std::invalid_argument("config: cartoon study needs >= 3 beta values");
        double lo = *std::min_element(beta_list.begin(), beta_list.end());
        double hi = *std::max_element(beta_list.begin(), beta_list.end());
        if (!(lo > 0) || hi / lo < 31.0)
          throw std::invalid_argument("config: cartoon beta list must span >= 1.5 decades");
        break;
      }
    }
    if (tag != CaseTag::cartoon_study) {
      if (m_list.empty()) throw std::invalid_argument("config: m list required");
      if (beta_list.empty()) throw std::invalid_argument("config: beta list required");
      for (int m : m_list)
        if (m < 1) throw std::invalid_argument("config: m >= 1 required");
      for (double beta : beta_list)
        if (beta < 0) throw std::invalid_argument("config: beta >= 0 required");
    }
    if (noise_mode == NoiseMode::nonuniform &&
        (tag == CaseTag::deconv_uniform || tag == CaseTag::elliptic ||
         tag == CaseTag::cartoon_study))
      throw std::invalid_argument("config: this case uses the uniform noise bound");
    if (noise_mode == NoiseMode::uniform &&
        (tag == CaseTag::deconv_exponential || tag == CaseTag::fourier))
      throw std::invalid_argument("config: this case uses the nonuniform noise bound");
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.tag = case_tag_parse(j.at("case").get<std::string>());
    auto opt = [&j](const char* k, auto& dst) {
      if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
    };
    opt("r", c.r);
    opt("j0", c.j0);
    opt("q", c.q);
    opt("S", c.S);
    opt("signal", c.signal);
    opt("sparsity", c.sparsity);
    opt("signal_extra_scales", c.signal_extra_scales);
    opt("b", c.b);
    opt("domain_L", c.domain_L);
    opt("elliptic_h", c.elliptic_h);
    opt("lattice_spacing", c.lattice_spacing);
    opt("lattice_jitter", c.lattice_jitter);
    opt("lattice_extent", c.lattice_extent);
    opt("N", c.N);
    opt("exp_rate", c.exp_rate);
    opt("trials", c.trials);
    opt("seed", c.seed);
    opt("zeta", c.zeta);
    opt("C3", c.C3);
    opt("tol", c.tol);
    opt("max_iters", c.max_iters);
    opt("oracle_eps", c.oracle_eps);
    opt("dense_limit", c.dense_limit);
    opt("threads", c.threads);
    opt("budget_sec", c.budget_sec);
    opt("C0_scale", c.C0_scale);
    opt("m_cap", c.m_cap);
    if (j.contains("m")) {
      if (j.at("m").is_array()) c.m_list = j.at("m").get<std::vector<int>>();
      else c.m_list = {j.at("m").get<int>()};
    }
    if (j.contains("beta")) {
      if (j.at("beta").is_array()) c.beta_list = j.at("beta").get<std::vector<double>>();
      else c.beta_list = {j.at("beta").get<double>()};
    }
    if (j.contains("noise_mode")) {
      const std::string m = j.at("noise_mode").get<std::string>();
      if (m == "uniform") c.noise_mode = NoiseMode::uniform;
      else if (m == "nonuniform") c.noise_mode = NoiseMode::nonuniform;
      else throw std::invalid_argument("config: unknown noise_mode " + m);
    } else if (c.tag == CaseTag::deconv_exponential || c.tag == CaseTag::fourier) {
      c.noise_mode = NoiseMode::nonuniform;
    }
    if (j.contains("sigma")) {
      const auto& sj = j.at("sigma");
      const std::string kind = sj.value("kind", "constant");
      c.sigma.kind = (kind == "sine") ? SigmaSpec::Kind::sine : SigmaSpec::Kind::constant;
      c.sigma.base = sj.value("base", 1.0);
      c.sigma.amp = sj.value("amp", 0.0);
      c.sigma.freq = sj.value("freq", 1.0);
    }
    if (j.contains("cartoon")) {
      const auto& cj = j.at("cartoon");
      c.cartoon.r0 = cj.value("r0", c.cartoon.r0);
      c.cartoon.harmonics = cj.value("harmonics", c.cartoon.harmonics);
      c.cartoon.perturb = cj.value("perturb", c.cartoon.perturb);
      c.cartoon.inner_amp = cj.value("inner_amp", c.cartoon.inner_amp);
      c.cartoon.outer_amp = cj.value("outer_amp", c.cartoon.outer_amp);
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {
        {"case", case_tag_name(tag)}, {"r", r}, {"j0", j0}, {"q", q}, {"S", S},
        {"signal", signal}, {"sparsity", sparsity},
        {"signal_extra_scales", signal_extra_scales},
        {"b", b}, {"domain_L", domain_L}, {"elliptic_h", elliptic_h},
        {"lattice_spacing", lattice_spacing}, {"lattice_jitter", lattice_jitter},
        {"lattice_extent", lattice_extent}, {"N", N}, {"exp_rate", exp_rate},
        {"m", m_list}, {"beta", beta_list}, {"trials", trials}, {"seed", seed},
        {"noise_mode", noise_mode == NoiseMode::uniform ? "uniform" : "nonuniform"},
        {"zeta", zeta}, {"C3", C3}, {"tol", tol}, {"max_iters", max_iters},
        {"oracle_eps", oracle_eps}, {"C0_scale", C0_scale}, {"m_cap", m_cap},
        {"sigma", {{"kind", sigma.kind == SigmaSpec::Kind::sine ? "sine" : "constant"},
                   {"base", sigma.base}, {"amp", sigma.amp}, {"freq", sigma.freq}}},
        {"cartoon", {{"r0", cartoon.r0}, {"harmonics", cartoon.harmonics},
                     {"perturb", cartoon.perturb}, {"inner_amp", cartoon.inner_amp},
                     {"outer_amp", cartoon.outer_amp}}}};
    return j;
  }
};

struct TrialRecord {
  std::string case_tag;
  int m = 0;
  double beta = 0;
  int s = 0;
  int trial = 0;
  double error_l2 = 0;
  double residual = 0;
  int iters = 0;
  std::uint64_t seed = 0;
  bool m_capped = false;
  std::string note;
};

struct FitRecord {
  std::string name;
  double slope = 0, intercept = 0, r2 = 0;
  int npoints = 0;
};

struct ExperimentReport {
  nlohmann::json config;
  std::vector<TrialRecord> records;
  std::vector<FitRecord> fits;
  bool budget_exhausted = false;

  static nlohmann::json environment() {
    return {{"compiler", __VERSION__},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)}};
  }

  nlohmann::json to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const TrialRecord& r : records)
      recs.push_back({{"case", r.case_tag}, {"m", r.m}, {"beta", r.beta}, {"s", r.s},
                      {"trial", r.trial}, {"error_l2", r.error_l2},
                      {"residual", r.residual}, {"iters", r.iters}, {"seed", r.seed},
                      {"m_capped", r.m_capped}, {"note", r.note}});
    nlohmann::json fs = nlohmann::json::array();
    for (const FitRecord& f : fits)
      fs.push_back({{"name", f.name}, {"slope", f.slope}, {"intercept", f.intercept},
                    {"r2", f.r2}, {"npoints", f.npoints}});
    return {{"config", config}, {"records", recs}, {"fits", fs},
            {"budget_exhausted", budget_exhausted}, {"environment", environment()}};
  }

  std::string records_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "case,m,beta,s,trial,error_l2,residual,iters,seed\n";
    for (const TrialRecord& r : records)
      os << r.case_tag << ',' << r.m << ',' << r.beta << ',' << r.s << ',' << r.trial << ','
         << r.error_l2 << ',' << r.residual << ',' << r.iters << ',' << r.seed << '\n';
    return os.str();
  }

  std::string fits_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "name,slope,intercept,r2,npoints\n";
    for (const FitRecord& f : fits)
      os << f.name << ',' << f.slope << ',' << f.intercept << ',' << f.r2 << ','
         << f.npoints << '\n';
    return os.str();
  }
};

namespace detail {

struct SlopeFit {
  double slope = 0, intercept = 0, r2 = 0;
  int n = 0;
};

inline SlopeFit fit_affine(const std::vector<double>& x, const std::vector<double>& y) {
  SlopeFit f;
  f.n = static_cast<int>(x.size());
  if (f.n < 2) return f;
  const double n = static_cast<double>(f.n);
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  const double dx = n * sxx - sx * sx;
  if (dx <= 0) return f;
  f.slope = (n * sxy - sx * sy) / dx;
  f.intercept = (sy - f.slope * sx) / n;
  const double dy = n * syy - sy * sy;
  const double num = n * sxy - sx * sy;
  f.r2 = dy > 0 ? num * num / (dx * dy) : 1.0;
  return f;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Per-trial derived seed: stable in (sweep position, trial).
inline std::uint64_t trial_seed(std::uint64_t seed, int im, int ib, int trial) {
  std::string tag = "trial-" + std::to_string(im) + "-" + std::to_string(ib) + "-" +
                    std::to_string(trial);
  return RngStream::derive(seed, tag).next_u64();
}

inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  std::exception_ptr err;
  std::mutex err_mx;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mx);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline int default_extent(const WaveletFamily& fam) {
  int S = 2 * (1 + fam.support_len());
  return S + (S % 2);
}

// Everything a single trial needs, assembled once per case.
struct CaseContext {
  std::shared_ptr<const AdaptedWaveletBasis> basis;
  std::shared_ptr<const IndexSet> full;      // all signal scales
  std::shared_ptr<const IndexSet> solve_set; // Lambda_{<= j0}
  double c_nu = 0;
  bool weighted = false;
  std::function<MeasurementPlan(int m, std::uint64_t seed)> draw_plan;
  std::function<SampledOperator(const MeasurementPlan&)> assemble;
  // raw response of the *full-scale* signal at one sample point
  std::function<cplx(const CoefficientVector& x_full, const void* trial_cache, Point2 t)> respond;
  // optional per-trial precomputation (e.g. one elliptic PDE solve per signal)
  std::function<std::shared_ptr<const void>(const CoefficientVector& x_full)> trial_cache =
      [](const CoefficientVector&) { return std::shared_ptr<const void>(); };
};

inline CaseContext make_case_context(const ExperimentConfig& cfg) {
  CaseContext ctx;
  const WaveletFamily fam = WaveletFamily::daubechies(cfg.r);
  const int j_sig = cfg.j0 + std::max(0, cfg.signal_extra_scales) +
                    (cfg.signal == "cartoon" ? 2 : 0);
  const int S = cfg.S > 0 ? cfg.S : default_extent(fam);
  const int q = cfg.q > 0 ? cfg.q : j_sig + 2;
  auto basis = std::make_shared<const AdaptedWaveletBasis>(
      AdaptedWaveletBasis::build(fam, j_sig, q, S));
  ctx.basis = basis;
  ctx.full = basis->gamma();
  ctx.solve_set = basis->gamma()->prefix(cfg.j0);

  switch (cfg.tag) {
    case CaseTag::deconv_uniform:
    case CaseTag::cartoon_study: {
      const double N = cfg.N > 0 ? cfg.N : std::max(2.0, std::ceil(1.5 * cfg.j0));
      auto op = std::make_shared<const BesselConvolutionOp>(basis, cfg.b, N, 1.0);
      SamplingDensity dens = SamplingDensity::uniform_ball(N);
      ctx.c_nu = dens.c_nu;
      ctx.weighted = false;
      ctx.draw_plan = [dens](int m, std::uint64_t seed) { return draw_samples(dens, m, seed); };
      ctx.assemble = [op, cfg](const MeasurementPlan& plan) {
        return assemble_sampled_operator(*op, plan, cfg.j0, false, cfg.dense_limit);
      };
      auto full = ctx.full;
      ctx.respond = [op, full](const CoefficientVector& x, const void*, Point2 t) {
        cplx acc{0, 0};
        for (int p = 0; p < x.size(); ++p)
          if (x[p] != cplx{0, 0}) acc += op->response((*full)[p], t) * x[p];
        return acc;
      };
      break;
    }
    case CaseTag::deconv_exponential: {
      const double rate = cfg.exp_rate > 0 ? cfg.exp_rate : 1.0;
      // exponential tails beyond ~N are negligible under f_nu^{-1/2} weighting
      const double N = cfg.N > 0 ? cfg.N : 40.0 / rate;
      auto op = std::make_shared<const BesselConvolutionOp>(basis, cfg.b, N, 1.0);
      SamplingDensity dens = SamplingDensity::exponential(rate);
      ctx.c_nu = dens.c_nu;
      ctx.weighted = true;
      ctx.draw_plan = [dens](int m, std::uint64_t seed) { return draw_samples(dens, m, seed); };
      ctx.assemble = [op, cfg](const MeasurementPlan& plan) {
        return assemble_sampled_operator(*op, plan, cfg.j0, true, cfg.dense_limit);
      };
      auto full = ctx.full;
      ctx.respond = [op, full](const CoefficientVector& x, const void*, Point2 t) {
        cplx acc{0, 0};
        for (int p = 0; p < x.size(); ++p)
          if (x[p] != cplx{0, 0}) acc += op->response((*full)[p], t) * x[p];
        return acc;
      };
      break;
    }
    case CaseTag::elliptic: {
      const double h = cfg.elliptic_h > 0 ? cfg.elliptic_h : basis->grid_h();
      double L = cfg.domain_L;
      if (L <= 0) {
        L = basis->K_box() + 1.0;
        L = std::ceil(2.0 * L / h) * h / 2.0; // snap so 2L/h is an integer
      }
      auto op = std::make_shared<const EllipticSolutionOp>(L, h, cfg.sigma);
      const double Ls = cfg.N > 0 ? std::min(cfg.N, L - h) : L - h;
      ctx.c_nu = 1.0 / (4.0 * L * L); // uniform density on Omega
      ctx.weighted = false;
      const double fval = ctx.c_nu;
      ctx.draw_plan = [Ls, fval](int m, std::uint64_t seed) {
        RngStream rng = RngStream::derive(seed, "elliptic-plan");
        MeasurementPlan plan;
        plan.seed = seed;
        for (int k = 0; k < m; ++k) {
          Point2 p{rng.uniform(-Ls, Ls), rng.uniform(-Ls, Ls)};
          plan.t.push_back(p);
          plan.fnu.push_back(fval);
          plan.atom.push_back(-1);
        }
        return plan;
      };
      ctx.assemble = [op, basis, cfg](const MeasurementPlan& plan) {
        return assemble_sampled_operator(*op, *basis, plan, cfg.j0, false, cfg.dense_limit);
      };
      ctx.trial_cache = [op, basis](const CoefficientVector& x) {
        return std::static_pointer_cast<const void>(
            std::make_shared<GridField>(op->solve(basis->synthesize(x))));
      };
      ctx.respond = [op](const CoefficientVector&, const void* cache, Point2 t) {
        return op->sample_pointwise(*static_cast<const GridField*>(cache), t);
      };
      break;
    }
    case CaseTag::fourier: {
      const double R = basis->K_radius() + 0.5;
      const double N = cfg.N > 0 ? cfg.N : std::ldexp(1.0, cfg.j0);
      const double bound = 1.0 / (4.0 * R);
      const double spacing =
          cfg.lattice_spacing > 0 ? cfg.lattice_spacing : 0.9 * bound * std::sqrt(2.0);
      const double extent = cfg.lattice_extent > 0 ? cfg.lattice_extent : N + 1.0;
      auto Z = std::make_shared<const SeparatedLattice>(
          generate_lattice(R, spacing, cfg.lattice_jitter, cfg.seed, extent));
      auto op = std::make_shared<const ModulatedFourierOp>(basis, Z, cfg.b, R);
      SamplingDensity dens = SamplingDensity::inverse_quadratic(Z, N);
      ctx.c_nu = dens.c_nu;
      ctx.weighted = true;
      ctx.draw_plan = [dens](int m, std::uint64_t seed) { return draw_samples(dens, m, seed); };
      ctx.assemble = [op, cfg](const MeasurementPlan& plan) {
        return assemble_sampled_operator(*op, plan, cfg.j0, true, cfg.dense_limit);
      };
      auto full = ctx.full;
      ctx.respond = [op, full](const CoefficientVector& x, const void*, Point2 t) {
        cplx acc{0, 0};
        for (int p = 0; p < x.size(); ++p)
          if (x[p] != cplx{0, 0}) acc += op->response((*full)[p], t) * x[p];
        return acc;
      };
      break;
    }
  }
  return ctx;
}

// Draw an exactly-s-sparse signal supported on Lambda_{<= j0}, embedded into
// the full-scale index set.
inline CoefficientVector sparse_signal(const CaseContext& ctx, int s, std::uint64_t seed) {
  CoefficientVector x(ctx.full);
  const int M = ctx.solve_set->size();
  if (s > M) throw std::invalid_argument("sparse signal: s exceeds M");
  RngStream rng = RngStream::derive(seed, "signal");
  std::vector<int> chosen;
  while (static_cast<int>(chosen.size()) < s) {
    int p = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(M)));
    if (std::find(chosen.begin(), chosen.end(), p) == chosen.end()) chosen.push_back(p);
  }
  for (int p : chosen) {
    double mag = rng.uniform(0.5, 1.5);
    double sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
    int fp = ctx.full->position((*ctx.solve_set)[p]);
    x[fp] = sign * mag;
  }
  return x;
}

struct TrialOutcome {
  TrialRecord rec;
};

// One complete trial: plan, measurements, noise, solve, error bookkeeping.
inline TrialRecord run_trial(const ExperimentConfig& cfg, const CaseContext& ctx, int m,
                             double beta, int im, int ib, int trial) {
  TrialRecord rec;
  rec.case_tag = case_tag_name(cfg.tag);
  rec.m = m;
  rec.beta = beta;
  rec.s = cfg.sparsity;
  rec.trial = trial;
  rec.seed = trial_seed(cfg.seed, im, ib, trial);

  // signal
  CoefficientVector x_full;
  if (cfg.signal == "cartoon") {
    GridField img = generate_cartoon_image(*ctx.basis, cfg.cartoon, rec.seed);
    x_full = ctx.basis->analyze(img);
  } else {
    x_full = sparse_signal(ctx, cfg.sparsity, rec.seed);
  }
  std::shared_ptr<const void> cache = ctx.trial_cache(x_full);

  MeasurementPlan plan = ctx.draw_plan(m, rec.seed);
  SampledOperator A = ctx.assemble(plan);

  // raw measurements + noise, then the same row scaling the matrix carries
  RngStream noise_rng = RngStream::derive(rec.seed, "noise");
  CVec y(static_cast<std::size_t>(m));
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  double worst_nonunif = 0;
  for (int k = 0; k < m; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    cplx raw = ctx.respond(x_full, cache.get(), plan.t[ks]);
    cplx eps_k{0, 0};
    if (beta > 0) {
      cplx u = noise_rng.unit_disk();
      if (cfg.noise_mode == NoiseMode::uniform) {
        eps_k = beta * u;
      } else {
        eps_k = std::sqrt(plan.fnu[ks]) * beta * u;
        worst_nonunif = std::max(worst_nonunif,
                                 std::abs(eps_k) / std::sqrt(plan.fnu[ks]));
      }
    }
    y[ks] = (raw + eps_k) * (A.row_scale[ks] * inv_sqrt_m);
  }
  if (cfg.noise_mode == NoiseMode::nonuniform && worst_nonunif > beta * (1 + 1e-12))
    throw std::logic_error("nonuniform noise bound violated (internal error)");

  // truncation bookkeeping: r = ||P_{<= j0}^perp Phi u||_2 exactly
  CoefficientVector x_low(ctx.solve_set);
  double r_tail2 = 0;
  for (int p = 0; p < ctx.full->size(); ++p) {
    const MultiIndex& mi = (*ctx.full)[p];
    int sp = ctx.solve_set->position(mi);
    if (sp >= 0) x_low[sp] = x_full[p];
    else r_tail2 += std::norm(x_full[p]);
  }
  const double r_tail = std::sqrt(r_tail2);

  RecoveryProblem prob;
  prob.A = &A;
  prob.y = y;
  prob.weights = DiagonalWeights{cfg.b, cfg.zeta};
  if (cfg.oracle_eps) {
    CVec res = A.apply(x_low.v);
    double acc = 0;
    for (int k = 0; k < m; ++k) acc += std::norm(res[static_cast<std::size_t>(k)] -
                                                 y[static_cast<std::size_t>(k)]);
    prob.eps = std::sqrt(acc);
  } else {
    const double cfac = ctx.weighted ? 1.0 : 1.0 / std::sqrt(ctx.c_nu);
    prob.eps = beta + cfg.C3 * cfac * std::exp2(-cfg.b * cfg.j0) * r_tail;
  }

  SolverReport sol = solve_qcbp(prob, cfg.tol, cfg.max_iters);
  double err2 = r_tail2;
  for (int p = 0; p < ctx.solve_set->size(); ++p) err2 += std::norm(x_low[p] - sol.solution[p]);
  rec.error_l2 = std::sqrt(err2);
  rec.residual = sol.residual;
  rec.iters = sol.iterations;
  if (!sol.converged) rec.note = sol.infeasible_suspected ? "infeasible-suspected" : "max-iters";
  return rec;
}

} // namespace detail

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.tag == CaseTag::cartoon_study)
    throw std::invalid_argument("run_experiment: use run_cartoon_study for cartoon-study");
  ExperimentReport rep;
  rep.config = cfg.to_json();
  detail::CaseContext ctx = detail::make_case_context(cfg);

  const auto t_start = std::chrono::steady_clock::now();
  auto over_budget = [&]() {
    if (cfg.budget_sec <= 0) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() >
           cfg.budget_sec;
  };

  struct Slot {
    int im, ib, trial;
  };
  std::vector<Slot> slots;
  for (int im = 0; im < static_cast<int>(cfg.m_list.size()); ++im)
    for (int ib = 0; ib < static_cast<int>(cfg.beta_list.size()); ++ib)
      for (int t = 0; t < cfg.trials; ++t) slots.push_back({im, ib, t});
  rep.records.resize(slots.size());

  std::string first_error;
  std::mutex err_mx;
  detail::parallel_for(static_cast<int>(slots.size()), cfg.threads, [&](int i) {
    const Slot& sl = slots[static_cast<std::size_t>(i)];
    TrialRecord& rec = rep.records[static_cast<std::size_t>(i)];
    if (over_budget()) {
      rec.case_tag = case_tag_name(cfg.tag);
      rec.m = cfg.m_list[static_cast<std::size_t>(sl.im)];
      rec.beta = cfg.beta_list[static_cast<std::size_t>(sl.ib)];
      rec.s = cfg.sparsity;
      rec.trial = sl.trial;
      rec.seed = detail::trial_seed(cfg.seed, sl.im, sl.ib, sl.trial);
      rec.error_l2 = std::nan("");
      rec.note = "budget-skipped";
      rep.budget_exhausted = true;
      return;
    }
    try {
      rec = detail::run_trial(cfg, ctx, cfg.m_list[static_cast<std::size_t>(sl.im)],
                              cfg.beta_list[static_cast<std::size_t>(sl.ib)], sl.im, sl.ib,
                              sl.trial);
    } catch (const std::exception& e) {
      rec.case_tag = case_tag_name(cfg.tag);
      rec.m = cfg.m_list[static_cast<std::size_t>(sl.im)];
      rec.beta = cfg.beta_list[static_cast<std::size_t>(sl.ib)];
      rec.trial = sl.trial;
      rec.error_l2 = std::nan("");
      rec.note = std::string("error: ") + e.what();
      std::lock_guard<std::mutex> lk(err_mx);
      if (first_error.empty())
        first_error = "trial (" + std::to_string(sl.im) + "," + std::to_string(sl.ib) + "," +
                      std::to_string(sl.trial) + "): " + e.what();
    }
  });

  // aggregate fits: median error vs beta (per m) and vs m (per beta), log-log
  for (std::size_t im = 0; im < cfg.m_list.size(); ++im) {
    std::vector<double> lx, ly;
    for (std::size_t ib = 0; ib < cfg.beta_list.size(); ++ib) {
      if (!(cfg.beta_list[ib] > 0)) continue;
      std::vector<double> errs;
      for (const TrialRecord& r : rep.records)
        if (r.m == cfg.m_list[im] && r.beta == cfg.beta_list[ib] && std::isfinite(r.error_l2))
          errs.push_back(r.error_l2);
      if (errs.empty()) continue;
      double med = detail::median(errs);
      if (!(med > 0)) continue;
      lx.push_back(std::log(cfg.beta_list[ib]));
      ly.push_back(std::log(med));
    }
    detail::SlopeFit f = detail::fit_affine(lx, ly);
    if (f.n >= 2)
      rep.fits.push_back({"error_vs_beta_m" + std::to_string(cfg.m_list[im]), f.slope,
                          f.intercept, f.r2, f.n});
  }
  for (std::size_t ib = 0; ib < cfg.beta_list.size(); ++ib) {
    std::vector<double> lx, ly;
    for (std::size_t im = 0; im < cfg.m_list.size(); ++im) {
      std::vector<double> errs;
      for (const TrialRecord& r : rep.records)
        if (r.m == cfg.m_list[im] && r.beta == cfg.beta_list[ib] && std::isfinite(r.error_l2))
          errs.push_back(r.error_l2);
      if (errs.empty()) continue;
      double med = detail::median(errs);
      if (!(med > 0)) continue;
      lx.push_back(std::log(static_cast<double>(cfg.m_list[im])));
      ly.push_back(std::log(med));
    }
    detail::SlopeFit f = detail::fit_affine(lx, ly);
    if (f.n >= 2) {
      std::ostringstream name;
      name << "error_vs_m_beta" << cfg.beta_list[ib];
      rep.fits.push_back({name.str(), f.slope, f.intercept, f.r2, f.n});
    }
  }
  bool any_ok = false;
  for (const TrialRecord& r : rep.records) any_ok = any_ok || std::isfinite(r.error_l2);
  if (!any_ok && !first_error.empty())
    throw std::runtime_error("run_experiment: every trial failed; first failure at " +
                             first_error);
  return rep;
}

inline ExperimentReport run_cartoon_study(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.tag != CaseTag::cartoon_study)
    throw std::invalid_argument("run_cartoon_study: case must be cartoon-study");
  ExperimentReport rep;
  rep.config = cfg.to_json();

  // scale rule: j0(beta) = floor(2/(1+2b) * log2(1/beta)), at least 1
  auto j0_of = [&](double beta) {
    int j = static_cast<int>(std::floor(2.0 / (1.0 + 2.0 * cfg.b) * std::log2(1.0 / beta)));
    return std::max(1, j);
  };
  const double m_exp = 2.0 * (2.0 * cfg.b + 3.0) / (2.0 * cfg.b + 1.0);

  std::vector<double> betas = cfg.beta_list;
  std::sort(betas.begin(), betas.end(), std::greater<double>());

  // one case context per distinct j0, reused across betas and trials
  std::map<int, std::shared_ptr<detail::CaseContext>> ctxs;
  auto ctx_for = [&](int j0) {
    auto it = ctxs.find(j0);
    if (it != ctxs.end()) return it->second;
    ExperimentConfig sub = cfg;
    sub.tag = CaseTag::cartoon_study;
    sub.j0 = j0;
    sub.signal = "cartoon";
    auto ctx = std::make_shared<detail::CaseContext>(detail::make_case_context(sub));
    ctxs.emplace(j0, ctx);
    return ctx;
  };

  // C0 calibration at the largest beta: m = 4 * M_{<= j0}
  const double beta_cal = betas.front();
  auto ctx_cal = ctx_for(j0_of(beta_cal));
  const double growth_cal = std::pow(beta_cal, -m_exp) * std::pow(std::log(1.0 / beta_cal), 2);
  const double C0 = cfg.C0_scale * 4.0 * ctx_cal->solve_set->size() / growth_cal;

  const auto t_start = std::chrono::steady_clock::now();
  auto over_budget = [&]() {
    if (cfg.budget_sec <= 0) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() >
           cfg.budget_sec;
  };

  struct Slot {
    int ib, trial;
    int j0, m;
    bool capped;
  };
  std::vector<Slot> slots;
  for (int ib = 0; ib < static_cast<int>(betas.size()); ++ib) {
    const double beta = betas[static_cast<std::size_t>(ib)];
    const int j0 = j0_of(beta);
    (void)ctx_for(j0); // build contexts up front, sequentially
    const double growth = std::pow(beta, -m_exp) * std::pow(std::log(1.0 / beta), 2);
    int m = static_cast<int>(std::ceil(C0 * growth));
    bool capped = false;
    if (m > cfg.m_cap) {
      m = cfg.m_cap;
      capped = true;
    }
    m = std::max(m, 8);
    for (int t = 0; t < cfg.trials; ++t) slots.push_back({ib, t, j0, m, capped});
  }
  rep.records.resize(slots.size());

  detail::parallel_for(static_cast<int>(slots.size()), cfg.threads, [&](int i) {
    const Slot& sl = slots[static_cast<std::size_t>(i)];
    TrialRecord& rec = rep.records[static_cast<std::size_t>(i)];
    const double beta = betas[static_cast<std::size_t>(sl.ib)];
    if (over_budget()) {
      rec.case_tag = case_tag_name(cfg.tag);
      rec.m = sl.m;
      rec.beta = beta;
      rec.trial = sl.trial;
      rec.error_l2 = std::nan("");
      rec.note = "budget-skipped";
      rep.budget_exhausted = true;
      return;
    }
    ExperimentConfig sub = cfg;
    sub.j0 = sl.j0;
    sub.signal = "cartoon";
    try {
      rec = detail::run_trial(sub, *ctxs.at(sl.j0), sl.m, beta, 0, sl.ib, sl.trial);
      rec.case_tag = case_tag_name(CaseTag::cartoon_study);
      rec.m_capped = sl.capped;
      if (sl.capped) rec.note = rec.note.empty() ? "m-capped" : rec.note + ";m-capped";
    } catch (const std::exception& e) {
      rec.case_tag = case_tag_name(cfg.tag);
      rec.m = sl.m;
      rec.beta = beta;
      rec.trial = sl.trial;
      rec.error_l2 = std::nan("");
      rec.note = std::string("error: ") + e.what();
    }
  });

  // pooled log-log fit of median error vs beta (capped points included; the
  // per-record m_capped flag marks them)
  std::vector<double> lx, ly;
  for (std::size_t ib = 0; ib < betas.size(); ++ib) {
    std::vector<double> errs;
    for (const TrialRecord& r : rep.records)
      if (r.beta == betas[ib] && std::isfinite(r.error_l2)) errs.push_back(r.error_l2);
    if (errs.empty()) continue;
    double med = detail::median(errs);
    if (!(med > 0)) continue;
    lx.push_back(std::log(betas[ib]));
    ly.push_back(std::log(med));
  }
  detail::SlopeFit f = detail::fit_affine(lx, ly);
  rep.fits.push_back({"cartoon_error_vs_beta", f.slope, f.intercept, f.r2, f.n});
  rep.fits.push_back({"cartoon_predicted_slope", 1.0 / (2.0 * cfg.b + 1.0), 0, 1.0, 0});
  return rep;
}

} // namespace csip
