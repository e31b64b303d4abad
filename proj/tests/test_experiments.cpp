#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "csip/cartoon.hpp"
#include "csip/experiments.hpp"

using namespace csip;

namespace {

struct LineFit {
  double slope = 0, r2 = 0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  LineFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double num = n * sxy - sx * sy;
  f.r2 = num * num / ((n * sxx - sx * sx) * (n * syy - sy * sy));
  return f;
}

ExperimentConfig small_deconv(double beta, int trials) {
  ExperimentConfig cfg;
  cfg.tag = CaseTag::deconv_uniform;
  cfg.r = 2;
  cfg.j0 = 2;
  cfg.b = 2.5;
  cfg.signal = "sparse";
  cfg.sparsity = 3;
  cfg.m_list = {300};
  cfg.beta_list = {beta};
  cfg.trials = trials;
  cfg.seed = 2024;
  cfg.tol = 1e-7;
  cfg.max_iters = 150000;
  return cfg;
}

} // namespace

TEST_CASE("cartoon image: trivial zero, bounded scale mass, edge counts") {
  SECTION("constant-zero params give the zero field") {
    CartoonParams p;
    p.inner_amp = 0.0;
    p.outer_amp = 0.0;
    auto basis = AdaptedWaveletBasis::build(WaveletFamily::daubechies(2), 2, 4, 8);
    GridField f = generate_cartoon_image(basis, p, 5);
    REQUIRE(f.norm_inf() == 0.0);
  }

  auto basis = AdaptedWaveletBasis::build(WaveletFamily::daubechies(2), 5, 7, 8);
  CartoonParams p;
  CartoonShape shape = make_cartoon_shape(p, 42);
  GridField img = rasterize_cartoon(shape, basis);
  REQUIRE(img.norm_l2() > 0);

  SECTION("per-scale l1 mass stays bounded over j = 1..5") {
    CoefficientVector x = basis.analyze(img);
    std::vector<double> mass;
    for (int j = 1; j <= 5; ++j) {
      auto [lo, hi] = basis.gamma()->scale_range(j);
      double l1 = 0;
      for (int q = lo; q < hi; ++q) l1 += std::abs(x[q]);
      mass.push_back(l1);
    }
    double mx = *std::max_element(mass.begin(), mass.end());
    double mn = *std::min_element(mass.begin(), mass.end());
    CAPTURE(mass);
    REQUIRE(mn > 0);
    REQUIRE(mx / mn <= 10.0);
  }

  SECTION("edge-intersecting atom count grows like 2^j") {
    std::vector<double> lx, ly;
    for (int j = 1; j <= 5; ++j) {
      int c = count_edge_atoms(basis, shape, j);
      REQUIRE(c > 0);
      lx.push_back(j);
      ly.push_back(std::log2(static_cast<double>(c)));
    }
    LineFit f = fit_line(lx, ly);
    CAPTURE(ly, f.slope, f.r2);
    REQUIRE(f.slope >= 0.8);
    REQUIRE(f.slope <= 1.2);
  }
}

TEST_CASE("config: validation and round trip") {
  ExperimentConfig cfg = small_deconv(0.01, 2);
  nlohmann::json j = cfg.to_json();
  ExperimentConfig back = ExperimentConfig::from_json(j);
  REQUIRE(back.to_json() == j);

  SECTION("per-case constraints") {
    ExperimentConfig bad = cfg;
    bad.b = 1.5; // deconv needs b > 2
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.tag = CaseTag::fourier;
    bad.noise_mode = NoiseMode::nonuniform;
    bad.b = 2.5; // fourier needs b < r = 2
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.tag = CaseTag::cartoon_study;
    bad.zeta = 0.5; // cartoon pins zeta = 1
    bad.beta_list = {1e-3, 3e-3, 1e-2, 3e-2};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.zeta = 1.0;
    bad.beta_list = {1e-2, 2e-2, 3e-2}; // span < 1.5 decades
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("run_experiment: reproducibility and noiseless recovery") {
  ExperimentConfig cfg = small_deconv(0.0, 5);
  ExperimentReport a = run_experiment(cfg);
  ExperimentReport b = run_experiment(cfg);
  REQUIRE(a.to_json().dump() == b.to_json().dump());
  REQUIRE(a.records.size() == 5); // trials x sweep size

  // noiseless, exactly-3-sparse: near-exact recovery
  std::vector<double> errs;
  for (const TrialRecord& r : a.records) {
    REQUIRE(std::isfinite(r.error_l2));
    errs.push_back(r.error_l2);
  }
  std::sort(errs.begin(), errs.end());
  CAPTURE(errs);
  REQUIRE(errs[errs.size() / 2] <= 1e-3);

  // csv shape
  std::string csv = a.records_csv();
  REQUIRE(csv.rfind("case,m,beta,s,trial,error_l2,residual,iters,seed\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("run_experiment: doubling beta never helps (paired sign test)") {
  const int trials = 20;
  ExperimentReport lo = run_experiment(small_deconv(0.01, trials));
  ExperimentReport hi = run_experiment(small_deconv(0.02, trials));
  REQUIRE(lo.records.size() == hi.records.size());
  // beta sits at the same sweep position, so trial seeds (signal, plan, noise
  // directions) pair exactly; only the noise magnitude differs
  int wins = 0;
  for (std::size_t i = 0; i < lo.records.size(); ++i) {
    REQUIRE(lo.records[i].seed == hi.records[i].seed);
    if (hi.records[i].error_l2 >= lo.records[i].error_l2) ++wins;
  }
  // binomial sign test: P(X >= 15 | n = 20, p = 1/2) ~ 0.021 < 0.05
  CAPTURE(wins);
  REQUIRE(wins >= 15);
}

TEST_CASE("run_experiment: elliptic and fourier paths run end to end") {
  SECTION("elliptic, uniform noise") {
    ExperimentConfig cfg;
    cfg.tag = CaseTag::elliptic;
    cfg.r = 2;
    cfg.j0 = 1;
    cfg.b = 2.0;
    cfg.sparsity = 2;
    cfg.m_list = {150};
    cfg.beta_list = {0.0};
    cfg.trials = 3;
    cfg.seed = 7;
    ExperimentReport rep = run_experiment(cfg);
    REQUIRE(rep.records.size() == 3);
    for (const TrialRecord& r : rep.records) {
      CAPTURE(r.note);
      REQUIRE(std::isfinite(r.error_l2));
      REQUIRE(r.error_l2 <= 1e-2);
    }
  }

  SECTION("fourier, nonuniform noise bound holds post hoc") {
    ExperimentConfig cfg;
    cfg.tag = CaseTag::fourier;
    cfg.noise_mode = NoiseMode::nonuniform;
    cfg.r = 2;
    cfg.j0 = 1;
    cfg.b = 1.0;
    cfg.sparsity = 2;
    cfg.m_list = {200};
    cfg.beta_list = {0.01};
    cfg.trials = 3;
    cfg.seed = 7;
    ExperimentReport rep = run_experiment(cfg);
    REQUIRE(rep.records.size() == 3);
    for (const TrialRecord& r : rep.records) {
      CAPTURE(r.note);
      REQUIRE(std::isfinite(r.error_l2));
    }
  }
}
