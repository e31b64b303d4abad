#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "csip/io.hpp"
#include "csip/rng.hpp"
#include "csip/solver.hpp"

using namespace csip;

namespace {

// Synthetic index set with M indices spread over scales 0..2 so the diagonal
// weights are non-constant when zeta > 0.
std::shared_ptr<const IndexSet> synth_iset(int M) {
  std::vector<MultiIndex> idx;
  int j = 0;
  while (static_cast<int>(idx.size()) < M) {
    const int side = 1 << (j + 2);
    for (int n = 0; n < side * side && static_cast<int>(idx.size()) < M; ++n)
      idx.push_back({j, {n % side, n / side}, j == 0 ? WaveletKind::scaling : WaveletKind::detail_x});
    ++j;
  }
  return std::make_shared<const IndexSet>(std::move(idx));
}

std::vector<cplx> gaussian_matrix(int m, int M, RngStream& rng) {
  std::vector<cplx> a(static_cast<std::size_t>(m) * M);
  for (auto& z : a) z = rng.normal_complex();
  return a;
}

RecoveryProblem make_problem(const SampledOperator& A, CVec y, double eps,
                             DiagonalWeights w = {1.0, 0.0}) {
  RecoveryProblem p;
  p.A = &A;
  p.y = std::move(y);
  p.eps = eps;
  p.weights = w;
  return p;
}

} // namespace

TEST_CASE("qcbp: identity operator, eps = 0 -> x = y") {
  auto iset = synth_iset(8);
  std::vector<cplx> I(64, cplx{0, 0});
  for (int i = 0; i < 8; ++i) I[static_cast<std::size_t>(i) * 8 + i] = 1.0;
  SampledOperator A = sampled_from_matrix(iset, 8, I, {}, /*include_m_scaling=*/false);
  RngStream rng = RngStream::derive(3, "qcbp-id");
  CVec y(8);
  for (auto& z : y) z = rng.normal_complex();
  RecoveryProblem prob = make_problem(A, y, 0.0);
  SolverReport rep = solve_qcbp(prob, 1e-10);
  REQUIRE(rep.converged);
  for (int i = 0; i < 8; ++i) REQUIRE(std::abs(rep.solution[i] - y[static_cast<std::size_t>(i)]) < 1e-8);
  REQUIRE(rep.residual <= 1e-8);
}

TEST_CASE("qcbp: A = [1, 0.5], y = 1, eps = 0 -> (1, 0)") {
  // sign-pattern enumeration: among solutions of x1 + 0.5 x2 = 1 the l1
  // minimum is (1,0) with objective 1 (vs (0,2) with objective 2)
  auto iset = synth_iset(2);
  SampledOperator A = sampled_from_matrix(iset, 1, {cplx{1, 0}, cplx{0.5, 0}}, {},
                                          /*include_m_scaling=*/false);
  RecoveryProblem prob = make_problem(A, {cplx{1, 0}}, 0.0);
  SolverReport rep = solve_qcbp(prob, 1e-10);
  REQUIRE(rep.converged);
  REQUIRE(std::abs(rep.solution[0] - 1.0) < 1e-7);
  REQUIRE(std::abs(rep.solution[1]) < 1e-7);
}

TEST_CASE("qcbp: noiseless s=3 recovery from a Gaussian sketch") {
  const int M = 64, m = 40, s = 3;
  auto iset = synth_iset(M);
  RngStream rng = RngStream::derive(11, "qcbp-sketch");
  SampledOperator A = sampled_from_matrix(iset, m, gaussian_matrix(m, M, rng));
  CoefficientVector xt(iset);
  std::vector<int> supp = {5, 23, 50};
  for (int i : supp) xt[i] = rng.normal_complex();
  CVec y = A.apply(xt.v);
  RecoveryProblem prob = make_problem(A, y, 0.0);
  SolverReport rep = solve_qcbp(prob, 1e-10);
  REQUIRE(rep.converged);
  double err = 0, ref = 0;
  for (int i = 0; i < M; ++i) {
    err += std::norm(rep.solution[i] - xt[i]);
    ref += std::norm(xt[i]);
  }
  REQUIRE(std::sqrt(err / ref) <= 1e-3);

  // independent oracle: least squares on the known support reproduces x
  Eigen::MatrixXcd As(m, s);
  for (int k = 0; k < m; ++k)
    for (int c = 0; c < s; ++c) As(k, c) = A.a(k, supp[static_cast<std::size_t>(c)]);
  Eigen::VectorXcd ye(m);
  for (int k = 0; k < m; ++k) ye[k] = y[static_cast<std::size_t>(k)];
  Eigen::VectorXcd coef = As.colPivHouseholderQr().solve(ye);
  for (int c = 0; c < s; ++c)
    REQUIRE(std::abs(coef[c] - xt[supp[static_cast<std::size_t>(c)]]) < 1e-10);
}

TEST_CASE("qcbp vs oracle: objective agreement and KKT on 20 dense instances") {
  const int M = 64, m = 32;
  auto iset = synth_iset(M);
  for (int inst = 0; inst < 20; ++inst) {
    RngStream rng = RngStream::derive(100 + static_cast<std::uint64_t>(inst), "qcbp-vs-dr");
    SampledOperator A = sampled_from_matrix(iset, m, gaussian_matrix(m, M, rng));
    CoefficientVector x0(iset);
    for (int i = 0; i < 8; ++i) x0[static_cast<int>(rng.next_below(M))] = rng.normal_complex();
    CVec y = A.apply(x0.v);
    CVec noise(y.size());
    for (auto& z : noise) z = 0.05 * rng.normal_complex();
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += noise[k];
    const double eps = 1.05 * vnorm(noise);
    DiagonalWeights w{1.0, inst % 2 ? 1.0 : 0.0}; // alternate plain/weighted objectives
    RecoveryProblem prob = make_problem(A, y, eps, w);

    SolverReport rp = solve_qcbp(prob, 1e-10, 200'000);
    SolverReport ro = solve_oracle(prob, 1e-11, 400'000);
    CAPTURE(inst, rp.objective, ro.objective, rp.iterations, ro.iterations);
    REQUIRE(rp.converged);
    REQUIRE(ro.converged);
    REQUIRE(std::abs(rp.objective - ro.objective) <= 1e-6 * (1 + std::abs(ro.objective)));
    REQUIRE(rp.residual <= eps * (1 + 1e-6) + 1e-12);
    REQUIRE(ro.residual <= eps * (1 + 1e-9) + 1e-12);

    KktReport kk = kkt_check(prob, ro.solution, 1e-5);
    CAPTURE(kk.violation, kk.lambda);
    REQUIRE(kk.pass);

    // a perturbed point must fail decisively
    CoefficientVector bad = ro.solution;
    RngStream prng = RngStream::derive(7, "kkt-perturb");
    for (int i = 0; i < M; ++i) bad[i] += 0.3 * prng.normal_complex();
    KktReport kb = kkt_check(prob, bad, 1e-5);
    REQUIRE_FALSE(kb.pass);
    REQUIRE(kb.violation > 1e-2);
  }
}

TEST_CASE("oracle: trivial and homogeneity properties") {
  const int M = 16, m = 8;
  auto iset = synth_iset(M);
  RngStream rng = RngStream::derive(42, "oracle-props");
  SampledOperator A = sampled_from_matrix(iset, m, gaussian_matrix(m, M, rng));
  CVec y(static_cast<std::size_t>(m));
  for (auto& z : y) z = rng.normal_complex();

  // eps >= ||y|| -> zero solution, objective 0
  RecoveryProblem trivial = make_problem(A, y, vnorm(y) * 1.001);
  SolverReport rt = solve_oracle(trivial);
  REQUIRE(rt.converged);
  REQUIRE(rt.objective == 0.0);
  for (int i = 0; i < M; ++i) REQUIRE(rt.solution[i] == cplx{0, 0});
  REQUIRE(kkt_check(trivial, rt.solution).pass);

  // positive homogeneity at zeta = 0: (10 y, 10 eps) -> 10 x
  const double eps = 0.3 * vnorm(y);
  RecoveryProblem base = make_problem(A, y, eps);
  CVec y10 = y;
  for (auto& z : y10) z *= 10.0;
  RecoveryProblem scaled = make_problem(A, y10, 10 * eps);
  SolverReport rb = solve_oracle(base, 1e-11, 400'000);
  SolverReport rs = solve_oracle(scaled, 1e-11, 400'000);
  REQUIRE(rb.converged);
  REQUIRE(rs.converged);
  double diff = 0, ref = 0;
  for (int i = 0; i < M; ++i) {
    diff += std::norm(rs.solution[i] - 10.0 * rb.solution[i]);
    ref += std::norm(10.0 * rb.solution[i]);
  }
  REQUIRE(std::sqrt(diff / ref) < 1e-6);

  // size limits are enforced
  auto big = synth_iset(300);
  SampledOperator Abig = sampled_from_matrix(big, 2, std::vector<cplx>(600, cplx{1, 0}));
  RecoveryProblem pb = make_problem(Abig, CVec(2, cplx{1, 0}), 0.0);
  REQUIRE_THROWS_AS(solve_oracle(pb), std::invalid_argument);
}

TEST_CASE("objective weight rescaling leaves the argmin unchanged") {
  // all indices at a single scale: zeta=1 multiplies every weight by the same
  // constant, which must not move the solution
  std::vector<MultiIndex> idx;
  for (int n = 0; n < 16; ++n) idx.push_back({1, {n % 4, n / 4}, WaveletKind::detail_y});
  auto iset = std::make_shared<const IndexSet>(std::move(idx));
  RngStream rng = RngStream::derive(9, "weight-scale");
  SampledOperator A = sampled_from_matrix(iset, 8, gaussian_matrix(8, 16, rng));
  CVec y(8);
  for (auto& z : y) z = rng.normal_complex();
  const double eps = 0.2 * vnorm(y);
  RecoveryProblem p1 = make_problem(A, y, eps, DiagonalWeights{1.0, 0.0}); // weights 1
  RecoveryProblem p2 = make_problem(A, y, eps, DiagonalWeights{2.0, 1.0}); // weights 1/4
  SolverReport r1 = solve_oracle(p1, 1e-11, 400'000);
  SolverReport r2 = solve_oracle(p2, 1e-11, 400'000);
  REQUIRE(r1.converged);
  REQUIRE(r2.converged);
  double diff = 0, ref = 0;
  for (int i = 0; i < 16; ++i) {
    diff += std::norm(r1.solution[i] - r2.solution[i]);
    ref += std::norm(r1.solution[i]);
  }
  REQUIRE(std::sqrt(diff / ref) < 1e-6);
}

TEST_CASE("qcbp: suspected-infeasible radius is flagged") {
  // y outside range(A): A maps into a 1-dim subspace, y has a component
  // orthogonal to it larger than eps
  auto iset = synth_iset(2);
  std::vector<cplx> ent = {cplx{1, 0}, cplx{0, 0}, cplx{1, 0}, cplx{0, 0}};
  SampledOperator A = sampled_from_matrix(iset, 2, ent, {}, false);
  CVec y = {cplx{1, 0}, cplx{-1, 0}}; // dist(y, range A) = sqrt(2)
  RecoveryProblem prob = make_problem(A, y, 0.1);
  SolverReport rep = solve_qcbp(prob, 1e-10, 30'000);
  REQUIRE_FALSE(rep.converged);
  REQUIRE(rep.infeasible_suspected);
  SolverReport ro = solve_oracle(prob);
  REQUIRE(ro.infeasible_suspected);
}

TEST_CASE("sampled operator: assembly against forward operators") {
  auto basis = std::make_shared<const AdaptedWaveletBasis>(
      AdaptedWaveletBasis::build(WaveletFamily::daubechies(2), 2, 4, 8));
  BesselConvolutionOp op(basis, 2.5, 6.0);

  MeasurementPlan plan;
  RngStream rng = RngStream::derive(77, "assemble");
  for (int k = 0; k < 9; ++k) {
    plan.t.push_back({rng.uniform(-4, 4), rng.uniform(-4, 4)});
    plan.fnu.push_back(0.1 + rng.uniform(0, 1));
  }

  SampledOperator A = assemble_sampled_operator(op, plan, 1, /*weighted=*/false);
  const int M = A.M;
  REQUIRE(M == A.iset->size());
  REQUIRE(A.iset->max_scale() == 1);

  // m=1 single column: entry equals the response path exactly
  MeasurementPlan one;
  one.t = {plan.t[0]};
  one.fnu = {plan.fnu[0]};
  SampledOperator A1 = assemble_sampled_operator(op, one, 1, false);
  for (int p = 0; p < M; ++p)
    REQUIRE(A1.a(0, p) == op.response((*A.iset)[p], plan.t[0])); // 1/sqrt(1) = 1

  // weighted off vs on differ exactly by the diagonal row scaling
  SampledOperator Aw = assemble_sampled_operator(op, plan, 1, true);
  for (int k = 0; k < A.m; ++k)
    for (int p = 0; p < M; ++p)
      REQUIRE(std::abs(Aw.a(k, p) - A.a(k, p) / std::sqrt(plan.fnu[static_cast<std::size_t>(k)])) <
              1e-15 * (1 + std::abs(A.a(k, p))));

  // dense cache vs handle application agree
  SampledOperator Ah = assemble_sampled_operator(op, plan, 1, false, /*dense_limit=*/0);
  REQUIRE(Ah.dense.empty());
  REQUIRE_FALSE(A.dense.empty());
  CVec x(static_cast<std::size_t>(M));
  for (auto& z : x) z = rng.normal_complex();
  CVec yd = A.apply(x), yh = Ah.apply(x);
  for (int k = 0; k < A.m; ++k)
    REQUIRE(std::abs(yd[static_cast<std::size_t>(k)] - yh[static_cast<std::size_t>(k)]) <
            1e-12 * (1 + std::abs(yd[static_cast<std::size_t>(k)])));

  // adjoint consistency |<Ax, y> - <x, A*y>| <= 1e-8 ||x|| ||y||
  CVec yy(static_cast<std::size_t>(A.m));
  for (auto& z : yy) z = rng.normal_complex();
  cplx lhs = vdot(A.apply(x), yy), rhs = vdot(x, A.adjoint(yy));
  REQUIRE(std::abs(lhs - rhs) <= 1e-8 * vnorm(x) * vnorm(yy));

  // out-of-radius point rejected
  MeasurementPlan badp = plan;
  badp.t[0] = {40, 0};
  REQUIRE_THROWS_AS(assemble_sampled_operator(op, badp, 1, false), std::invalid_argument);
}

TEST_CASE("sampled operator: elliptic dense assembly matches the solve path") {
  auto basis = std::make_shared<const AdaptedWaveletBasis>(
      AdaptedWaveletBasis::build(WaveletFamily::daubechies(2), 1, 4, 8));
  EllipticSolutionOp op(6.0, 1.0 / 16, SigmaSpec{});
  MeasurementPlan plan;
  RngStream rng = RngStream::derive(5, "ell-assemble");
  for (int k = 0; k < 5; ++k) plan.t.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
  plan.fnu.assign(5, 1.0);
  SampledOperator A = assemble_sampled_operator(op, *basis, plan, 0, false);
  // spot-check a few columns against sample_pointwise(solve(atom))
  for (int p : {0, A.M / 2, A.M - 1}) {
    CoefficientVector e(A.iset);
    e[p] = 1.0;
    GridField w = op.solve(basis->synthesize(e));
    for (int k = 0; k < A.m; ++k) {
      cplx want = op.sample_pointwise(w, plan.t[static_cast<std::size_t>(k)]) / std::sqrt(5.0);
      REQUIRE(std::abs(A.a(k, p) - want) < 1e-14 + 1e-12 * std::abs(want));
    }
  }
  MeasurementPlan badp = plan;
  badp.t[0] = {7, 0};
  REQUIRE_THROWS_AS(assemble_sampled_operator(op, *basis, badp, 0, false), std::invalid_argument);
}

TEST_CASE("serialization: grid fields, coefficients, matrices, plans round-trip") {
  RngStream rng = RngStream::derive(13, "io");
  GridField g(12, 0.25, -1.5);
  for (auto& z : g.v) z = rng.normal_complex();
  save_grid_field("/tmp/csip_test_grid.bin", g);
  GridField g2 = load_grid_field("/tmp/csip_test_grid.bin");
  REQUIRE(g2.n == g.n);
  REQUIRE(g2.h == g.h);
  REQUIRE(g2.x0 == g.x0);
  for (std::size_t i = 0; i < g.v.size(); ++i) REQUIRE(g2.v[i] == g.v[i]);

  auto iset = synth_iset(20);
  CoefficientVector x(iset);
  for (int i = 0; i < 20; ++i) x[i] = rng.normal_complex();
  save_coefficients("/tmp/csip_test_coef.bin", x, 3, 2.5);
  LoadedCoefficients lc = load_coefficients("/tmp/csip_test_coef.bin");
  REQUIRE(lc.j0 == 3);
  REQUIRE(lc.b == 2.5);
  REQUIRE(lc.x.size() == 20);
  for (int i = 0; i < 20; ++i) {
    REQUIRE((*lc.x.iset)[i] == (*iset)[i]);
    REQUIRE(lc.x[i] == x[i]);
  }

  std::vector<cplx> mat(6);
  for (auto& z : mat) z = rng.normal_complex();
  save_dense_matrix("/tmp/csip_test_mat.bin", 2, 3, mat);
  int r = 0, c = 0;
  auto mat2 = load_dense_matrix("/tmp/csip_test_mat.bin", r, c);
  REQUIRE(r == 2);
  REQUIRE(c == 3);
  for (std::size_t i = 0; i < mat.size(); ++i) REQUIRE(mat2[i] == mat[i]);

  MeasurementPlan plan;
  plan.t = {{0.5, -1}, {2, 3}};
  plan.fnu = {0.25, 0.125};
  plan.atom = {-1, -1};
  plan.seed = 99;
  plan.mode = NoiseMode::nonuniform;
  MeasurementPlan p2 = plan_from_json(plan_to_json(plan));
  REQUIRE(p2.seed == plan.seed);
  REQUIRE(p2.mode == plan.mode);
  REQUIRE(p2.t.size() == 2);
  REQUIRE(p2.t[1].x == plan.t[1].x);
  REQUIRE(p2.fnu[1] == plan.fnu[1]);
}
