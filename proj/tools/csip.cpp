// csip command-line driver.
//
// Subcommands:
//   verify   structural estimates (quasi-diagonalization, balancing, coherence)
//   run      recovery experiment sweep over (m, beta, trial)
//   cartoon  cartoon-image scaling study (j0 and m tied to beta)
//   solve    one constrained problem from files (matrix + data)
//
// Configs are TOML (flat key = value) or JSON, selected by file extension.
// Outputs land in --out as report.json, records.csv and fits.csv.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csip/cartoon.hpp"
#include "csip/experiments.hpp"
#include "csip/io.hpp"
#include "csip/solver.hpp"
#include "csip/verify.hpp"

namespace fs = std::filesystem;
using csip::json;

namespace {

// ---------------------------------------------------------------------------
// Minimal flat TOML subset: `key = value` lines, # comments, bare/dotted keys,
// strings, booleans, integers, floats and one-level arrays.  Section headers
// `[name]` prefix subsequent keys with "name.".  This covers the configs this
// tool consumes; anything fancier should just use JSON.

json toml_scalar(const std::string& tok) {
  if (tok.size() >= 2 && (tok.front() == '"' || tok.front() == '\'')) {
    if (tok.back() != tok.front()) throw std::runtime_error("toml: unterminated string: " + tok);
    return tok.substr(1, tok.size() - 2);
  }
  if (tok == "true") return true;
  if (tok == "false") return false;
  try {
    std::size_t pos = 0;
    if (tok.find_first_of(".eE") == std::string::npos ||
        (tok.size() > 1 && tok[0] == '0' && tok[1] == 'x')) {
      long long v = std::stoll(tok, &pos, 0);
      if (pos == tok.size()) return v;
    }
    pos = 0;
    double d = std::stod(tok, &pos);
    if (pos == tok.size()) return d;
  } catch (const std::exception&) {
  }
  throw std::runtime_error("toml: cannot parse value: " + tok);
}

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

json toml_value(const std::string& raw) {
  std::string v = strip(raw);
  if (v.empty()) throw std::runtime_error("toml: empty value");
  if (v.front() == '[') {
    if (v.back() != ']') throw std::runtime_error("toml: unterminated array: " + v);
    json arr = json::array();
    std::string body = v.substr(1, v.size() - 2);
    std::string tok;
    bool in_str = false;
    char q = 0;
    for (char ch : body) {
      if (in_str) {
        tok += ch;
        if (ch == q) in_str = false;
      } else if (ch == '"' || ch == '\'') {
        tok += ch;
        in_str = true;
        q = ch;
      } else if (ch == ',') {
        if (!strip(tok).empty()) arr.push_back(toml_scalar(strip(tok)));
        tok.clear();
      } else {
        tok += ch;
      }
    }
    if (!strip(tok).empty()) arr.push_back(toml_scalar(strip(tok)));
    return arr;
  }
  return toml_scalar(v);
}

json parse_toml(std::istream& in) {
  json out = json::object();
  std::string line, prefix;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // drop comments outside strings
    std::string clean;
    bool in_str = false;
    char q = 0;
    for (char ch : line) {
      if (!in_str && ch == '#') break;
      if (in_str && ch == q) in_str = false;
      else if (!in_str && (ch == '"' || ch == '\'')) { in_str = true; q = ch; }
      clean += ch;
    }
    clean = strip(clean);
    if (clean.empty()) continue;
    if (clean.front() == '[') {
      if (clean.back() != ']') throw std::runtime_error("toml: bad section at line " + std::to_string(lineno));
      prefix = strip(clean.substr(1, clean.size() - 2));
      if (!prefix.empty()) prefix += ".";
      continue;
    }
    std::size_t eq = clean.find('=');
    if (eq == std::string::npos) throw std::runtime_error("toml: missing '=' at line " + std::to_string(lineno));
    std::string key = strip(clean.substr(0, eq));
    if (key.size() >= 2 && (key.front() == '"' || key.front() == '\''))
      key = key.substr(1, key.size() - 2);
    if (key.empty()) throw std::runtime_error("toml: empty key at line " + std::to_string(lineno));
    // dotted keys and [section] prefixes become nested objects
    std::string full = prefix + key;
    json* node = &out;
    std::size_t start = 0, dot;
    while ((dot = full.find('.', start)) != std::string::npos) {
      node = &(*node)[full.substr(start, dot - start)];
      if (!node->is_object() && !node->is_null())
        throw std::runtime_error("toml: key collision at " + full);
      start = dot + 1;
    }
    (*node)[full.substr(start)] = toml_value(clean.substr(eq + 1));
  }
  return out;
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string ext = fs::path(path).extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".toml") return parse_toml(in);
  json j;
  in >> j;
  return j;
}

// Common output plumbing ----------------------------------------------------

struct OutputFlags {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool threads_set = false;
  double budget_sec = 0;
  bool budget_set = false;
};

void add_common(CLI::App* sub, OutputFlags& f) {
  sub->add_option("--config", f.config_path, "TOML or JSON config file")->required();
  sub->add_option("--out", f.out_dir, "output directory (created if missing)");
  sub->add_option("--seed", f.seed, "override the config seed")->each([&f](const std::string&) {
    f.seed_set = true;
  });
  sub->add_option("--threads", f.threads, "worker threads (0 = hardware)")->each([&f](const std::string&) {
    f.threads_set = true;
  });
  sub->add_option("--budget-sec", f.budget_sec, "wall-clock budget; later trials are skipped")
      ->each([&f](const std::string&) { f.budget_set = true; });
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << body;
}

void write_report_files(const OutputFlags& f, const csip::ExperimentReport& rep) {
  fs::create_directories(f.out_dir);
  write_text(fs::path(f.out_dir) / "report.json", rep.to_json().dump(2) + "\n");
  write_text(fs::path(f.out_dir) / "records.csv", rep.records_csv());
  write_text(fs::path(f.out_dir) / "fits.csv", rep.fits_csv());
}

csip::ExperimentConfig config_with_overrides(const json& j, const OutputFlags& f) {
  csip::ExperimentConfig cfg = csip::ExperimentConfig::from_json(j);
  if (f.seed_set) cfg.seed = f.seed;
  if (f.threads_set) cfg.threads = f.threads;
  if (f.budget_set) cfg.budget_sec = f.budget_sec;
  cfg.validate();
  return cfg;
}

// verify --------------------------------------------------------------------

// FieldMap::map() captures the field map by pointer; keep the map object
// alive inside the returned closures.
template <typename FieldMap>
csip::LinearMap owning_map(std::shared_ptr<FieldMap> fm) {
  csip::LinearMap m = fm->map();
  return {m.dim_in, m.dim_out,
          [fm, m](const csip::CVec& x) { return m.apply(x); },
          [fm, m](const csip::CVec& y) { return m.adjoint(y); }};
}

std::vector<double> verify_N_list(const json& j, double N) {
  if (j.contains("balance_N_list")) return j.at("balance_N_list").get<std::vector<double>>();
  std::vector<double> Ns;
  for (int k = 1; k <= 6; ++k) Ns.push_back(N * (0.5 + 0.25 * k));
  return Ns;
}

int cmd_verify(const json& j, const OutputFlags& f) {
  using namespace csip;
  ExperimentConfig cfg = config_with_overrides(j, f);
  if (cfg.j0 < 2) throw std::runtime_error("verify: j0 >= 2 required (coherence needs >= 3 scales)");
  detail::CaseContext ctx = detail::make_case_context(cfg);
  auto basis = ctx.basis;
  const int j0 = cfg.j0;

  VerificationReport rep;
  rep.case_name = case_tag_name(cfg.tag);
  rep.j0 = j0;
  rep.b = cfg.b;

  const int probe_side = j.value("probe_side", 41);
  std::function<LinearMap(double)> masked;
  std::shared_ptr<const IndexSet> iset;
  std::function<cplx(const MultiIndex&, Point2)> response;
  std::function<double(Point2)> fnu;
  std::vector<Point2> probes;
  double N_eff = 0;

  switch (cfg.tag) {
    case CaseTag::deconv_uniform:
    case CaseTag::cartoon_study:
    case CaseTag::deconv_exponential: {
      const bool expo = cfg.tag == CaseTag::deconv_exponential;
      const double rate = cfg.exp_rate > 0 ? cfg.exp_rate : 1.0;
      N_eff = cfg.N > 0 ? cfg.N : (expo ? 40.0 / rate : std::max(2.0, std::ceil(1.5 * j0)));
      auto op = std::make_shared<const BesselConvolutionOp>(basis, cfg.b, N_eff,
                                                            j.value("pad_margin", 4.0));
      BesselFieldMap plain(op, j0);
      iset = plain.iset_ptr();
      rep.qd = estimate_quasi_diag(plain.map(), *iset, cfg.b);
      masked = [op, j0](double N) {
        return owning_map(std::make_shared<BesselFieldMap>(
            op, j0, DomainMask{DomainMask::Kind::outside, N}));
      };
      response = [op](const MultiIndex& mi, Point2 t) { return op->response(mi, t); };
      SamplingDensity dens = expo ? SamplingDensity::exponential(rate)
                                  : SamplingDensity::uniform_ball(N_eff);
      fnu = [dens](Point2 t) { return dens.pdf(t); };
      probes = probe_grid(expo ? 3.0 / rate : N_eff, probe_side);
      break;
    }
    case CaseTag::elliptic: {
      const double h = cfg.elliptic_h > 0 ? cfg.elliptic_h : basis->grid_h();
      double L = cfg.domain_L;
      if (L <= 0) {
        L = basis->K_box() + 1.0;
        L = std::ceil(2.0 * L / h) * h / 2.0;
      }
      auto op = std::make_shared<const EllipticSolutionOp>(L, h, cfg.sigma);
      EllipticFieldMap plain(op, basis, j0);
      iset = plain.iset_ptr();
      rep.qd = estimate_quasi_diag(plain.map(), *iset, cfg.b);
      N_eff = L - h;
      masked = [op, basis, j0](double N) {
        return owning_map(std::make_shared<EllipticFieldMap>(
            op, basis, j0, DomainMask{DomainMask::Kind::outside, N}));
      };
      // cache one PDE solve per atom; coherence then samples the fields
      auto fields = std::make_shared<std::map<std::uint64_t, GridField>>();
      auto key = [is = iset](const MultiIndex& mi) {
        return static_cast<std::uint64_t>(is->position(mi));
      };
      response = [op, basis, is = iset, fields, key](const MultiIndex& mi, Point2 t) {
        auto it = fields->find(key(mi));
        if (it == fields->end()) {
          CoefficientVector e(is);
          e[is->position(mi)] = 1.0;
          it = fields->emplace(key(mi), op->solve(basis->synthesize(e))).first;
        }
        return op->sample_pointwise(it->second, t);
      };
      const double fval = 1.0 / (4.0 * L * L);
      fnu = [fval](Point2) { return fval; };
      probes = probe_grid(N_eff, probe_side);
      break;
    }
    case CaseTag::fourier: {
      const double R = basis->K_radius() + 0.5;
      N_eff = cfg.N > 0 ? cfg.N : std::ldexp(1.0, j0);
      const double bound = 1.0 / (4.0 * R);
      const double spacing =
          cfg.lattice_spacing > 0 ? cfg.lattice_spacing : 0.9 * bound * std::sqrt(2.0);
      const double extent = cfg.lattice_extent > 0 ? cfg.lattice_extent : N_eff + 1.0;
      auto Z = std::make_shared<const SeparatedLattice>(
          generate_lattice(R, spacing, cfg.lattice_jitter, cfg.seed, extent));
      auto op = std::make_shared<const ModulatedFourierOp>(basis, Z, cfg.b, R);
      const double pad = 2.0 * extent + 4.0;
      FourierSpectrumMap plain(op, j0, {}, pad);
      iset = plain.iset_ptr();
      rep.qd = estimate_quasi_diag(plain.map(), *iset, cfg.b);
      masked = [op, j0, pad](double N) {
        return owning_map(std::make_shared<FourierSpectrumMap>(
            op, j0, DomainMask{DomainMask::Kind::outside, N}, pad));
      };
      response = [op](const MultiIndex& mi, Point2 t) { return op->response(mi, t); };
      SamplingDensity dens = SamplingDensity::inverse_quadratic(Z, N_eff);
      fnu = [dens](Point2 t) { return dens.pdf(t); };
      for (int i : dens.support_idx) probes.push_back(Z->pts[static_cast<std::size_t>(i)]);
      break;
    }
  }

  rep.bal = estimate_balancing(masked, verify_N_list(j, N_eff), j0, cfg.b, rep.qd.c);
  std::erase_if(probes, [&fnu](Point2 t) { return !(fnu(t) > 0); });
  rep.coh = estimate_coherence(response, fnu, *iset, probes);
  const double s = j.value("s", std::min(8.0, double(iset->size())));
  const double gamma = j.value("gamma", 0.05);
  rep.sc = sample_complexity(rep.coh.B, cfg.b, rep.coh.d_fit, cfg.zeta, j0, s,
                             double(iset->size()), gamma);

  fs::create_directories(f.out_dir);
  write_text(fs::path(f.out_dir) / "report.json", rep.to_json().dump(2) + "\n");
  write_text(fs::path(f.out_dir) / "records.csv", rep.to_csv());
  std::string fits = "fit,value,r2\n";
  fits += "coherence_d," + std::to_string(rep.coh.d_fit) + "," + std::to_string(rep.coh.r2) + "\n";
  write_text(fs::path(f.out_dir) / "fits.csv", fits);
  std::cout << "verify: c=" << rep.qd.c << " C=" << rep.qd.C
            << " N_balanced=" << rep.bal.N_balanced << " d_fit=" << rep.coh.d_fit
            << " B=" << rep.coh.B << "\n";
  return 0;
}

// solve ---------------------------------------------------------------------

csip::CVec load_complex_vector(const std::string& path) {
  std::vector<double> payload;
  json hdr = csip::detail::read_header_and_payload(path, payload);
  if (hdr.value("kind", "") != "complex-vector")
    throw std::runtime_error("solve: " + path + " is not a complex-vector file");
  csip::CVec v = csip::detail::deinterleave(payload);
  if (static_cast<int>(v.size()) != hdr.at("n").get<int>())
    throw std::runtime_error("solve: payload length mismatch in " + path);
  return v;
}

int cmd_solve(const json& j, const OutputFlags& f) {
  using namespace csip;
  const fs::path base = fs::path(f.config_path).parent_path();
  auto resolve = [&base](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q.string() : (base / q).string();
  };

  auto iset = index_set_from_json(load_config(resolve(j.at("index_set").get<std::string>())));
  int rows = 0, cols = 0;
  std::vector<cplx> entries =
      load_dense_matrix(resolve(j.at("operator").get<std::string>()), rows, cols);
  if (cols != iset->size())
    throw std::runtime_error("solve: matrix columns do not match the index set");
  CVec y = load_complex_vector(resolve(j.at("data").get<std::string>()));
  if (static_cast<int>(y.size()) != rows)
    throw std::runtime_error("solve: data length does not match matrix rows");

  // entries are taken verbatim (already scaled); no extra 1/sqrt(m)
  SampledOperator A = sampled_from_matrix(iset, rows, std::move(entries), {}, false);
  RecoveryProblem prob{&A, y, j.at("eps").get<double>(),
                       DiagonalWeights{j.value("b", 0.0), j.value("zeta", 1.0)}};
  const double tol = j.value("tol", 1e-8);
  const int max_iters = j.value("max_iters", 150000);
  SolverReport rep = solve_qcbp(prob, tol, max_iters);
  KktReport kkt = kkt_check(prob, rep.solution);

  fs::create_directories(f.out_dir);
  json out = rep.to_json();
  out["kkt"] = {{"violation", kkt.violation}, {"lambda", kkt.lambda}, {"pass", kkt.pass}};
  write_text(fs::path(f.out_dir) / "report.json", out.dump(2) + "\n");
  save_coefficients((fs::path(f.out_dir) / "solution.bin").string(), rep.solution,
                    iset->max_scale(), j.value("b", 0.0));
  std::cout << "solve: converged=" << rep.converged << " objective=" << rep.objective
            << " residual=" << rep.residual << " iters=" << rep.iterations << "\n";
  return rep.converged ? 0 : 3;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"compressed-sensing recovery for ill-posed inverse problems"};
  app.require_subcommand(1);

  OutputFlags fv, fr, fc, fs_;
  CLI::App* sv = app.add_subcommand("verify", "structural estimates for one case");
  CLI::App* sr = app.add_subcommand("run", "recovery experiment sweep");
  CLI::App* sc = app.add_subcommand("cartoon", "cartoon-image scaling study");
  CLI::App* ss = app.add_subcommand("solve", "solve one problem from files");
  add_common(sv, fv);
  add_common(sr, fr);
  add_common(sc, fc);
  add_common(ss, fs_);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sv->parsed()) return cmd_verify(load_config(fv.config_path), fv);
    if (sr->parsed()) {
      csip::ExperimentConfig cfg = config_with_overrides(load_config(fr.config_path), fr);
      csip::ExperimentReport rep = csip::run_experiment(cfg);
      write_report_files(fr, rep);
      std::cout << "run: " << rep.records.size() << " records, "
                << rep.fits.size() << " fits" << (rep.budget_exhausted ? " (budget hit)" : "")
                << "\n";
      return 0;
    }
    if (sc->parsed()) {
      csip::ExperimentConfig cfg = config_with_overrides(load_config(fc.config_path), fc);
      csip::ExperimentReport rep = csip::run_cartoon_study(cfg);
      write_report_files(fc, rep);
      std::cout << "cartoon: " << rep.records.size() << " records, "
                << rep.fits.size() << " fits" << (rep.budget_exhausted ? " (budget hit)" : "")
                << "\n";
      return 0;
    }
    if (ss->parsed()) return cmd_solve(load_config(fs_.config_path), fs_);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
