#pragma once

// File formats: a single-line JSON header (compact, newline-terminated)
// followed by a raw little-endian float64 payload.  Complex payloads are
// interleaved (re, im).  The header always carries "payload_doubles" so a
// reader can validate the byte count without trusting the file size.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "csip/grid.hpp"
#include "csip/multi_index.hpp"
#include "csip/sampling.hpp"

namespace csip {

static_assert(std::endian::native == std::endian::little,
              "payloads are little-endian; big-endian hosts are unsupported");

using json = nlohmann::json;

namespace detail {

inline void write_header_and_payload(const std::string& path, json header,
                                     const std::vector<double>& payload) {
  header["payload_doubles"] = payload.size();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("io: cannot open for writing: " + path);
  const std::string h = header.dump();
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  f.put('\n');
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!f) throw std::runtime_error("io: write failed: " + path);
}

inline json read_header_and_payload(const std::string& path, std::vector<double>& payload) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("io: cannot open for reading: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("io: missing header: " + path);
  json header = json::parse(line);
  const std::size_t count = header.at("payload_doubles").get<std::size_t>();
  payload.resize(count);
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(f.gcount()) != count * sizeof(double))
    throw std::runtime_error("io: truncated payload: " + path);
  return header;
}

inline std::vector<double> interleave(const std::vector<cplx>& v) {
  std::vector<double> out(2 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[2 * i] = v[i].real();
    out[2 * i + 1] = v[i].imag();
  }
  return out;
}

inline std::vector<cplx> deinterleave(const std::vector<double>& d) {
  if (d.size() % 2 != 0) throw std::runtime_error("io: odd complex payload length");
  std::vector<cplx> out(d.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {d[2 * i], d[2 * i + 1]};
  return out;
}

} // namespace detail

inline void save_grid_field(const std::string& path, const GridField& u) {
  json h = {{"type", "grid_field"}, {"n", u.n}, {"h", u.h}, {"x0", u.x0}};
  detail::write_header_and_payload(path, std::move(h), detail::interleave(u.v));
}

inline GridField load_grid_field(const std::string& path) {
  std::vector<double> d;
  json h = detail::read_header_and_payload(path, d);
  if (h.at("type") != "grid_field") throw std::runtime_error("io: not a grid_field: " + path);
  GridField u(h.at("n").get<int>(), h.at("h").get<double>(), h.at("x0").get<double>());
  u.v = detail::deinterleave(d);
  if (static_cast<int>(u.v.size()) != u.n * u.n)
    throw std::runtime_error("io: grid_field payload size mismatch: " + path);
  return u;
}

inline json index_set_to_json(const IndexSet& s) {
  json arr = json::array();
  for (int p = 0; p < s.size(); ++p) {
    const MultiIndex& mi = s[p];
    arr.push_back({mi.j, static_cast<int>(mi.kind), mi.n[0], mi.n[1]});
  }
  return arr;
}

inline std::shared_ptr<const IndexSet> index_set_from_json(const json& arr) {
  std::vector<MultiIndex> idx;
  idx.reserve(arr.size());
  for (const auto& e : arr)
    idx.push_back({e.at(0).get<int>(),
                   {e.at(2).get<int>(), e.at(3).get<int>()},
                   static_cast<WaveletKind>(e.at(1).get<int>())});
  return std::make_shared<const IndexSet>(std::move(idx));
}

// Coefficient file: header {indices, j0, b, basis?} + interleaved payload.
inline void save_coefficients(const std::string& path, const CoefficientVector& x, int j0,
                              double b, const std::string& basis_descriptor = "") {
  if (!x.iset || static_cast<int>(x.v.size()) != x.iset->size())
    throw std::invalid_argument("save_coefficients: size mismatch with index set");
  json h = {{"type", "coefficients"},
            {"j0", j0},
            {"b", b},
            {"indices", index_set_to_json(*x.iset)}};
  if (!basis_descriptor.empty()) h["basis"] = json::parse(basis_descriptor);
  detail::write_header_and_payload(path, std::move(h), detail::interleave(x.v));
}

struct LoadedCoefficients {
  CoefficientVector x;
  int j0 = 0;
  double b = 0;
  json basis; // null when absent
};

inline LoadedCoefficients load_coefficients(const std::string& path) {
  std::vector<double> d;
  json h = detail::read_header_and_payload(path, d);
  if (h.at("type") != "coefficients") throw std::runtime_error("io: not coefficients: " + path);
  LoadedCoefficients out;
  out.x = CoefficientVector(index_set_from_json(h.at("indices")), detail::deinterleave(d));
  out.j0 = h.at("j0").get<int>();
  out.b = h.at("b").get<double>();
  if (h.contains("basis")) out.basis = h.at("basis");
  return out;
}

// Dense complex matrix (row-major) in the same header+payload framing.
inline void save_dense_matrix(const std::string& path, int rows, int cols,
                              const std::vector<cplx>& a) {
  if (a.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("save_dense_matrix: size mismatch");
  json h = {{"type", "dense_matrix"}, {"rows", rows}, {"cols", cols}};
  detail::write_header_and_payload(path, std::move(h), detail::interleave(a));
}

inline std::vector<cplx> load_dense_matrix(const std::string& path, int& rows, int& cols) {
  std::vector<double> d;
  json h = detail::read_header_and_payload(path, d);
  if (h.at("type") != "dense_matrix") throw std::runtime_error("io: not a dense_matrix: " + path);
  rows = h.at("rows").get<int>();
  cols = h.at("cols").get<int>();
  std::vector<cplx> a = detail::deinterleave(d);
  if (a.size() != static_cast<std::size_t>(rows) * cols)
    throw std::runtime_error("io: dense_matrix payload size mismatch: " + path);
  return a;
}

inline json plan_to_json(const MeasurementPlan& plan) {
  json pts = json::array(), fnu = json::array(), atom = json::array();
  for (const Point2& p : plan.t) pts.push_back({p.x, p.y});
  for (double f : plan.fnu) fnu.push_back(f);
  for (int a : plan.atom) atom.push_back(a);
  return {{"points", std::move(pts)},
          {"fnu", std::move(fnu)},
          {"atom", std::move(atom)},
          {"seed", plan.seed},
          {"mode", plan.mode == NoiseMode::uniform ? "uniform" : "nonuniform"}};
}

inline MeasurementPlan plan_from_json(const json& j) {
  MeasurementPlan plan;
  for (const auto& p : j.at("points")) plan.t.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  for (const auto& f : j.at("fnu")) plan.fnu.push_back(f.get<double>());
  if (j.contains("atom"))
    for (const auto& a : j.at("atom")) plan.atom.push_back(a.get<int>());
  plan.seed = j.at("seed").get<std::uint64_t>();
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "uniform") plan.mode = NoiseMode::uniform;
  else if (mode == "nonuniform") plan.mode = NoiseMode::nonuniform;
  else throw std::runtime_error("plan_from_json: unknown mode " + mode);
  if (plan.fnu.size() != plan.t.size())
    throw std::runtime_error("plan_from_json: fnu/points length mismatch");
  return plan;
}

} // namespace csip
