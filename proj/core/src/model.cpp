// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include "tscale/model.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "tscale/conic.hpp"

namespace tscale {

// ---------------------------------------------------------------------------
// Polytope
// ---------------------------------------------------------------------------

Polytope Polytope::box(const Vec& lo, const Vec& hi) {
  const int n = static_cast<int>(lo.size());
  Polytope P;
  P.C = Mat::Zero(2 * n, n);
  P.d = Vec::Zero(2 * n);
  for (int i = 0; i < n; ++i) {
    P.C(2 * i, i) = 1.0;
    P.d(2 * i) = -lo(i);  // z_i - lo >= 0
    P.C(2 * i + 1, i) = -1.0;
    P.d(2 * i + 1) = hi(i);  // hi - z_i >= 0
  }
  return P;
}

// ---------------------------------------------------------------------------
// LP helpers on top of the conic solver
// ---------------------------------------------------------------------------

namespace lp {
namespace {
using conic::ConicProgram;
using conic::kScalar;
using conic::ScalarKind;
using conic::Sense;
using conic::SolveStatus;

conic::SolverSettings lp_settings() {
  conic::SolverSettings s;
  s.tol_feas = 1e-9;
  s.tol_gap = 1e-9;
  s.max_iter = 100;
  return s;
}
}  // namespace

BoxedLpResult maximize_boxed(const Mat& C, const Vec& d, const Vec& c, double box) {
  const int n = static_cast<int>(c.size());
  ConicProgram p;
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) z[i] = p.add_scalar("z" + std::to_string(i), ScalarKind::kFree);
  for (int i = 0; i < n; ++i) p.obj_add({kScalar, z[i], z[i], -c(i)});  // min -c^T z
  for (int r = 0; r < C.rows(); ++r) {
    conic::Row row;
    for (int i = 0; i < n; ++i)
      if (C(r, i) != 0) row.terms.push_back({kScalar, z[i], z[i], C(r, i)});
    row.rhs = -d(r);
    row.sense = Sense::kGe;
    row.tag = "polytope";
    p.add_row(std::move(row));
  }
  for (int i = 0; i < n; ++i) {
    p.add_row({{{kScalar, z[i], z[i], 1.0}}, -box, Sense::kGe, "box"});
    p.add_row({{{kScalar, z[i], z[i], -1.0}}, -box, Sense::kGe, "box"});
  }
  auto sol = conic::solve(p, lp_settings());
  BoxedLpResult out;
  if (sol.status == SolveStatus::kPrimalInfeasible) return out;
  if (sol.status != SolveStatus::kOptimal) throw SolveError("boxed LP did not solve to optimality");
  out.feasible = true;
  out.value = -sol.objective;
  out.z = sol.scalars.head(n);
  return out;
}

std::pair<Vec, double> chebyshev_center(const Polytope& P) {
  const int n = P.dim();
  if (P.num_rows() == 0) return {Vec::Zero(n), std::numeric_limits<double>::infinity()};
  // max t  s.t.  C z + d >= t ||C_row||, t <= 1 + |d|_max
  ConicProgram p;
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) z[i] = p.add_scalar("z" + std::to_string(i), ScalarKind::kFree);
  int t = p.add_scalar("t", ScalarKind::kFree);
  p.obj_add({kScalar, t, t, -1.0});
  const double tcap = 1.0 + P.d.cwiseAbs().maxCoeff();
  for (int r = 0; r < P.C.rows(); ++r) {
    conic::Row row;
    const double nrm = P.C.row(r).norm();
    for (int i = 0; i < n; ++i)
      if (P.C(r, i) != 0) row.terms.push_back({kScalar, z[i], z[i], P.C(r, i)});
    row.terms.push_back({kScalar, t, t, -nrm});
    row.rhs = -P.d(r);
    row.sense = Sense::kGe;
    row.tag = "ball";
    p.add_row(std::move(row));
  }
  p.add_row({{{kScalar, t, t, -1.0}}, -tcap, Sense::kGe, "tcap"});
  // Keep the center from drifting in unbounded polytopes.
  const double box = 1e7;
  for (int i = 0; i < n; ++i) {
    p.add_row({{{kScalar, z[i], z[i], 1.0}}, -box, Sense::kGe, "box"});
    p.add_row({{{kScalar, z[i], z[i], -1.0}}, -box, Sense::kGe, "box"});
  }
  auto sol = conic::solve(p, lp_settings());
  if (sol.status != SolveStatus::kOptimal) throw SolveError("Chebyshev LP did not solve");
  return {sol.scalars.head(n), -sol.objective};
}

bool intersects(const Polytope& P, const Polytope& Q) {
  const int n = P.dim();
  // max t  s.t.  C_P z + d_P >= t, C_Q z + d_Q >= t, t <= 1; nonnegative
  // optimum certifies a shared point of the closed sets.
  ConicProgram p;
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) z[i] = p.add_scalar("z" + std::to_string(i), ScalarKind::kFree);
  int t = p.add_scalar("t", ScalarKind::kFree);
  p.obj_add({kScalar, t, t, -1.0});
  auto add_rows = [&](const Polytope& poly) {
    for (int r = 0; r < poly.C.rows(); ++r) {
      conic::Row row;
      for (int i = 0; i < n; ++i)
        if (poly.C(r, i) != 0) row.terms.push_back({kScalar, z[i], z[i], poly.C(r, i)});
      row.terms.push_back({kScalar, t, t, -1.0});
      row.rhs = -poly.d(r);
      row.sense = Sense::kGe;
      row.tag = "halfspace";
      p.add_row(std::move(row));
    }
  };
  add_rows(P);
  add_rows(Q);
  p.add_row({{{kScalar, t, t, -1.0}}, -1.0, Sense::kGe, "tcap"});
  auto sol = conic::solve(p, lp_settings());
  if (sol.status != SolveStatus::kOptimal) throw SolveError("intersection LP did not solve");
  return -sol.objective >= -1e-7;
}

bool bounded(const Polytope& P, std::string* direction) {
  const int n = P.dim();
  if (P.num_rows() == 0) {
    if (direction) *direction = "+e1";
    return n == 0;
  }
  const double box = 1e7;
  for (int i = 0; i < n; ++i) {
    for (int sgn : {+1, -1}) {
      Vec c = Vec::Zero(n);
      c(i) = sgn;
      auto res = maximize_boxed(P.C, P.d, c, box);
      if (!res.feasible) return true;  // empty set is trivially bounded
      if (res.value >= 0.99 * box) {
        if (direction) *direction = std::string(sgn > 0 ? "+" : "-") + "e" + std::to_string(i + 1);
        return false;
      }
    }
  }
  return true;
}

}  // namespace lp

// ---------------------------------------------------------------------------
// Adjacency / residual / trajectory
// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> mode_adjacency(const std::vector<PwaMode>& modes) {
  std::vector<std::pair<int, int>> edges;
  const int s = static_cast<int>(modes.size());
  for (int i = 0; i < s; ++i)
    for (int j = i + 1; j < s; ++j)
      if (lp::intersects(modes[i].X, modes[j].X)) {
        edges.emplace_back(i, j);
        edges.emplace_back(j, i);
      }
  return edges;
}

double dynamics_residual(const PwaMode& mode, double h, const Vec& x, const Vec& u,
                         const Vec& x_next) {
  if (x.size() != mode.nx() || x_next.size() != mode.nx())
    throw Error("dynamics_residual: state dimension mismatch for mode '" + mode.name + "'");
  if (u.size() != mode.nu())
    throw Error("dynamics_residual: input dimension mismatch for mode '" + mode.name + "'");
  return (x_next - x - h * (mode.A * x + mode.B * u + mode.c)).cwiseAbs().maxCoeff();
}

double Trajectory::total_time() const {
  double t = 0;
  for (const auto& s : segments) t += s.h * s.u.rows();
  return t;
}

double Trajectory::cost(const OcpSpec& ocp) const {
  double c = 0;
  for (const auto& s : segments) {
    const int K = static_cast<int>(s.u.rows());
    double stage = ocp.eta * K;
    for (int k = 0; k < K; ++k) {
      stage += s.x.row(k) * ocp.Q * s.x.row(k).transpose();
      stage += s.u.row(k) * ocp.R * s.u.row(k).transpose();
    }
    c += s.h * stage;
  }
  return c;
}

double Trajectory::max_dynamics_residual(const Scenario& scenario) const {
  double worst = 0;
  for (const auto& s : segments) {
    const PwaMode& m = scenario.mode(s.mode);
    for (int k = 0; k < s.u.rows(); ++k)
      worst = std::max(worst, dynamics_residual(m, s.h, s.x.row(k), s.u.row(k), s.x.row(k + 1)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

bool ModeGraph::has_edge(const std::string& a, const std::string& b) const {
  return std::find(edges.begin(), edges.end(), std::make_pair(a, b)) != edges.end();
}

const PwaMode& Scenario::mode(const std::string& mode_name) const {
  return modes.at(mode_index(mode_name));
}

int Scenario::mode_index(const std::string& mode_name) const {
  for (size_t i = 0; i < modes.size(); ++i)
    if (modes[i].name == mode_name) return static_cast<int>(i);
  throw ScenarioError("unknown mode '" + mode_name + "'");
}

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ScenarioError(path + ": " + what);
}

double parse_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

Vec parse_vector(const json& j, int size, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  if (size >= 0 && static_cast<int>(j.size()) != size)
    fail(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(j.size()));
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i)
    v(i) = parse_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

// Row-major nested arrays; an empty outer array yields 0 x cols.
Mat parse_matrix(const json& j, int rows, int cols, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of rows");
  const int nr = static_cast<int>(j.size());
  if (rows >= 0 && nr != rows)
    fail(path, "expected " + std::to_string(rows) + " rows, got " + std::to_string(nr));
  if (nr == 0) return Mat(0, std::max(cols, 0));
  if (!j[0].is_array()) fail(path + "[0]", "expected an array (matrix row)");
  const int nc = static_cast<int>(j[0].size());
  if (cols >= 0 && nc != cols)
    fail(path, "expected " + std::to_string(cols) + " columns, got " + std::to_string(nc));
  Mat M(nr, nc);
  for (int r = 0; r < nr; ++r) {
    const std::string rp = path + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != nc) fail(rp, "ragged matrix row");
    for (int c = 0; c < nc; ++c) M(r, c) = parse_number(j[r][c], rp + "[" + std::to_string(c) + "]");
  }
  return M;
}

Polytope parse_polytope(const json& j, int dim, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object with C and d");
  Polytope P;
  P.C = parse_matrix(j.at("C"), -1, dim, path + ".C");
  P.d = parse_vector(j.at("d"), P.num_rows(), path + ".d");
  if (P.C.rows() != P.d.size()) fail(path, "C and d row counts differ");
  if (j.contains("compact")) {
    if (!j["compact"].is_boolean()) fail(path + ".compact", "expected a boolean");
    P.compact = j["compact"].get<bool>();
  }
  return P;
}

void check_psd(const Mat& M, const std::string& field) {
  if (M.rows() != M.cols()) fail(field, "must be square");
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff()))
    fail(field, "must be symmetric");
  if (M.rows() == 0) return;
  Eigen::SelfAdjointEigenSolver<Mat> eig(M, Eigen::EigenvaluesOnly);
  const double floor = -1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff());
  if (eig.eigenvalues()(0) < floor) fail(field, "not PSD");
}

}  // namespace

namespace {
Scenario validate_scenario_impl(const json& raw, const std::string& name);
}

Scenario validate_scenario(const json& raw, const std::string& name) {
  try {
    return validate_scenario_impl(raw, name);
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("malformed scenario document: ") + e.what());
  }
}

namespace {
Scenario validate_scenario_impl(const json& raw, const std::string& name) {
  if (!raw.is_object()) fail(name, "scenario document must be a JSON object");
  Scenario sc;
  sc.name = raw.value("name", name);

  if (!raw.contains("modes") || !raw["modes"].is_array() || raw["modes"].empty())
    fail("modes", "expected a non-empty array");
  if (!raw.contains("ocp")) fail("ocp", "missing");

  // ocp first: nx, nu come from boundary states and weights.
  const json& jo = raw["ocp"];
  OcpSpec ocp;
  ocp.eta = parse_number(jo.at("eta"), "ocp.eta");
  if (ocp.eta < 0) fail("ocp.eta", "must be nonnegative");
  ocp.x_start = parse_vector(jo.at("x_start"), -1, "ocp.x_start");
  const int nx = static_cast<int>(ocp.x_start.size());
  ocp.x_goal = parse_vector(jo.at("x_goal"), nx, "ocp.x_goal");
  ocp.Q = parse_matrix(jo.at("Q"), nx, nx, "ocp.Q");
  check_psd(ocp.Q, "ocp.Q");
  ocp.R = parse_matrix(jo.at("R"), -1, -1, "ocp.R");
  check_psd(ocp.R, "ocp.R");
  const int nu = static_cast<int>(ocp.R.rows());
  ocp.h_min = parse_number(jo.at("h_min"), "ocp.h_min");
  ocp.h_max = parse_number(jo.at("h_max"), "ocp.h_max");
  if (!(ocp.h_min > 0)) fail("ocp.h_min", "must be positive");
  if (!(ocp.h_min <= ocp.h_max)) fail("ocp.h_max", "must be >= h_min");
  if (jo.at("K").is_number_integer()) {
    ocp.K = jo["K"].get<int>();
  } else {
    fail("ocp.K", "expected an integer");
  }
  if (ocp.K < 1) fail("ocp.K", "must be >= 1");
  if (jo.contains("K_per_mode")) {
    if (!jo["K_per_mode"].is_object()) fail("ocp.K_per_mode", "expected an object");
    for (auto it = jo["K_per_mode"].begin(); it != jo["K_per_mode"].end(); ++it) {
      if (!it.value().is_number_integer() || it.value().get<int>() < 1)
        fail("ocp.K_per_mode." + it.key(), "must be an integer >= 1");
      ocp.K_per_mode[it.key()] = it.value().get<int>();
    }
  }
  sc.ocp = std::move(ocp);

  // modes
  std::set<std::string> names;
  for (size_t i = 0; i < raw["modes"].size(); ++i) {
    const std::string mp = "modes[" + std::to_string(i) + "]";
    const json& jm = raw["modes"][i];
    PwaMode m;
    m.name = jm.value("name", "mode" + std::to_string(i));
    if (m.name == "source" || m.name == "target") fail(mp + ".name", "'source' and 'target' are reserved");
    if (!names.insert(m.name).second) fail(mp + ".name", "duplicate mode name '" + m.name + "'");
    m.A = parse_matrix(jm.at("A"), nx, nx, mp + ".A");
    m.B = parse_matrix(jm.at("B"), nx, nu, mp + ".B");
    m.c = jm.contains("c") ? parse_vector(jm["c"], nx, mp + ".c") : Vec::Zero(nx);
    m.X = parse_polytope(jm.at("X"), nx, mp + ".X");
    m.U = parse_polytope(jm.at("U"), nu, mp + ".U");
    if (m.X.num_rows() == 0) m.X.C = Mat(0, nx);
    if (m.U.num_rows() == 0) m.U.C = Mat(0, nu);
    sc.modes.push_back(std::move(m));
  }

  // compactness certificates and Chebyshev sanity
  for (size_t i = 0; i < sc.modes.size(); ++i) {
    const std::string mp = "modes[" + std::to_string(i) + "]";
    const std::vector<std::pair<const Polytope*, std::string>> polys = {
        {&sc.modes[i].X, mp + ".X"}, {&sc.modes[i].U, mp + ".U"}};
    for (const auto& [poly, where] : polys) {
      if (poly->compact) {
        std::string dir;
        if (!lp::bounded(*poly, &dir)) fail(where, "unbounded polytope (direction " + dir + ")");
      }
      if (poly->num_rows() > 0) {
        auto [center, radius] = lp::chebyshev_center(*poly);
        if (radius < -1e-9) fail(where, "empty polytope");
        if (!poly->contains(center, 1e-6))
          fail(where, "Chebyshev center infeasible (numerical trouble)");
      }
    }
  }

  // graph
  for (const auto& m : sc.modes) sc.graph.vertices.push_back(m.name);
  const json& je = raw.contains("edges") ? raw["edges"] : json("auto");
  if (je.is_string() && je.get<std::string>() == "auto") {
    for (const auto& m : sc.modes)
      if (!m.X.compact) fail("edges", "auto adjacency requires compact state domains");
    for (auto [i, j] : mode_adjacency(sc.modes))
      sc.graph.edges.emplace_back(sc.modes[i].name, sc.modes[j].name);
  } else if (je.is_array()) {
    for (size_t e = 0; e < je.size(); ++e) {
      const std::string ep = "edges[" + std::to_string(e) + "]";
      if (!je[e].is_array() || je[e].size() != 2) fail(ep, "expected [from, to]");
      const std::string a = je[e][0].get<std::string>(), b = je[e][1].get<std::string>();
      if (!names.count(a)) fail(ep, "unknown mode '" + a + "'");
      if (!names.count(b)) fail(ep, "unknown mode '" + b + "'");
      sc.graph.edges.emplace_back(a, b);
    }
  } else {
    fail("edges", "expected \"auto\" or an array of pairs");
  }

  // virtual source/target attachment by domain membership
  for (const auto& m : sc.modes) {
    if (m.X.contains(sc.ocp.x_start, 1e-9)) sc.graph.source_out.push_back(m.name);
    if (m.X.contains(sc.ocp.x_goal, 1e-9)) sc.graph.target_in.push_back(m.name);
  }
  return sc;
}
}  // namespace

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ScenarioError("cannot parse '" + path + "': " + e.what());
  }
  std::string base = path;
  if (auto slash = base.find_last_of('/'); slash != std::string::npos) base = base.substr(slash + 1);
  if (auto dot = base.find_last_of('.'); dot != std::string::npos) base = base.substr(0, dot);
  return validate_scenario(j, base);
}

}  // namespace tscale
