// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include "tscale/refine.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>

namespace tscale::refine {

using conic::ConicProgram;
using conic::kScalar;
using conic::Row;
using conic::ScalarKind;
using conic::Sense;
using conic::Term;

conic::SolverSettings inner_settings() {
  conic::SolverSettings s;
  s.tol_feas = 1e-9;
  s.tol_gap = 1e-9;
  s.max_iter = 150;
  return s;
}

namespace {

Mat symmetric_sqrt(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(M);
  Vec lam = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

InnerResult inner_convex(const Scenario& scenario, const std::vector<std::string>& path,
                         const std::vector<double>& h, const conic::SolverSettings& settings) {
  if (path.empty() || path.size() != h.size())
    throw Error("inner_convex: path and time-step vector sizes differ");
  const int nx = scenario.nx(), nu = scenario.nu();
  const OcpSpec& ocp = scenario.ocp;
  for (double hn : h)
    if (!(hn >= ocp.h_min - 1e-12 && hn <= ocp.h_max + 1e-12))
      throw Error("inner_convex: time step outside [h_min, h_max]");

  // Knot states are shared across segment boundaries.
  std::vector<int> seg_K;
  int total_K = 0;
  for (const auto& name : path) {
    seg_K.push_back(ocp.steps_for(name));
    total_K += seg_K.back();
  }
  const int n_knots = total_K + 1;

  ConicProgram p;
  std::vector<int> xv(n_knots * nx), uv(total_K * nu);
  for (int i = 0; i < n_knots * nx; ++i) xv[i] = p.add_scalar("x" + std::to_string(i), ScalarKind::kFree);
  for (int i = 0; i < total_K * nu; ++i) uv[i] = p.add_scalar("u" + std::to_string(i), ScalarKind::kFree);

  double fixed_cost = 0;
  const bool has_q = ocp.Q.size() > 0 && ocp.Q.cwiseAbs().maxCoeff() > 0;
  const bool has_r = ocp.R.size() > 0 && ocp.R.cwiseAbs().maxCoeff() > 0;
  const Mat Lq = has_q ? symmetric_sqrt(ocp.Q) : Mat();
  const Mat Lr = has_r ? symmetric_sqrt(ocp.R) : Mat();

  // Quadratic stage costs through epigraph blocks [[t, v^T], [v, I]].
  auto add_epigraph = [&](const Mat& L, const std::vector<int>& vars, int offset, int dim,
                          double weight) {
    const int blk = p.add_block("cost" + std::to_string(p.num_blocks()), dim + 1);
    for (int i = 0; i < dim; ++i) {
      Row tie;
      tie.terms.push_back({blk, 0, 1 + i, 1.0});
      for (int j = 0; j < dim; ++j)
        if (L(i, j) != 0) tie.terms.push_back({kScalar, vars[offset + j], 0, -L(i, j)});
      tie.rhs = 0;
      tie.sense = Sense::kEq;
      tie.tag = "cost_tie";
      p.add_row(std::move(tie));
      for (int j = i; j < dim; ++j)
        p.add_row({{{blk, 1 + i, 1 + j, 1.0}}, i == j ? 1.0 : 0.0, Sense::kEq, "cost_eye"});
    }
    p.obj_add({blk, 0, 0, weight});
  };

  int knot = 0, step = 0;
  for (size_t n = 0; n < path.size(); ++n) {
    const PwaMode& mode = scenario.mode(path[n]);
    const double hn = h[n];
    fixed_cost += ocp.eta * seg_K[n] * hn;
    for (int k = 0; k < seg_K[n]; ++k, ++step) {
      const int x0 = knot + k, x1 = knot + k + 1;
      // Euler rows: x1 - x0 - hn (A x0 + B u + c) = 0
      for (int i = 0; i < nx; ++i) {
        Row dyn;
        dyn.terms.push_back({kScalar, xv[x1 * nx + i], 0, 1.0});
        dyn.terms.push_back({kScalar, xv[x0 * nx + i], 0, -1.0});
        for (int j = 0; j < nx; ++j)
          if (mode.A(i, j) != 0) dyn.terms.push_back({kScalar, xv[x0 * nx + j], 0, -hn * mode.A(i, j)});
        for (int j = 0; j < nu; ++j)
          if (mode.B(i, j) != 0) dyn.terms.push_back({kScalar, uv[step * nu + j], 0, -hn * mode.B(i, j)});
        dyn.rhs = hn * mode.c(i);
        dyn.sense = Sense::kEq;
        dyn.tag = "euler";
        p.add_row(std::move(dyn));
      }
      // domain rows for the in-segment knots and inputs
      for (int rx = 0; rx < mode.X.num_rows(); ++rx) {
        Row dom;
        for (int i = 0; i < nx; ++i)
          if (mode.X.C(rx, i) != 0) dom.terms.push_back({kScalar, xv[x0 * nx + i], 0, mode.X.C(rx, i)});
        dom.rhs = -mode.X.d(rx);
        dom.sense = Sense::kGe;
        dom.tag = "state_domain";
        p.add_row(std::move(dom));
      }
      for (int ru = 0; ru < mode.U.num_rows(); ++ru) {
        Row dom;
        for (int j = 0; j < nu; ++j)
          if (mode.U.C(ru, j) != 0) dom.terms.push_back({kScalar, uv[step * nu + j], 0, mode.U.C(ru, j)});
        dom.rhs = -mode.U.d(ru);
        dom.sense = Sense::kGe;
        dom.tag = "input_domain";
        p.add_row(std::move(dom));
      }
      if (has_q) add_epigraph(Lq, xv, x0 * nx, nx, hn);
      if (has_r) add_epigraph(Lr, uv, step * nu, nu, hn);
    }
    knot += seg_K[n];
  }
  // boundary pins
  for (int i = 0; i < nx; ++i) {
    p.add_row({{{kScalar, xv[i], 0, 1.0}}, ocp.x_start(i), Sense::kEq, "pin_start"});
    p.add_row({{{kScalar, xv[(n_knots - 1) * nx + i], 0, 1.0}}, ocp.x_goal(i), Sense::kEq, "pin_goal"});
  }
  p.obj_add_constant(fixed_cost);

  auto sol = conic::solve(p, settings);
  InnerResult out;
  if (sol.status == conic::SolveStatus::kPrimalInfeasible) return out;
  if (sol.status != conic::SolveStatus::kOptimal && !sol.near_optimal(1e-7, 1e-6)) return out;

  out.feasible = true;
  out.cost = sol.objective;
  int k0 = 0;
  knot = 0;
  for (size_t n = 0; n < path.size(); ++n) {
    Trajectory::Segment seg;
    seg.mode = path[n];
    seg.h = h[n];
    seg.x.resize(seg_K[n] + 1, nx);
    seg.u.resize(seg_K[n], nu);
    for (int k = 0; k <= seg_K[n]; ++k)
      for (int i = 0; i < nx; ++i) seg.x(k, i) = sol.scalars(xv[(knot + k) * nx + i]);
    for (int k = 0; k < seg_K[n]; ++k)
      for (int j = 0; j < nu; ++j) seg.u(k, j) = sol.scalars(uv[(k0 + k) * nu + j]);
    out.trajectory.segments.push_back(std::move(seg));
    knot += seg_K[n];
    k0 += seg_K[n];
  }
  return out;
}

double relaxation_gap(double c_refined, double c_relaxation) {
  if (!(c_refined > 0)) throw Error("relaxation_gap: refined cost must be positive");
  const double delta = (c_refined - c_relaxation) / c_refined;
  if (delta < -1e-6)
    throw LowerBoundViolation("relaxation gap " + std::to_string(delta) +
                              ": refined cost undercuts the relaxation bound");
  return delta;
}

namespace {

// Memoized inner evaluation: infeasible points count as +inf.
class InnerEval {
 public:
  InnerEval(const Scenario& sc, const std::vector<std::string>& path,
            const conic::SolverSettings& settings)
      : sc_(sc), path_(path), settings_(settings) {}

  const InnerResult& operator()(const std::vector<double>& h) {
    std::vector<long long> key(h.size());
    for (size_t i = 0; i < h.size(); ++i) key[i] = llround(h[i] * 1e12);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(std::move(key), inner_convex(sc_, path_, h, settings_)).first->second;
  }

  int evaluations() const { return static_cast<int>(cache_.size()); }

 private:
  const Scenario& sc_;
  const std::vector<std::string>& path_;
  conic::SolverSettings settings_;
  std::map<std::vector<long long>, InnerResult> cache_;
};

}  // namespace

GapReport refine(const Scenario& scenario, const std::vector<std::string>& path,
                 const std::vector<double>& h_init, double lower_bound,
                 const RefineOptions& options) {
  const OcpSpec& ocp = scenario.ocp;
  const size_t N = path.size();
  if (h_init.size() != N) throw Error("refine: initial time steps do not match the path");

  std::vector<double> h(N);
  for (size_t n = 0; n < N; ++n) h[n] = std::clamp(h_init[n], ocp.h_min, ocp.h_max);

  InnerEval eval(scenario, path, options.inner);
  GapReport report;
  report.path = path;
  report.lower_bound = lower_bound;

  InnerResult incumbent = eval(h);
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);

  for (int pass = 0; pass < options.max_passes; ++pass) {
    double moved = 0;
    for (size_t n = 0; n < N; ++n) {
      // Coarse bracket over the window (always includes the incumbent value),
      // then golden-section inside the best bracket.
      std::vector<double> grid;
      for (int g = 0; g < options.coarse_points; ++g)
        grid.push_back(ocp.h_min + (ocp.h_max - ocp.h_min) * g / (options.coarse_points - 1.0));
      grid.push_back(h[n]);
      std::sort(grid.begin(), grid.end());

      double best_t = h[n];
      double best_cost = incumbent.feasible ? incumbent.cost
                                            : std::numeric_limits<double>::infinity();
      std::vector<double> trial = h;
      auto probe = [&](double t) {
        trial[n] = t;
        const InnerResult& res = eval(trial);
        const double c = res.feasible ? res.cost : std::numeric_limits<double>::infinity();
        if (c < best_cost) {
          best_cost = c;
          best_t = t;
        }
        return c;
      };
      std::vector<double> costs;
      costs.reserve(grid.size());
      for (double t : grid) costs.push_back(probe(t));

      // bracket around the best grid point
      size_t bi = std::min_element(costs.begin(), costs.end()) - costs.begin();
      double lo = grid[bi == 0 ? 0 : bi - 1];
      double hi = grid[std::min(grid.size() - 1, bi + 1)];
      double a = lo, b = hi;
      double t1 = b - golden * (b - a), t2 = a + golden * (b - a);
      double f1 = probe(t1), f2 = probe(t2);
      for (int it = 0; it < 40 && (b - a) > options.outer_tol; ++it) {
        if (f1 <= f2) {
          b = t2;
          t2 = t1;
          f2 = f1;
          t1 = b - golden * (b - a);
          f1 = probe(t1);
        } else {
          a = t1;
          t1 = t2;
          f1 = f2;
          t2 = a + golden * (b - a);
          f2 = probe(t2);
        }
      }

      if (best_cost < (incumbent.feasible ? incumbent.cost : std::numeric_limits<double>::infinity()) -
                          1e-12) {
        moved = std::max(moved, std::abs(best_t - h[n]));
        h[n] = best_t;
        trial[n] = best_t;
        incumbent = eval(trial);
      }
    }
    if (moved < options.outer_tol) break;
  }

  report.h = h;
  if (!incumbent.feasible) return report;  // refined cost stays +inf, delta undefined

  report.refined = true;
  report.refined_cost = incumbent.cost;
  report.trajectory = incumbent.trajectory;
  report.dynamics_residual = incumbent.trajectory.max_dynamics_residual(scenario);
  if (std::isfinite(lower_bound)) report.delta = relaxation_gap(incumbent.cost, lower_bound);
  return report;
}

}  // namespace tscale::refine
