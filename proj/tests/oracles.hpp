// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Independent test oracles.  These deliberately re-transcribe the problems
// from scratch (no reuse of the relaxation or refinement builders) so that
// the implementation path under test is checked against a second route.
#pragma once

#include <limits>

#include "tscale/conic.hpp"
#include "tscale/model.hpp"

namespace tscale::testing {

/// Feasibility of the fixed-h discrete reachability problem for a single
/// mode: exists u_0..u_{K-1} with the Euler chain from x_start hitting x_goal
/// while every knot and input stays in its domain.
inline bool reachable_at(const Scenario& sc, int K, double h) {
  const PwaMode& m = sc.modes.at(0);
  const int nx = m.nx(), nu = m.nu();
  conic::ConicProgram p;
  std::vector<int> u(K * nu), x((K + 1) * nx);
  for (int i = 0; i < K * nu; ++i) u[i] = p.add_scalar("u", conic::ScalarKind::kFree);
  for (int i = 0; i < (K + 1) * nx; ++i) x[i] = p.add_scalar("x", conic::ScalarKind::kFree);
  auto xvar = [&](int k, int i) { return x[k * nx + i]; };
  auto uvar = [&](int k, int j) { return u[k * nu + j]; };
  for (int i = 0; i < nx; ++i) {
    p.add_row({{{conic::kScalar, xvar(0, i), 0, 1.0}}, sc.ocp.x_start(i), conic::Sense::kEq, "x0"});
    p.add_row({{{conic::kScalar, xvar(K, i), 0, 1.0}}, sc.ocp.x_goal(i), conic::Sense::kEq, "xK"});
  }
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < nx; ++i) {
      conic::Row r;
      r.terms.push_back({conic::kScalar, xvar(k + 1, i), 0, 1.0});
      r.terms.push_back({conic::kScalar, xvar(k, i), 0, -1.0});
      for (int j = 0; j < nx; ++j)
        if (m.A(i, j) != 0) r.terms.push_back({conic::kScalar, xvar(k, j), 0, -h * m.A(i, j)});
      for (int j = 0; j < nu; ++j)
        if (m.B(i, j) != 0) r.terms.push_back({conic::kScalar, uvar(k, j), 0, -h * m.B(i, j)});
      r.rhs = h * m.c(i);
      r.sense = conic::Sense::kEq;
      r.tag = "chain";
      p.add_row(std::move(r));
    }
  for (int k = 0; k < K; ++k) {
    for (int rx = 0; rx < m.X.num_rows(); ++rx) {
      conic::Row r;
      for (int i = 0; i < nx; ++i)
        if (m.X.C(rx, i) != 0) r.terms.push_back({conic::kScalar, xvar(k, i), 0, m.X.C(rx, i)});
      r.rhs = -m.X.d(rx);
      r.sense = conic::Sense::kGe;
      r.tag = "X";
      p.add_row(std::move(r));
    }
    for (int ru = 0; ru < m.U.num_rows(); ++ru) {
      conic::Row r;
      for (int j = 0; j < nu; ++j)
        if (m.U.C(ru, j) != 0) r.terms.push_back({conic::kScalar, uvar(k, j), 0, m.U.C(ru, j)});
      r.rhs = -m.U.d(ru);
      r.sense = conic::Sense::kGe;
      r.tag = "U";
      p.add_row(std::move(r));
    }
  }
  conic::SolverSettings st;
  st.tol_feas = 1e-9;
  st.tol_gap = 1e-9;
  auto sol = conic::solve(p, st);
  return sol.status == conic::SolveStatus::kOptimal;
}

/// Grid search over h plus bisection on the reachability LP: the shortest
/// horizon K*h with the goal reachable, up to the stated h-resolution.
inline double min_time_oracle(const Scenario& sc, int K, double resolution = 1e-6) {
  const double lo = sc.ocp.h_min, hi = sc.ocp.h_max;
  const int grid = 64;
  double h_feas = std::numeric_limits<double>::quiet_NaN();
  double h_infeas = lo;
  for (int g = 0; g <= grid; ++g) {
    const double h = lo + (hi - lo) * g / grid;
    if (reachable_at(sc, K, h)) {
      h_feas = h;
      break;
    }
    h_infeas = h;
  }
  if (!std::isfinite(h_feas)) return std::numeric_limits<double>::infinity();
  while (h_feas - h_infeas > resolution) {
    const double mid = 0.5 * (h_feas + h_infeas);
    (reachable_at(sc, K, mid) ? h_feas : h_infeas) = mid;
  }
  return K * h_feas;
}

}  // namespace tscale::testing
