// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <string>
#include <vector>

#include "tscale/conic.hpp"
#include "tscale/model.hpp"

namespace tscale::refine {

struct InnerResult {
  bool feasible = false;
  double cost = std::numeric_limits<double>::infinity();
  Trajectory trajectory;
};

conic::SolverSettings inner_settings();

/// Convex inner problem: optimal states and inputs for a fixed mode sequence
/// and fixed per-segment time steps.  Euler rows enter as hard equalities, so
/// a feasible result is dynamically consistent to solver accuracy.
InnerResult inner_convex(const Scenario& scenario, const std::vector<std::string>& path,
                         const std::vector<double>& h,
                         const conic::SolverSettings& settings = inner_settings());

/// Relaxation gap (refined minus bound over refined).  Throws on a
/// nonpositive refined cost; a gap below -1e-6 means the relaxation or the
/// solver is unsound and raises LowerBoundViolation.
double relaxation_gap(double c_refined, double c_relaxation);

struct GapReport {
  double lower_bound = std::numeric_limits<double>::quiet_NaN();
  double refined_cost = std::numeric_limits<double>::infinity();
  double delta = std::numeric_limits<double>::quiet_NaN();
  bool refined = false;
  double rank_ratio = std::numeric_limits<double>::quiet_NaN();  // filled by the pipeline
  double dynamics_residual = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> path;
  std::vector<double> h;
  Trajectory trajectory;
};

struct RefineOptions {
  double outer_tol = 1e-6;  // convergence threshold on the time-step moves
  int max_passes = 12;
  int coarse_points = 9;  // bracketing grid per coordinate line search
  conic::SolverSettings inner = inner_settings();
};

/// Outer derivative-free search over the per-segment time steps (coordinate
/// golden-section descent from the initial guess; the same sweeps act as a
/// compass pattern search for longer sequences), solving the convex inner
/// problem at every iterate.  Never worsens the incumbent.
GapReport refine(const Scenario& scenario, const std::vector<std::string>& path,
                 const std::vector<double>& h_init, double lower_bound,
                 const RefineOptions& options = {});

}  // namespace tscale::refine
