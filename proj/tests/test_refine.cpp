// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "test_scenarios.hpp"
#include "tscale/refine.hpp"
#include "tscale/relax.hpp"

using namespace tscale;
using namespace tscale::refine;

TEST_CASE("relaxation gap formula and its guards") {
  CHECK(relaxation_gap(2.0, 1.9) == doctest::Approx(0.05));
  CHECK(relaxation_gap(3.7, 3.7) == 0.0);
  CHECK_THROWS_AS(relaxation_gap(1.0, 1.1), LowerBoundViolation);
  CHECK_THROWS_AS(relaxation_gap(0.0, -1.0), Error);
  CHECK_THROWS_AS(relaxation_gap(-2.0, -3.0), Error);
}

TEST_CASE("inner problem solves the double integrator at a feasible h") {
  Scenario sc = testing::double_integrator(8);
  auto res = inner_convex(sc, {"free"}, {0.25});
  REQUIRE(res.feasible);
  CHECK(res.cost == doctest::Approx(8 * 0.25).epsilon(1e-7));  // eta-only cost
  CHECK(res.trajectory.max_dynamics_residual(sc) <= 1e-8);
  // all input rows respected to tolerance
  for (int k = 0; k < 8; ++k) CHECK(std::abs(res.trajectory.segments[0].u(k, 0)) <= 1.0 + 1e-8);
}

TEST_CASE("inner problem reports infeasibility below the minimum travel time") {
  Scenario sc = testing::double_integrator(8);
  // K h^2 * 9 >= 1 needs h >= 1/3; h = 0.1 cannot reach the goal
  auto res = inner_convex(sc, {"free"}, {0.1});
  CHECK(!res.feasible);
  CHECK(std::isinf(res.cost));
}

TEST_CASE("zero-length task costs exactly the dwell time") {
  auto j = testing::double_integrator_json(5);
  j["ocp"]["x_goal"] = {1.0, 0.0};  // stay at the start
  Scenario sc = validate_scenario(j);
  auto res = inner_convex(sc, {"free"}, {0.3});
  REQUIRE(res.feasible);
  CHECK(res.cost == doctest::Approx(5 * 0.3).epsilon(1e-9));
  CHECK(res.trajectory.segments[0].u.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("refinement from the optimum stays put") {
  Scenario sc = testing::double_integrator(6);
  const double h_star = 1.0 / 3.0;
  auto base = inner_convex(sc, {"free"}, {h_star});
  REQUIRE(base.feasible);
  auto report = refine::refine(sc, {"free"}, {h_star}, base.cost);
  CHECK(report.refined);
  CHECK(report.refined_cost <= base.cost + 1e-9);
  CHECK(report.delta >= -1e-6);
  CHECK(report.delta <= 1e-6);
}

TEST_CASE("refined minimum time tracks the grid-search oracle") {
  Scenario sc = testing::double_integrator(8);
  const double oracle_time = testing::min_time_oracle(sc, 8);
  REQUIRE(std::isfinite(oracle_time));
  // The discrete minimum time is within discretization error of the
  // continuous bang-bang optimum T* = 2.
  CHECK(oracle_time == doctest::Approx(2.0).epsilon(0.15));

  auto report = refine::refine(sc, {"free"}, {0.4}, std::numeric_limits<double>::quiet_NaN());
  REQUIRE(report.refined);
  const double refined_time = report.h[0] * 8;
  CHECK(refined_time <= oracle_time * 1.05);
  CHECK(refined_time >= oracle_time * 0.95);
  CHECK(report.dynamics_residual <= 1e-8);
}

TEST_CASE("refinement is monotone in the incumbent") {
  Scenario sc = testing::double_integrator(8);
  std::vector<double> h0 = {0.45};
  auto first = inner_convex(sc, {"free"}, h0);
  REQUIRE(first.feasible);
  auto report = refine::refine(sc, {"free"}, h0, std::numeric_limits<double>::quiet_NaN());
  CHECK(report.refined_cost <= first.cost + 1e-12);
}

TEST_CASE("refinement reports failure when no feasible h exists") {
  auto j = testing::double_integrator_json(4, 0.02, 0.05);  // window too small to reach
  Scenario sc = validate_scenario(j);
  auto report = refine::refine(sc, {"free"}, {0.03}, std::numeric_limits<double>::quiet_NaN());
  CHECK(!report.refined);
  CHECK(std::isinf(report.refined_cost));
  CHECK(std::isnan(report.delta));
}

TEST_CASE("dense relaxation, certification and refinement close the loop") {
  Scenario sc = testing::double_integrator(6);
  auto abs = relax::abstractify(sc.modes[0], sc.ocp);
  auto built = relax::build_dense_tfr(abs);
  auto sol = conic::solve(built.program);
  REQUIRE(sol.near_optimal());
  auto cert = relax::certify_rank_one(built, sol);
  CHECK(cert.certified);
  CHECK(cert.rank_ratio <= 1e-3);

  const double lb = sol.certified_lower_bound();
  auto report = refine::refine(sc, {"free"}, {cert.extraction.h}, lb);
  REQUIRE(report.refined);
  CHECK(report.delta >= -1e-6);
  CHECK(report.delta <= 0.01);  // the relaxation is (numerically) exact here
}
