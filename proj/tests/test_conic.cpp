// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "tscale/conic.hpp"

using namespace tscale;
using namespace tscale::conic;

namespace {
ConicSolution solve_checked(const ConicProgram& p, SolverSettings s = {}) {
  ConicSolution sol = solve(p, s);
  REQUIRE(sol.status == SolveStatus::kOptimal);
  return sol;
}
}  // namespace

TEST_CASE("minimal trace SDP has the analytic optimum") {
  ConicProgram p;
  int X = p.add_block("X", 2);
  p.obj_add({X, 0, 0, 1.0});
  p.obj_add({X, 1, 1, 1.0});
  p.add_row({{{X, 0, 0, 1.0}}, 1.0, Sense::kEq, "pin"});
  auto sol = solve_checked(p);
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.blocks[X](1, 1) == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("standard relaxation of min z^2 subject to z >= 1") {
  // X relaxes (1, z)(1, z)^T: minimize X[1,1] with X[0,0] = 1, X[0,1] >= 1,
  // and the squared row (z - 1)^2 >= 0.
  ConicProgram p;
  int X = p.add_block("X", 2);
  p.obj_add({X, 1, 1, 1.0});
  p.add_row({{{X, 0, 0, 1.0}}, 1.0, Sense::kEq, "normalize"});
  p.add_row({{{X, 0, 1, 1.0}, {X, 0, 0, -1.0}}, 0.0, Sense::kGe, "z_lower"});
  p.add_row({{{X, 1, 1, 1.0}, {X, 0, 1, -2.0}, {X, 0, 0, 1.0}}, 0.0, Sense::kGe, "z_lower_sq"});
  auto sol = solve_checked(p);
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-6));
  Eigen::SelfAdjointEigenSolver<Mat> eig(sol.blocks[X], Eigen::EigenvaluesOnly);
  CHECK(eig.eigenvalues()(0) / eig.eigenvalues()(1) <= 1e-6);  // rank one
}

TEST_CASE("trivially inconsistent rows report primal infeasibility") {
  ConicProgram p;
  int X = p.add_block("X", 1);
  p.obj_add({X, 0, 0, 1.0});
  p.add_row({{}, 1.0, Sense::kEq, "impossible"});
  auto sol = solve(p);
  CHECK(sol.status == SolveStatus::kPrimalInfeasible);
}

TEST_CASE("conflicting scalar bounds report primal infeasibility") {
  ConicProgram p;
  int w = p.add_scalar("w", ScalarKind::kNonneg);
  p.obj_add({kScalar, w, w, 1.0});
  p.add_row({{{kScalar, w, w, 1.0}}, 1.0, Sense::kGe, "lower"});
  p.add_row({{{kScalar, w, w, -1.0}}, -0.5, Sense::kGe, "upper"});  // w <= 0.5
  auto sol = solve(p);
  CHECK(sol.status == SolveStatus::kPrimalInfeasible);
}

TEST_CASE("an unbounded objective reports dual infeasibility") {
  ConicProgram p;
  int w = p.add_scalar("w", ScalarKind::kNonneg);
  int v = p.add_scalar("v", ScalarKind::kNonneg);
  p.obj_add({kScalar, w, w, -1.0});
  p.add_row({{{kScalar, v, v, 1.0}}, 1.0, Sense::kEq, "pin"});
  auto sol = solve(p);
  CHECK(sol.status == SolveStatus::kDualInfeasible);
}

TEST_CASE("free variables and inequalities combine") {
  // minimize w subject to f1 + f2 = 3, f1 - f2 = 1, w >= f1.
  ConicProgram p;
  int w = p.add_scalar("w", ScalarKind::kNonneg);
  int f1 = p.add_scalar("f1", ScalarKind::kFree);
  int f2 = p.add_scalar("f2", ScalarKind::kFree);
  p.obj_add({kScalar, w, w, 1.0});
  p.add_row({{{kScalar, f1, f1, 1.0}, {kScalar, f2, f2, 1.0}}, 3.0, Sense::kEq, "sum"});
  p.add_row({{{kScalar, f1, f1, 1.0}, {kScalar, f2, f2, -1.0}}, 1.0, Sense::kEq, "diff"});
  p.add_row({{{kScalar, w, w, 1.0}, {kScalar, f1, f1, -1.0}}, 0.0, Sense::kGe, "dominate"});
  auto sol = solve_checked(p);
  CHECK(sol.objective == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(sol.scalars(f1) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(sol.scalars(f2) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("randomly generated SDPs with known optima solve to tolerance") {
  std::mt19937 rng(42);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 8; ++trial) {
    const int d = 3 + trial % 3;
    const int m = 2 + trial % 4;
    // Optimal pair with complementary spectra sharing an eigenbasis.
    Mat B = Mat::NullaryExpr(d, d, [&](int, int) { return g(rng); });
    Eigen::SelfAdjointEigenSolver<Mat> eig(B + B.transpose());
    Mat U = eig.eigenvectors();
    Vec lx = Vec::Zero(d), lz = Vec::Zero(d);
    for (int i = 0; i < d; ++i)
      (i < d / 2 ? lx : lz)(i) = 0.5 + std::abs(g(rng));
    Mat Xstar = U * lx.asDiagonal() * U.transpose();
    Mat Zstar = U * lz.asDiagonal() * U.transpose();
    Vec ystar = Vec::NullaryExpr(m, [&](int) { return g(rng); });

    std::vector<Mat> A(m);
    for (int p = 0; p < m; ++p) {
      Mat R = Mat::NullaryExpr(d, d, [&](int, int) { return g(rng); });
      A[p] = 0.5 * (R + R.transpose());
    }
    Mat C = Zstar;
    for (int p = 0; p < m; ++p) C += ystar(p) * A[p];

    ConicProgram prog;
    int X = prog.add_block("X", d);
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        const double cc = (i == j) ? C(i, i) : 2 * C(i, j);
        if (cc != 0) prog.obj_add({X, i, j, cc});
      }
    for (int p = 0; p < m; ++p) {
      Row row;
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
          const double cc = (i == j) ? A[p](i, i) : 2 * A[p](i, j);
          if (cc != 0) row.terms.push_back({X, i, j, cc});
        }
      row.rhs = A[p].cwiseProduct(Xstar).sum();
      row.sense = Sense::kEq;
      row.tag = "data";
      prog.add_row(std::move(row));
    }
    auto sol = solve_checked(prog);
    const double expect = C.cwiseProduct(Xstar).sum();
    CHECK(sol.objective == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("verification recomputes residuals independently") {
  ConicProgram p;
  int X = p.add_block("X", 2);
  p.obj_add({X, 0, 0, 1.0});
  p.add_row({{{X, 0, 0, 1.0}, {X, 1, 1, 1.0}}, 2.0, Sense::kEq, "trace"});
  p.add_row({{{X, 0, 1, 1.0}}, 0.0, Sense::kGe, "offdiag"});
  auto sol = solve_checked(p);
  auto rep = verify_feasibility(p, sol, 1e-9);
  CHECK(rep.max_violation <= 1e-6);

  // Perturb one entry: the trace row must get flagged.
  ConicSolution bad = sol;
  bad.blocks[X](0, 0) += 1e-3;
  auto rep2 = verify_feasibility(p, bad, 1e-6);
  CHECK(rep2.max_violation >= 0.9e-3);
  REQUIRE(!rep2.worst.empty());
  CHECK(rep2.worst[0].tag == "trace");
}

TEST_CASE("verification of an empty program is an empty report") {
  ConicProgram p;
  ConicSolution sol;
  sol.scalars = Vec();
  auto rep = verify_feasibility(p, sol, 1e-9);
  CHECK(rep.max_violation == 0.0);
  CHECK(rep.worst.empty());
}

TEST_CASE("solves are deterministic") {
  ConicProgram p;
  int X = p.add_block("X", 3);
  p.obj_add({X, 0, 0, 1.0});
  p.obj_add({X, 1, 1, 2.0});
  p.obj_add({X, 2, 2, 0.5});
  p.add_row({{{X, 0, 1, 1.0}, {X, 2, 2, 1.0}}, 1.0, Sense::kEq, "a"});
  p.add_row({{{X, 0, 2, 1.0}}, 0.25, Sense::kGe, "b"});
  auto s1 = solve(p);
  auto s2 = solve(p);
  CHECK(s1.objective == s2.objective);
  CHECK(s1.stats.iterations == s2.stats.iterations);
}

TEST_CASE("solution residuals stay within ten times the solver tolerance") {
  ConicProgram p;
  int X = p.add_block("X", 4);
  int w = p.add_scalar("w", ScalarKind::kNonneg);
  p.obj_add({X, 0, 0, 1.0});
  p.obj_add({kScalar, w, w, 3.0});
  p.add_row({{{X, 0, 0, 1.0}, {X, 1, 2, 2.0}, {kScalar, w, w, 1.0}}, 1.5, Sense::kEq, "mix"});
  p.add_row({{{X, 3, 3, 1.0}, {kScalar, w, w, -1.0}}, 0.2, Sense::kGe, "ge"});
  SolverSettings st;
  auto sol = solve_checked(p, st);
  auto rep = verify_feasibility(p, sol, 0.0);
  CHECK(rep.max_violation <= 10 * st.tol_feas + 10 * st.tol_gap);
}
