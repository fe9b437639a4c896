// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "tscale/lift.hpp"

using namespace tscale;
using namespace tscale::lift;

TEST_CASE("monomial products cap the degree at two") {
  auto m = Monomial::var(0).times(Monomial::var(3));
  REQUIRE(m.has_value());
  CHECK(m->r[0] == 0);
  CHECK(m->r[1] == 3);
  CHECK(!m->times(Monomial::var(1)).has_value());
  auto hh = Monomial::h(1).times(Monomial::h(1));
  REQUIRE(hh.has_value());
  CHECK(hh->ha == 2);
}

TEST_CASE("classify covers the nine representable kinds and rejects the rest") {
  CHECK(classify(Monomial::one())->kind == MonomialKind::kConst);
  CHECK(classify(Monomial::h(1))->kind == MonomialKind::kH);
  CHECK(classify(Monomial::h(-1))->kind == MonomialKind::kInvH);
  CHECK(classify(Monomial::var(2))->kind == MonomialKind::kR);
  CHECK(classify(Monomial::h_var(2))->kind == MonomialKind::kHR);
  CHECK(classify(Monomial::var_over_h(2))->kind == MonomialKind::kROverH);
  CHECK(classify(Monomial{0, 0, {1, 4}})->kind == MonomialKind::kRR);
  CHECK(classify(Monomial{1, 0, {1, 1}})->kind == MonomialKind::kHRR);
  CHECK(classify(Monomial{-1, 0, {0, 2}})->kind == MonomialKind::kRROverH);
  CHECK(!classify(Monomial::h(2)).has_value());        // h^2
  CHECK(!classify(Monomial::h(-2)).has_value());       // 1/h^2
  CHECK(!classify(Monomial{2, 0, {1, -1}}).has_value());  // h^2 r_i
  CHECK(!classify(Monomial::h_next(1)).has_value());   // successor time step
}

TEST_CASE("time-flexible layout maps the canonical entries") {
  const int n = 3;
  LiftLayout L(n);
  CHECK(L.dim() == 2 * n + 2);

  CHECK(L.entry_of(MonomialRef::make(MonomialKind::kH)) == Entry{1, 1});
  CHECK(L.entry_of(MonomialRef::make(MonomialKind::kConst)) == Entry{0, 1});
  CHECK(L.entry_of(MonomialRef::make(MonomialKind::kInvH)) == Entry{0, 0});
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j)
      CHECK(L.entry_of(MonomialRef::make(MonomialKind::kRROverH, i, j)) == Entry{2 + i, 2 + j});

  CHECK_THROWS_AS(L.entry_of(Monomial::h(2)), NonRepresentableError);
  CHECK_THROWS_AS(L.entry_of(Monomial::h(-2)), NonRepresentableError);
  CHECK_THROWS_AS(L.entry_of(Monomial{2, 0, {0, -1}}), NonRepresentableError);
}

TEST_CASE("every entry monomial maps back to its canonical entry") {
  LiftLayout L(4);
  const auto& B = L.block();
  for (int a = 0; a < B.dim(); ++a)
    for (int b = a; b < B.dim(); ++b) {
      Monomial m = B.monomial_at(a, b);
      auto ref = classify(m);
      REQUIRE(ref.has_value());
      Entry canon = B.entry_of(m);
      // canonical entry has the lexicographically smallest position
      CHECK((canon.a < a || (canon.a == a && canon.b <= b)));
    }
}

TEST_CASE("alias ties bind exactly the duplicated monomials") {
  const int n = 5;
  LiftLayout L(n);
  // r_i appears twice, r_i r_j (i<j) appears twice; everything else is unique.
  const int expected = n + n * (n - 1) / 2;
  CHECK(static_cast<int>(L.block().alias_ties().size()) == expected);
  for (const auto& [canon, dup] : L.block().alias_ties())
    CHECK(L.block().monomial_at(canon.a, canon.b) == L.block().monomial_at(dup.a, dup.b));
}

TEST_CASE("lift_point matches the direct definition") {
  Vec r(2);
  r << 1, -1;
  Mat Y = lift_point(2.0, r);
  CHECK(Y(0, 0) == doctest::Approx(0.5));
  CHECK(Y(1, 1) == doctest::Approx(2.0));
  CHECK(Y(1, 2) == doctest::Approx(1.0));
  CHECK(Y(1, 3) == doctest::Approx(-1.0));
  CHECK(Y(2, 2) == doctest::Approx(0.5));
  CHECK(Y(0, 1) == doctest::Approx(1.0));

  Mat Y1 = lift_point(1.0, Vec::Zero(2));
  CHECK(Y1(0, 0) == doctest::Approx(1.0));
  CHECK(Y1(0, 1) == doctest::Approx(1.0));
  CHECK(Y1(1, 1) == doctest::Approx(1.0));
  // ones on (0,0), (0,1), (1,0), (1,1); zero elsewhere
  CHECK(Y1.cwiseAbs().sum() == doctest::Approx(4.0));
  CHECK(Y1.bottomRightCorner(4, 4).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS(lift_point(0.0, r));
  CHECK_THROWS(lift_point(-1.0, r));
}

TEST_CASE("lifted points are rank one up to the 1/h scaling") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uh(0.05, 2.0), ur(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 5;
    Vec r(n);
    for (int i = 0; i < n; ++i) r(i) = ur(rng);
    const double h = uh(rng);
    Mat Y = lift_point(h, r);
    Eigen::SelfAdjointEigenSolver<Mat> eig(Y, Eigen::EigenvaluesOnly);
    Vec ev = eig.eigenvalues();
    Vec y(2 * n + 2);
    y << 1, h, r, h * r;
    CHECK(ev(ev.size() - 1) == doctest::Approx(y.squaredNorm() / h).epsilon(1e-10));
    CHECK(std::abs(ev(ev.size() - 2)) <= 1e-9 * ev(ev.size() - 1));
  }
}

TEST_CASE("extraction round-trips lifting") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> uh(0.01, 0.5), ur(-2.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 4;
    Vec r(n);
    for (int i = 0; i < n; ++i) r(i) = ur(rng);
    const double h = uh(rng);
    auto ex = extract_point(lift_point(h, r));
    CHECK(ex.h == doctest::Approx(h).epsilon(1e-12));
    CHECK((ex.r - r).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, r.cwiseAbs().maxCoeff()));
    CHECK(ex.rank_ratio <= 1e-12);
  }
}

TEST_CASE("extraction of a two-point mixture reports the blended h and a positive rank ratio") {
  Vec r0(2);
  r0 << 0.3, -0.7;
  Mat Y = 0.5 * (lift_point(1.0, r0) + lift_point(2.0, r0));
  auto ex = extract_point(Y);
  CHECK(ex.h == doctest::Approx(1.5));
  CHECK(ex.rank_ratio > 0.0);
}

TEST_CASE("extraction rejects matrices without a valid time step") {
  CHECK_THROWS_AS(extract_point(Mat::Zero(6, 6)), ExtractionError);
  Mat bad = lift_point(1.0, Vec::Zero(2));
  bad(3, 3) = -1.0;  // indefinite
  CHECK_THROWS_AS(extract_point(bad), ExtractionError);
}

TEST_CASE("coupling layout has dimension 3 + 5 nx") {
  CHECK(CouplingLayout(2).dim() == 13);
  CHECK(CouplingLayout(1).dim() == 8);
}

TEST_CASE("coupling ties hold exactly on lifted points") {
  const int nx = 2;
  // Segment layouts: predecessor has xbar as its last state block, successor
  // as its first. Use small segments: r_prev = (p0, p1, xbar), r_next = (xbar, q0).
  const int n_prev = 3 * nx;  // three states of dimension nx, no inputs
  const int n_next = 2 * nx;
  LiftLayout prev(n_prev), next(n_next);
  CouplingLayout cpl(nx);
  auto ties = coupling_constraints(cpl, prev, n_prev - nx, next, 0);
  CHECK(ties.size() > 0);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double ha = 0.4 + trial * 0.05, hb = 1.1 - trial * 0.03;
    Vec rp(n_prev), rn(n_next);
    for (int i = 0; i < n_prev; ++i) rp(i) = u(rng);
    for (int i = 0; i < n_next; ++i) rn(i) = u(rng);
    rn.head(nx) = rp.tail(nx);  // shared boundary state
    Vec xbar = rp.tail(nx);

    Mat Yp = lift_point(ha, rp), Yn = lift_point(hb, rn);
    // lifted coupling block: ybar components evaluated then outer product
    Vec ybar(cpl.dim());
    ybar(0) = 1;
    ybar(1) = ha;
    ybar(2) = hb;
    ybar.segment(3, nx) = xbar;
    ybar.segment(3 + nx, nx) = ha * xbar;
    ybar.segment(3 + 2 * nx, nx) = hb * xbar;
    ybar.segment(3 + 3 * nx, nx) = xbar / ha;
    ybar.segment(3 + 4 * nx, nx) = xbar / hb;
    Mat Ybar = ybar * ybar.transpose();

    for (const auto& tie : ties) {
      const double lhs = Ybar(tie.coupling_entry.a, tie.coupling_entry.b);
      const double rhs = tie.side == 0 ? Yp(tie.segment_entry.a, tie.segment_entry.b)
                                       : Yn(tie.segment_entry.a, tie.segment_entry.b);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
  }
}

TEST_CASE("coupling tie count is stable for nx = 1") {
  // Regression lock: enumerated from the two layouts.
  LiftLayout prev(2), next(2);
  CouplingLayout cpl(1);
  auto ties = coupling_constraints(cpl, prev, 1, next, 0);
  // Pinned by hand enumeration of the 36 entries of the 8x8 coupling block:
  // ten first-order matches, duplicate x and x^2 positions on both sides,
  // and the five quadratic families; h_a h_b style entries carry no tie.
  CHECK(ties.size() == 26);
}

TEST_CASE("standard first-order layout has no aliases and a h^2 entry") {
  auto B = standard_sdr_layout(3);
  CHECK(B.dim() == 5);
  CHECK(B.alias_ties().empty());
  CHECK(B.entry_of(Monomial::h(2)) == Entry{1, 1});
  CHECK(B.const_entry() == Entry{0, 0});
  CHECK(B.entry_of(Monomial::var(1)) == Entry{0, 3});
  CHECK(!B.try_entry(Monomial::var_over_h(0)).has_value());
}
