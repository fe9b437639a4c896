// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include "tscale/relax.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <unordered_set>

namespace tscale::relax {

using conic::ConicProgram;
using conic::Row;
using conic::Sense;
using conic::Term;
using lift::Monomial;
using lift::Poly;

// ---------------------------------------------------------------------------
// abstractify
// ---------------------------------------------------------------------------

namespace {

void self_check_dynamics(const AbstractLtiProgram& p, const PwaMode& mode) {
  // F [r;1] = G [hr;h] must hold for any Euler-consistent pair, domains aside.
  const double h = 0.37;
  Vec x = Vec::LinSpaced(p.nx, 0.3, 1.1);
  Vec r(p.dim_r);
  for (int k = 0; k < p.K; ++k) {
    Vec u = Vec::LinSpaced(p.nu, -0.4, 0.25 + 0.1 * k);
    r.segment(p.x_index(k, 0), p.nx) = x;
    r.segment(p.u_index(k, 0), p.nu) = u;
    x = x + h * (mode.A * x + mode.B * u + mode.c);
  }
  r.segment(p.x_index(p.K, 0), p.nx) = x;
  Vec lhs = p.F.leftCols(p.dim_r) * r + p.F.col(p.dim_r);
  Vec rhs = h * (p.G.leftCols(p.dim_r) * r) + h * p.G.col(p.dim_r);
  const double scale = 1.0 + rhs.cwiseAbs().maxCoeff();
  if ((lhs - rhs).cwiseAbs().maxCoeff() > 1e-11 * scale)
    throw Error("abstractify: dynamics transcription failed its self check");
}

}  // namespace

AbstractLtiProgram abstractify(const PwaMode& mode, const OcpSpec& ocp, int K,
                               const BoundarySpec& boundary) {
  if (K < 1) throw Error("abstractify: K must be >= 1");
  AbstractLtiProgram p;
  p.nx = mode.nx();
  p.nu = mode.nu();
  p.K = K;
  p.dim_r = (K + 1) * p.nx + K * p.nu;
  p.h_min = ocp.h_min;
  p.h_max = ocp.h_max;
  p.eta_K = ocp.eta * K;
  p.mode_name = mode.name;

  // dynamics rows: x_{k+1} - x_k = h (A x_k + B u_k + c)
  const int n_dyn = K * p.nx;
  p.F = Mat::Zero(n_dyn, p.dim_r + 1);
  p.G = Mat::Zero(n_dyn, p.dim_r + 1);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < p.nx; ++i) {
      const int row = k * p.nx + i;
      p.F(row, p.x_index(k + 1, i)) = 1.0;
      p.F(row, p.x_index(k, i)) = -1.0;
      for (int j = 0; j < p.nx; ++j) p.G(row, p.x_index(k, j)) = mode.A(i, j);
      for (int j = 0; j < p.nu; ++j) p.G(row, p.u_index(k, j)) = mode.B(i, j);
      p.G(row, p.dim_r) = mode.c(i);
    }

  // domain rows for k = 0..K-1 plus the linear time-step window
  const int n_x_rows = mode.X.num_rows();
  const int n_u_rows = mode.U.num_rows();
  const int n_ineq = K * (n_x_rows + n_u_rows) + 2;
  p.C = Mat::Zero(n_ineq, p.dim_r + 1);
  p.d = Vec::Zero(n_ineq);
  int row = 0;
  for (int k = 0; k < K; ++k) {
    for (int rx = 0; rx < n_x_rows; ++rx, ++row) {
      for (int i = 0; i < p.nx; ++i) p.C(row, p.x_index(k, i)) = mode.X.C(rx, i);
      p.d(row) = mode.X.d(rx);
    }
    for (int ru = 0; ru < n_u_rows; ++ru, ++row) {
      for (int j = 0; j < p.nu; ++j) p.C(row, p.u_index(k, j)) = mode.U.C(ru, j);
      p.d(row) = mode.U.d(ru);
    }
  }
  p.C(row, p.dim_r) = 1.0;
  p.d(row++) = -ocp.h_min;  // h - h_min >= 0
  p.C(row, p.dim_r) = -1.0;
  p.d(row++) = ocp.h_max;  // h_max - h >= 0

  // boundary pins
  std::vector<std::pair<int, Vec>> pins;
  if (boundary.pin_start) pins.emplace_back(0, *boundary.pin_start);
  if (boundary.pin_goal) pins.emplace_back(K, *boundary.pin_goal);
  p.H = Mat::Zero(static_cast<int>(pins.size()) * p.nx, p.dim_r);
  p.b = Vec::Zero(p.H.rows());
  int hr = 0;
  for (const auto& [k, value] : pins) {
    if (value.size() != p.nx) throw Error("abstractify: boundary pin dimension mismatch");
    for (int i = 0; i < p.nx; ++i, ++hr) {
      p.H(hr, p.x_index(k, i)) = 1.0;
      p.b(hr) = value(i);
    }
  }

  // cost embeddings over r (stage sums exclude x_K)
  p.Qx = Mat::Zero(p.dim_r, p.dim_r);
  p.Ru = Mat::Zero(p.dim_r, p.dim_r);
  for (int k = 0; k < K; ++k) {
    p.Qx.block(p.x_index(k, 0), p.x_index(k, 0), p.nx, p.nx) = ocp.Q;
    p.Ru.block(p.u_index(k, 0), p.u_index(k, 0), p.nu, p.nu) = ocp.R;
  }

  self_check_dynamics(p, mode);
  return p;
}

AbstractLtiProgram abstractify(const PwaMode& mode, const OcpSpec& ocp) {
  BoundarySpec b;
  b.pin_start = ocp.x_start;
  b.pin_goal = ocp.x_goal;
  return abstractify(mode, ocp, ocp.steps_for(mode.name), b);
}

double objective_on_point(const AbstractLtiProgram& p, double h, const Vec& r) {
  return p.eta_K * h + h * (r.dot((p.Qx + p.Ru) * r));
}

// ---------------------------------------------------------------------------
// Row emission
// ---------------------------------------------------------------------------

std::string to_string(FormKind kind) {
  switch (kind) {
    case FormKind::kStandard: return "standard";
    case FormKind::kDense: return "dense";
    case FormKind::kSparse: return "sparse";
  }
  return "unknown";
}

FormKind form_kind_from_string(const std::string& s) {
  if (s == "standard") return FormKind::kStandard;
  if (s == "dense") return FormKind::kDense;
  if (s == "sparse") return FormKind::kSparse;
  throw Error("unknown formulation '" + s + "' (expected standard|dense|sparse)");
}

namespace {

std::string row_key(std::vector<Term> ts, double rhs, Sense sense) {
  std::sort(ts.begin(), ts.end(), [](const Term& x, const Term& y) {
    return std::tie(x.block, x.a, x.b) < std::tie(y.block, y.a, y.b);
  });
  double scale = std::abs(rhs);
  for (const Term& t : ts) scale = std::max(scale, std::abs(t.coeff));
  if (scale == 0) scale = 1;
  char buf[64];
  std::string key = sense == Sense::kEq ? "E" : "G";
  std::snprintf(buf, sizeof(buf), "%.12g|", rhs / scale);
  key += buf;
  for (const Term& t : ts) {
    std::snprintf(buf, sizeof(buf), "%d:%d:%d:%.12g;", t.block, t.a, t.b, t.coeff / scale);
    key += buf;
  }
  return key;
}

// Emits polynomials over one PSD block's monomials as program rows, skipping
// non-representable families and structurally duplicate rows.
class Emitter {
 public:
  Emitter(ConicProgram& prog, int block_id, const lift::BlockLayout& layout,
          std::unordered_set<std::string>& dedup)
      : prog_(prog), block_(block_id), layout_(layout), dedup_(dedup) {}

  std::optional<std::vector<Term>> to_terms(const Poly& p) const {
    std::vector<Term> ts;
    ts.reserve(p.terms().size());
    for (const auto& [m, c] : p.terms()) {
      auto e = layout_.try_entry(m);
      if (!e) return std::nullopt;
      ts.push_back({block_, e->a, e->b, c});
    }
    return ts;
  }

  bool emit(const Poly& p, Sense sense, const std::string& tag) {
    if (p.empty()) return true;
    auto ts = to_terms(p);
    if (!ts) return false;
    auto key = row_key(*ts, 0.0, sense);
    if (!dedup_.insert(std::move(key)).second) return true;
    prog_.add_row({std::move(*ts), 0.0, sense, tag});
    return true;
  }

  /// Base relation times every multiplier under which it stays representable.
  void emit_scaled_family(const Poly& base, Sense sense, const std::vector<Monomial>& mults,
                          const std::vector<std::string>& tags) {
    for (size_t i = 0; i < mults.size(); ++i) {
      auto scaled = base.times(mults[i]);
      if (!scaled) continue;
      emit(*scaled, sense, tags[i]);
    }
  }

  void emit_structure(bool pin_const, const std::string& prefix) {
    for (const auto& [canon, dup] : layout_.alias_ties()) {
      Row row;
      row.terms = {{block_, canon.a, canon.b, 1.0}, {block_, dup.a, dup.b, -1.0}};
      row.sense = Sense::kEq;
      row.tag = prefix + "structure";
      prog_.add_row(std::move(row));
    }
    if (pin_const) {
      const auto e = layout_.const_entry();
      prog_.add_row({{{block_, e.a, e.b, 1.0}}, 1.0, Sense::kEq, prefix + "normalize"});
    }
  }

 private:
  ConicProgram& prog_;
  int block_;
  const lift::BlockLayout& layout_;
  std::unordered_set<std::string>& dedup_;
};

// Multipliers {1, h, 1/h, r_j, h r_j, r_j / h} for equality rows; paired with
// family tag suffixes.
std::pair<std::vector<Monomial>, std::vector<std::string>> equality_multipliers(
    const std::string& base, int n) {
  std::vector<Monomial> m = {Monomial::one(), Monomial::h(1), Monomial::h(-1)};
  std::vector<std::string> t = {base, base + "*h", base + "/h"};
  for (int j = 0; j < n; ++j) {
    m.push_back(Monomial::var(j));
    t.push_back(base + "*r");
    m.push_back(Monomial::h_var(j));
    t.push_back(base + "*hr");
    m.push_back(Monomial::var_over_h(j));
    t.push_back(base + "*r/h");
  }
  return {std::move(m), std::move(t)};
}

const std::vector<Monomial>& scaling_multipliers() {
  static const std::vector<Monomial> m = {Monomial::one(), Monomial::h(1), Monomial::h(-1)};
  return m;
}

// Shared emission of a segment's constraint families given its base polys.
struct SegmentPolys {
  std::vector<Poly> dynamics;   // = 0
  std::vector<Poly> terminal;   // = 0
  std::vector<Poly> domain;     // >= 0 (includes time-step window rows)
  Poly objective;               // linear in lifted entries
};

void emit_segment_rows(Emitter& em, const SegmentPolys& sp, int n_mult, bool full_products,
                       const std::string& prefix) {
  auto [dyn_m, dyn_t] = equality_multipliers(prefix + "dyn", n_mult);
  for (const Poly& p : sp.dynamics) em.emit_scaled_family(p, Sense::kEq, dyn_m, dyn_t);
  auto [term_m, term_t] = equality_multipliers(prefix + "term", n_mult);
  for (const Poly& p : sp.terminal) em.emit_scaled_family(p, Sense::kEq, term_m, term_t);

  const auto& sm = scaling_multipliers();
  const std::vector<std::string> dom_tags = {prefix + "dom", prefix + "dom*h", prefix + "dom/h"};
  const std::vector<std::string> prod_tags = {prefix + "dom*dom", prefix + "dom*dom*h",
                                              prefix + "dom*dom/h"};
  for (const Poly& p : sp.domain) em.emit_scaled_family(p, Sense::kGe, sm, dom_tags);
  const size_t nd = sp.domain.size();
  for (size_t i = 0; i < nd; ++i)
    for (size_t j = i; j < (full_products ? nd : i + 1); ++j) {
      auto prod = sp.domain[i].times(sp.domain[j]);
      if (!prod) continue;
      em.emit_scaled_family(*prod, Sense::kGe, sm, prod_tags);
    }
}

Poly affine_row_poly(const Eigen::RowVectorXd& coeffs, double constant, int dim_r,
                     bool h_column) {
  // coeffs has dim_r (+1 when h_column) entries; constant adds the 1-monomial.
  Poly p;
  for (int j = 0; j < dim_r; ++j)
    if (coeffs(j) != 0) p.add(coeffs(j), Monomial::var(j));
  if (h_column && coeffs(dim_r) != 0) p.add(coeffs(dim_r), Monomial::h(1));
  if (constant != 0) p.add(constant, Monomial::one());
  return p;
}

std::vector<Poly> window_polys(double h_min, double h_max) {
  std::vector<Poly> w;
  Poly h_nonneg;  // h >= 0
  h_nonneg.add(1.0, Monomial::h(1));
  w.push_back(h_nonneg);
  Poly invh_nonneg;  // 1/h >= 0
  invh_nonneg.add(1.0, Monomial::h(-1));
  w.push_back(invh_nonneg);
  Poly inv_lo;  // 1/h - 1/h_max >= 0
  inv_lo.add(1.0, Monomial::h(-1));
  inv_lo.add(-1.0 / h_max, Monomial::one());
  w.push_back(inv_lo);
  Poly inv_hi;  // 1/h_min - 1/h >= 0
  inv_hi.add(1.0 / h_min, Monomial::one());
  inv_hi.add(-1.0, Monomial::h(-1));
  w.push_back(inv_hi);
  return w;
}

SegmentPolys dense_segment_polys(const AbstractLtiProgram& p) {
  SegmentPolys sp;
  for (int i = 0; i < p.F.rows(); ++i) {
    Poly dyn;
    for (int j = 0; j < p.dim_r; ++j) {
      if (p.F(i, j) != 0) dyn.add(p.F(i, j), Monomial::var(j));
      if (p.G(i, j) != 0) dyn.add(-p.G(i, j), Monomial::h_var(j));
    }
    if (p.F(i, p.dim_r) != 0) dyn.add(p.F(i, p.dim_r), Monomial::one());
    if (p.G(i, p.dim_r) != 0) dyn.add(-p.G(i, p.dim_r), Monomial::h(1));
    sp.dynamics.push_back(std::move(dyn));
  }
  for (int i = 0; i < p.H.rows(); ++i) {
    Poly t;
    for (int j = 0; j < p.dim_r; ++j)
      if (p.H(i, j) != 0) t.add(p.H(i, j), Monomial::var(j));
    t.add(-p.b(i), Monomial::one());
    sp.terminal.push_back(std::move(t));
  }
  for (int i = 0; i < p.C.rows(); ++i)
    sp.domain.push_back(affine_row_poly(p.C.row(i), p.d(i), p.dim_r, /*h_column=*/true));
  for (Poly& w : window_polys(p.h_min, p.h_max)) sp.domain.push_back(std::move(w));

  sp.objective.add(p.eta_K, Monomial::h(1));
  const Mat M = p.Qx + p.Ru;
  for (int i = 0; i < p.dim_r; ++i)
    for (int j = 0; j < p.dim_r; ++j)
      if (M(i, j) != 0) sp.objective.add(M(i, j), Monomial{1, 0, {std::min(i, j), std::max(i, j)}});
  return sp;
}

}  // namespace

// ---------------------------------------------------------------------------
// Segment construction
// ---------------------------------------------------------------------------

BoundaryAccess SegmentInfo::start_boundary() const {
  if (form == SegmentForm::kDense) return {block_ids.front(), layout.get(), 0};
  return {block_ids.front(), layout.get(), 0};
}

BoundaryAccess SegmentInfo::goal_boundary() const {
  if (form == SegmentForm::kDense) return {block_ids.front(), layout.get(), K * nx};
  return {block_ids.back(), layout.get(), nx};
}

SegmentInfo append_segment(ConicProgram& prog, const PwaMode& mode, const OcpSpec& ocp, int K,
                           const SegmentOptions& options) {
  SegmentInfo info;
  info.form = options.form;
  info.mode = mode.name;
  info.nx = mode.nx();
  info.nu = mode.nu();
  info.K = K;
  info.dim_r = (K + 1) * info.nx + K * info.nu;
  const std::string prefix = options.name_prefix;
  std::unordered_set<std::string> dedup;

  if (options.form == SegmentForm::kDense) {
    AbstractLtiProgram abs = abstractify(mode, ocp, K, options.boundary);
    info.layout = std::make_shared<lift::LiftLayout>(abs.dim_r);
    const int blk = prog.add_block(prefix + "Y", info.layout->dim());
    info.block_ids = {blk};
    Emitter em(prog, blk, info.layout->block(), dedup);
    em.emit_structure(options.pin_const, prefix);
    SegmentPolys sp = dense_segment_polys(abs);
    emit_segment_rows(em, sp, abs.dim_r, options.relax.full_products, prefix);
    auto obj = em.to_terms(sp.objective);
    if (!obj) throw Error("dense objective not representable");
    for (const Term& t : *obj) prog.obj_add(t);
    return info;
  }

  // Sparse: K blocks over r_k = (x_k, x_{k+1}, u_k).
  const int nx = info.nx, nu = info.nu;
  const int nk = 2 * nx + nu;
  info.layout = std::make_shared<lift::LiftLayout>(nk);
  std::vector<Emitter> emitters;
  emitters.reserve(K);
  for (int k = 0; k < K; ++k) {
    const int blk = prog.add_block(prefix + "Y" + std::to_string(k), info.layout->dim());
    info.block_ids.push_back(blk);
    emitters.emplace_back(prog, blk, info.layout->block(), dedup);
  }

  auto var_x = [&](int i) { return Monomial::var(i); };          // x_k slot
  auto var_xn = [&](int i) { return Monomial::var(nx + i); };    // x_{k+1} slot
  auto var_u = [&](int j) { return Monomial::var(2 * nx + j); };  // u_k slot

  for (int k = 0; k < K; ++k) {
    Emitter& em = emitters[k];
    em.emit_structure(options.pin_const && k == 0, prefix);

    SegmentPolys sp;
    for (int i = 0; i < nx; ++i) {
      Poly dyn;
      dyn.add(1.0, var_xn(i));
      dyn.add(-1.0, var_x(i));
      for (int j = 0; j < nx; ++j)
        if (mode.A(i, j) != 0) dyn.add(-mode.A(i, j), Monomial::h_var(j));
      for (int j = 0; j < nu; ++j)
        if (mode.B(i, j) != 0) dyn.add(-mode.B(i, j), Monomial::h_var(2 * nx + j));
      if (mode.c(i) != 0) dyn.add(-mode.c(i), Monomial::h(1));
      sp.dynamics.push_back(std::move(dyn));
    }
    if (k == 0 && options.boundary.pin_start) {
      for (int i = 0; i < nx; ++i) {
        Poly t(1.0, var_x(i));
        t.add(-(*options.boundary.pin_start)(i), Monomial::one());
        sp.terminal.push_back(std::move(t));
      }
    }
    if (k == K - 1 && options.boundary.pin_goal) {
      for (int i = 0; i < nx; ++i) {
        Poly t(1.0, var_xn(i));
        t.add(-(*options.boundary.pin_goal)(i), Monomial::one());
        sp.terminal.push_back(std::move(t));
      }
    }
    for (int rx = 0; rx < mode.X.num_rows(); ++rx) {
      Poly dom;
      for (int i = 0; i < nx; ++i)
        if (mode.X.C(rx, i) != 0) dom.add(mode.X.C(rx, i), var_x(i));
      dom.add(mode.X.d(rx), Monomial::one());
      sp.domain.push_back(std::move(dom));
    }
    for (int ru = 0; ru < mode.U.num_rows(); ++ru) {
      Poly dom;
      for (int j = 0; j < nu; ++j)
        if (mode.U.C(ru, j) != 0) dom.add(mode.U.C(ru, j), var_u(j));
      dom.add(mode.U.d(ru), Monomial::one());
      sp.domain.push_back(std::move(dom));
    }
    Poly h_lo;  // h - h_min >= 0
    h_lo.add(1.0, Monomial::h(1));
    h_lo.add(-ocp.h_min, Monomial::one());
    sp.domain.push_back(std::move(h_lo));
    Poly h_hi;  // h_max - h >= 0
    h_hi.add(ocp.h_max, Monomial::one());
    h_hi.add(-1.0, Monomial::h(1));
    sp.domain.push_back(std::move(h_hi));
    for (Poly& w : window_polys(ocp.h_min, ocp.h_max)) sp.domain.push_back(std::move(w));

    sp.objective.add(ocp.eta, Monomial::h(1));
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nx; ++j)
        if (ocp.Q(i, j) != 0)
          sp.objective.add(ocp.Q(i, j), Monomial{1, 0, {std::min(i, j), std::max(i, j)}});
    for (int i = 0; i < nu; ++i)
      for (int j = 0; j < nu; ++j)
        if (ocp.R(i, j) != 0)
          sp.objective.add(ocp.R(i, j),
                           Monomial{1, 0, {2 * nx + std::min(i, j), 2 * nx + std::max(i, j)}});

    emit_segment_rows(em, sp, nk, options.relax.full_products, prefix);
    auto obj = em.to_terms(sp.objective);
    if (!obj) throw Error("sparse objective not representable");
    for (const Term& t : *obj) prog.obj_add(t);
  }

  // Overlap consistency: the x_{k+1} window of block k equals the x_k window
  // of block k+1, through every representable monomial family, plus a single
  // shared time step.
  const lift::BlockLayout& B = info.layout->block();
  auto tie = [&](int bk, lift::Entry ea, int bk1, lift::Entry eb, const std::string& tag) {
    prog.add_row({{{info.block_ids[bk], ea.a, ea.b, 1.0}, {info.block_ids[bk1], eb.a, eb.b, -1.0}},
                  0.0,
                  Sense::kEq,
                  tag});
  };
  for (int k = 0; k + 1 < K; ++k) {
    for (int i = 0; i < nx; ++i) {
      tie(k, B.entry_of(Monomial::var(nx + i)), k + 1, B.entry_of(Monomial::var(i)),
          prefix + "consist:r");
      tie(k, B.entry_of(Monomial::h_var(nx + i)), k + 1, B.entry_of(Monomial::h_var(i)),
          prefix + "consist:hr");
      tie(k, B.entry_of(Monomial::var_over_h(nx + i)), k + 1, B.entry_of(Monomial::var_over_h(i)),
          prefix + "consist:r/h");
    }
    for (int i = 0; i < nx; ++i)
      for (int j = i; j < nx; ++j) {
        tie(k, B.entry_of(Monomial{0, 0, {nx + i, nx + j}}), k + 1,
            B.entry_of(Monomial{0, 0, {i, j}}), prefix + "consist:rr");
        tie(k, B.entry_of(Monomial{1, 0, {nx + i, nx + j}}), k + 1,
            B.entry_of(Monomial{1, 0, {i, j}}), prefix + "consist:hrr");
        tie(k, B.entry_of(Monomial{-1, 0, {nx + i, nx + j}}), k + 1,
            B.entry_of(Monomial{-1, 0, {i, j}}), prefix + "consist:rr/h");
      }
    tie(k, B.entry_of(Monomial::h(1)), k + 1, B.entry_of(Monomial::h(1)), prefix + "consist:h");
    tie(k, B.entry_of(Monomial::h(-1)), k + 1, B.entry_of(Monomial::h(-1)), prefix + "consist:h");
    tie(k, B.entry_of(Monomial::one()), k + 1, B.entry_of(Monomial::one()), prefix + "consist:h");
  }
  return info;
}

// ---------------------------------------------------------------------------
// Standalone builders
// ---------------------------------------------------------------------------

std::vector<int> Relaxation::psd_dims() const {
  std::vector<int> dims;
  for (int b = 0; b < program.num_blocks(); ++b) dims.push_back(program.block_dim(b));
  return dims;
}

Relaxation build_standard_sdr(const AbstractLtiProgram& p, const RelaxOptions& opts) {
  if (p.Qx.cwiseAbs().maxCoeff() > 0 || p.Ru.cwiseAbs().maxCoeff() > 0)
    throw SolveError("standard SDR requires an eta-only objective (Q = R = 0)");

  Relaxation out;
  out.kind = FormKind::kStandard;
  auto layout = lift::standard_sdr_layout(p.dim_r);
  const int blk = out.program.add_block("X", layout.dim());
  std::unordered_set<std::string> dedup;
  Emitter em(out.program, blk, layout, dedup);

  // e1^T X e1 = 1 plus (none) aliases.
  em.emit_structure(/*pin_const=*/true, "");

  SegmentPolys sp = dense_segment_polys(p);
  for (const Poly& dyn : sp.dynamics) em.emit(dyn, Sense::kEq, "dyn");
  for (const Poly& t : sp.terminal) em.emit(t, Sense::kEq, "term");
  std::vector<Poly> lin;
  for (const Poly& dom : sp.domain)
    if (em.emit(dom, Sense::kGe, "dom")) lin.push_back(dom);
  for (size_t i = 0; i < lin.size(); ++i)
    for (size_t j = i; j < (opts.full_products ? lin.size() : i + 1); ++j) {
      auto prod = lin[i].times(lin[j]);
      if (!prod) continue;
      em.emit(*prod, Sense::kGe, "dom*dom");
    }
  Poly obj(p.eta_K, Monomial::h(1));
  auto terms = em.to_terms(obj);
  if (!terms) throw Error("standard objective not representable");
  for (const Term& t : *terms) out.program.obj_add(t);

  out.segment.form = SegmentForm::kDense;
  out.segment.mode = p.mode_name;
  out.segment.nx = p.nx;
  out.segment.nu = p.nu;
  out.segment.K = p.K;
  out.segment.dim_r = p.dim_r;
  out.segment.block_ids = {blk};
  return out;
}

Relaxation build_dense_tfr(const AbstractLtiProgram& p, const RelaxOptions& opts) {
  Relaxation out;
  out.kind = FormKind::kDense;
  out.segment.form = SegmentForm::kDense;
  out.segment.mode = p.mode_name;
  out.segment.nx = p.nx;
  out.segment.nu = p.nu;
  out.segment.K = p.K;
  out.segment.dim_r = p.dim_r;
  out.segment.layout = std::make_shared<lift::LiftLayout>(p.dim_r);
  const int blk = out.program.add_block("Y", out.segment.layout->dim());
  out.segment.block_ids = {blk};
  std::unordered_set<std::string> dedup;
  Emitter em(out.program, blk, out.segment.layout->block(), dedup);
  em.emit_structure(true, "");
  SegmentPolys sp = dense_segment_polys(p);
  emit_segment_rows(em, sp, p.dim_r, opts.full_products, "");
  auto obj = em.to_terms(sp.objective);
  if (!obj) throw Error("dense objective not representable");
  for (const Term& t : *obj) out.program.obj_add(t);
  return out;
}

Relaxation build_sparse_tfr(const PwaMode& mode, const OcpSpec& ocp, int K,
                            const BoundarySpec& boundary, const RelaxOptions& opts) {
  Relaxation out;
  out.kind = FormKind::kSparse;
  SegmentOptions so;
  so.form = SegmentForm::kSparse;
  so.relax = opts;
  so.boundary = boundary;
  so.pin_const = true;
  out.segment = append_segment(out.program, mode, ocp, K, so);
  return out;
}

Relaxation build_sparse_tfr(const PwaMode& mode, const OcpSpec& ocp, const RelaxOptions& opts) {
  BoundarySpec b;
  b.pin_start = ocp.x_start;
  b.pin_goal = ocp.x_goal;
  return build_sparse_tfr(mode, ocp, ocp.steps_for(mode.name), b, opts);
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

namespace {
double rank_ratio_of(const Mat& Y) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(Y, Eigen::EigenvaluesOnly);
  const Vec& ev = eig.eigenvalues();
  const double l1 = ev(ev.size() - 1);
  if (!(l1 > 0)) return 0;
  return std::max(0.0, ev(ev.size() - 2)) / l1;
}
}  // namespace

SegmentExtraction extract_segment(const SegmentInfo& info, const conic::ConicSolution& sol) {
  SegmentExtraction out;
  const int nx = info.nx, nu = info.nu, K = info.K;
  out.segment.mode = info.mode;
  out.segment.x.resize(K + 1, nx);
  out.segment.u.resize(K, nu);
  out.r.resize(info.dim_r);

  if (info.form == SegmentForm::kDense) {
    const Mat& Y = sol.blocks.at(info.block_ids[0]);
    auto ex = lift::extract_point(Y, 1e-5);
    out.h = ex.h;
    out.r = ex.r;
    out.rank_ratio = ex.rank_ratio;
    for (int k = 0; k <= K; ++k) out.segment.x.row(k) = ex.r.segment(k * nx, nx);
    for (int k = 0; k < K; ++k) out.segment.u.row(k) = ex.r.segment((K + 1) * nx + k * nu, nu);
  } else {
    double h_sum = 0;
    out.rank_ratio = 0;
    for (int k = 0; k < K; ++k) {
      const Mat& Y = sol.blocks.at(info.block_ids[k]);
      h_sum += Y(1, 1);
      out.rank_ratio = std::max(out.rank_ratio, rank_ratio_of(Y));
      for (int i = 0; i < nx; ++i) out.segment.x(k, i) = Y(1, 2 + i);
      for (int j = 0; j < nu; ++j) out.segment.u(k, j) = Y(1, 2 + 2 * nx + j);
      if (k == K - 1)
        for (int i = 0; i < nx; ++i) out.segment.x(K, i) = Y(1, 2 + nx + i);
    }
    out.h = h_sum / K;
    for (int k = 0; k <= K; ++k) out.r.segment(k * nx, nx) = out.segment.x.row(k);
    for (int k = 0; k < K; ++k) out.r.segment((K + 1) * nx + k * nu, nu) = out.segment.u.row(k);
  }
  out.segment.h = out.h;
  return out;
}

std::vector<std::pair<int, Mat>> lift_segment_blocks(const SegmentInfo& seg, double h,
                                                     const Vec& r) {
  std::vector<std::pair<int, Mat>> out;
  if (seg.form == SegmentForm::kDense) {
    out.emplace_back(seg.block_ids[0], lift::lift_point(h, r));
    return out;
  }
  const int nx = seg.nx, nu = seg.nu, K = seg.K;
  for (int k = 0; k < K; ++k) {
    Vec rk(2 * nx + nu);
    rk.head(nx) = r.segment(k * nx, nx);
    rk.segment(nx, nx) = r.segment((k + 1) * nx, nx);
    rk.tail(nu) = r.segment((K + 1) * nx + k * nu, nu);
    out.emplace_back(seg.block_ids[k], lift::lift_point(h, rk));
  }
  return out;
}

namespace {
std::vector<Mat> rounded_blocks(const Relaxation& built, const Extraction& ex) {
  std::vector<Mat> blocks(built.program.num_blocks());
  const SegmentInfo& seg = built.segment;
  if (built.kind == FormKind::kStandard) {
    Vec x(seg.dim_r + 2);
    x(0) = 1.0;
    x(1) = ex.h;
    x.tail(seg.dim_r) = ex.r;
    blocks[seg.block_ids[0]] = x * x.transpose();
    return blocks;
  }
  if (seg.form == SegmentForm::kDense) {
    blocks[seg.block_ids[0]] = lift::lift_point(ex.h, ex.r);
    return blocks;
  }
  const int nx = seg.nx, nu = seg.nu, K = seg.K;
  for (int k = 0; k < K; ++k) {
    Vec rk(2 * nx + nu);
    rk.head(nx) = ex.r.segment(k * nx, nx);
    rk.segment(nx, nx) = ex.r.segment((k + 1) * nx, nx);
    rk.tail(nu) = ex.r.segment((K + 1) * nx + k * nu, nu);
    blocks[seg.block_ids[k]] = lift::lift_point(ex.h, rk);
  }
  return blocks;
}
}  // namespace

ExactnessCertificate certify_rank_one(const Relaxation& built, const conic::ConicSolution& sol,
                                      const CertifyOptions& opts) {
  ExactnessCertificate cert;
  cert.extraction = extract_solution(built, sol);
  cert.raw_rank_ratio = cert.extraction.rank_ratio;
  cert.rank_ratio = cert.extraction.rank_ratio;
  if (cert.raw_rank_ratio <= opts.rank_tol) {
    cert.certified = true;
    return cert;
  }
  auto blocks = rounded_blocks(built, cert.extraction);
  auto rep = conic::verify_point(built.program, blocks, Vec::Zero(built.program.num_scalars()), 0.0);
  cert.lift_violation = rep.max_violation;
  double obj = built.program.objective_constant();
  for (const Term& t : built.program.objective())
    obj += t.coeff * (t.block == conic::kScalar ? 0.0 : blocks[t.block](t.a, t.b));
  const double lb = sol.certified_lower_bound();
  cert.objective_excess = obj - lb;
  const double obj_tol = std::max(opts.obj_tol_abs, opts.obj_tol_rel * std::abs(lb));
  if (cert.lift_violation <= opts.feas_tol && cert.objective_excess <= obj_tol) {
    cert.certified = true;
    double worst = 0;
    for (int b : built.segment.block_ids) worst = std::max(worst, rank_ratio_of(blocks[b]));
    cert.rank_ratio = worst;  // machine-level by construction
  }
  return cert;
}

Extraction extract_solution(const Relaxation& built, const conic::ConicSolution& sol) {
  Extraction out;
  if (built.kind == FormKind::kStandard) {
    const Mat& X = sol.blocks.at(built.segment.block_ids[0]);
    const double one = X(0, 0);
    if (!(one > 1e-9)) throw ExtractionError("standard SDR solution lost its normalization");
    out.h = X(0, 1) / one;
    const int n = built.segment.dim_r;
    out.r = X.row(0).segment(2, n) / one;
    out.rank_ratio = rank_ratio_of(X);
    const int nx = built.segment.nx, nu = built.segment.nu, K = built.segment.K;
    Trajectory::Segment seg;
    seg.mode = built.segment.mode;
    seg.h = out.h;
    seg.x.resize(K + 1, nx);
    seg.u.resize(K, nu);
    for (int k = 0; k <= K; ++k) seg.x.row(k) = out.r.segment(k * nx, nx);
    for (int k = 0; k < K; ++k) seg.u.row(k) = out.r.segment((K + 1) * nx + k * nu, nu);
    out.trajectory.segments.push_back(std::move(seg));
    return out;
  }
  auto ex = extract_segment(built.segment, sol);
  out.h = ex.h;
  out.r = ex.r;
  out.rank_ratio = ex.rank_ratio;
  out.trajectory.segments.push_back(std::move(ex.segment));
  return out;
}

}  // namespace tscale::relax
