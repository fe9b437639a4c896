// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include "tscale/lift.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <sstream>

namespace tscale::lift {

// ---------------------------------------------------------------------------
// Monomial
// ---------------------------------------------------------------------------

std::optional<Monomial> Monomial::times(const Monomial& o) const {
  if (degree() + o.degree() > 2) return std::nullopt;
  Monomial out;
  out.ha = ha + o.ha;
  out.hb = hb + o.hb;
  std::array<int, 4> idx = {r[0], r[1], o.r[0], o.r[1]};
  std::sort(idx.begin(), idx.end(), std::greater<int>());  // used slots first
  out.r = {idx[1] >= 0 ? std::min(idx[0], idx[1]) : idx[0],
           idx[1] >= 0 ? std::max(idx[0], idx[1]) : -1};
  if (out.r[0] < 0 && out.r[1] >= 0) std::swap(out.r[0], out.r[1]);
  return out;
}

std::string Monomial::str() const {
  std::ostringstream os;
  bool lead = true;
  auto emit = [&](const std::string& s) {
    if (!lead) os << "*";
    os << s;
    lead = false;
  };
  if (ha == 1) emit("h");
  else if (ha != 0) emit("h^" + std::to_string(ha));
  if (hb == 1) emit("h'");
  else if (hb != 0) emit("h'^" + std::to_string(hb));
  for (int k : r)
    if (k >= 0) emit("r" + std::to_string(k));
  if (lead) os << "1";
  return os.str();
}

// ---------------------------------------------------------------------------
// Poly
// ---------------------------------------------------------------------------

void Poly::add(double coeff, const Monomial& m) {
  if (coeff == 0.0) return;
  terms_.emplace_back(m, coeff);
  compress();
}

void Poly::add(const Poly& p, double scale) {
  if (scale == 0.0) return;
  terms_.reserve(terms_.size() + p.terms_.size());
  for (const auto& [m, c] : p.terms_) terms_.emplace_back(m, c * scale);
  compress();
}

void Poly::compress() {
  std::sort(terms_.begin(), terms_.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  size_t w = 0;
  for (size_t i = 0; i < terms_.size();) {
    Monomial m = terms_[i].first;
    double c = 0;
    for (; i < terms_.size() && terms_[i].first == m; ++i) c += terms_[i].second;
    if (c != 0.0) terms_[w++] = {m, c};
  }
  terms_.resize(w);
}

std::optional<Poly> Poly::times(const Poly& o) const {
  Poly out;
  out.terms_.reserve(terms_.size() * o.terms_.size());
  for (const auto& [ma, ca] : terms_)
    for (const auto& [mb, cb] : o.terms_) {
      auto m = ma.times(mb);
      if (!m) return std::nullopt;
      out.terms_.emplace_back(*m, ca * cb);
    }
  out.compress();
  return out;
}

std::optional<Poly> Poly::times(const Monomial& m) const { return times(Poly(1.0, m)); }

// ---------------------------------------------------------------------------
// MonomialRef / classify
// ---------------------------------------------------------------------------

MonomialRef MonomialRef::make(MonomialKind k, int i, int j) {
  if (j >= 0 && j < i) std::swap(i, j);
  return {k, i, j};
}

Monomial MonomialRef::monomial() const {
  switch (kind) {
    case MonomialKind::kConst:   return Monomial::one();
    case MonomialKind::kH:       return Monomial::h(1);
    case MonomialKind::kInvH:    return Monomial::h(-1);
    case MonomialKind::kR:       return Monomial::var(i);
    case MonomialKind::kHR:      return Monomial::h_var(i);
    case MonomialKind::kROverH:  return Monomial::var_over_h(i);
    case MonomialKind::kRR:      return {0, 0, {i, j}};
    case MonomialKind::kHRR:     return {1, 0, {i, j}};
    case MonomialKind::kRROverH: return {-1, 0, {i, j}};
  }
  return Monomial::one();
}

std::optional<MonomialRef> classify(const Monomial& m) {
  if (m.hb != 0 || m.ha < -1 || m.ha > 1) return std::nullopt;
  const int deg = m.degree();
  if (deg == 0) {
    if (m.ha == 0) return MonomialRef::make(MonomialKind::kConst);
    if (m.ha == 1) return MonomialRef::make(MonomialKind::kH);
    return MonomialRef::make(MonomialKind::kInvH);
  }
  if (deg == 1) {
    if (m.ha == 0) return MonomialRef::make(MonomialKind::kR, m.r[0]);
    if (m.ha == 1) return MonomialRef::make(MonomialKind::kHR, m.r[0]);
    return MonomialRef::make(MonomialKind::kROverH, m.r[0]);
  }
  if (m.ha == 0) return MonomialRef::make(MonomialKind::kRR, m.r[0], m.r[1]);
  if (m.ha == 1) return MonomialRef::make(MonomialKind::kHRR, m.r[0], m.r[1]);
  return MonomialRef::make(MonomialKind::kRROverH, m.r[0], m.r[1]);
}

// ---------------------------------------------------------------------------
// BlockLayout
// ---------------------------------------------------------------------------

BlockLayout::BlockLayout(std::vector<Monomial> components, int h_shift)
    : components_(std::move(components)), h_shift_(h_shift) {
  const int d = dim();
  std::vector<std::pair<Monomial, Entry>> all;
  all.reserve(d * (d + 1) / 2);
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) all.emplace_back(monomial_at(a, b), Entry{a, b});
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });

  bool have_const = false;
  for (size_t i = 0; i < all.size();) {
    const Monomial& m = all[i].first;
    // Entries were generated in lexicographic (a, b) order, so within a
    // monomial group the stable sort keeps the smallest position first.
    Entry canon = all[i].second;
    for (size_t k = i; k < all.size() && all[k].first == m; ++k)
      if (all[k].second < canon) canon = all[k].second;
    index_.emplace_back(m, canon);
    if (m.is_one()) {
      const_entry_ = canon;
      have_const = true;
    }
    for (size_t k = i; k < all.size() && all[k].first == m; ++k)
      if (!(all[k].second == canon)) ties_.emplace_back(canon, all[k].second);
    while (i < all.size() && all[i].first == m) ++i;
  }
  if (!have_const)
    throw NonRepresentableError("block layout has no entry for the constant monomial");
}

Monomial BlockLayout::monomial_at(int a, int b) const {
  auto m = components_.at(a).times(components_.at(b));
  if (!m) throw NonRepresentableError("layout component product exceeds degree two");
  m->ha += h_shift_;
  return *m;
}

std::optional<Entry> BlockLayout::try_entry(const Monomial& m) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), m,
                             [](const auto& p, const Monomial& q) { return p.first < q; });
  if (it == index_.end() || !(it->first == m)) return std::nullopt;
  return it->second;
}

Entry BlockLayout::entry_of(const Monomial& m) const {
  auto e = try_entry(m);
  if (!e) throw NonRepresentableError("monomial " + m.str() + " is not representable in this lift");
  return *e;
}

// ---------------------------------------------------------------------------
// LiftLayout
// ---------------------------------------------------------------------------

namespace {
std::vector<Monomial> tfr_components(int n) {
  std::vector<Monomial> c;
  c.reserve(2 * n + 2);
  c.push_back(Monomial::one());
  c.push_back(Monomial::h(1));
  for (int i = 0; i < n; ++i) c.push_back(Monomial::var(i));
  for (int i = 0; i < n; ++i) c.push_back(Monomial::h_var(i));
  return c;
}
}  // namespace

LiftLayout::LiftLayout(int n) : n_(n), block_(tfr_components(n), -1) {
  if (n < 1) throw Error("lift layout requires at least one variable");
}

Entry LiftLayout::entry_of(const MonomialRef& m) const { return block_.entry_of(m.monomial()); }

BlockLayout standard_sdr_layout(int n) {
  std::vector<Monomial> c;
  c.reserve(n + 2);
  c.push_back(Monomial::one());
  c.push_back(Monomial::h(1));
  for (int i = 0; i < n; ++i) c.push_back(Monomial::var(i));
  return BlockLayout(std::move(c), 0);
}

// ---------------------------------------------------------------------------
// lift_point / extract_point
// ---------------------------------------------------------------------------

Mat lift_point(double h, const Vec& r) {
  if (!(h > 0)) throw Error("lift_point: time step must be positive");
  const int n = static_cast<int>(r.size());
  Vec y(2 * n + 2);
  y(0) = 1.0;
  y(1) = h;
  y.segment(2, n) = r;
  y.segment(2 + n, n) = h * r;
  return (y * y.transpose()) / h;
}

ExtractResult extract_point(const Mat& Y, double psd_tol) {
  if (Y.rows() != Y.cols() || Y.rows() < 4 || Y.rows() % 2 != 0)
    throw ExtractionError("extract_point: matrix is not a lifted block");
  const int n = (static_cast<int>(Y.rows()) - 2) / 2;
  const double h = Y(1, 1);
  if (!(h > 0)) throw ExtractionError("extract_point: no valid time step (Y[1,1] <= 0)");

  Eigen::SelfAdjointEigenSolver<Mat> eig(Y, Eigen::EigenvaluesOnly);
  const Vec& ev = eig.eigenvalues();  // ascending
  const double lmax = ev(ev.size() - 1);
  const double lmin = ev(0);
  if (lmin < -psd_tol * std::max(1.0, lmax))
    throw ExtractionError("extract_point: matrix is indefinite beyond tolerance");

  ExtractResult out;
  out.h = h;
  out.r = Y.row(1).segment(2, n);
  const double second = ev(ev.size() - 2);
  out.rank_ratio = lmax > 0 ? std::max(0.0, second) / lmax : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

namespace {
std::vector<Monomial> coupling_components(int nx) {
  std::vector<Monomial> c;
  c.reserve(3 + 5 * nx);
  c.push_back(Monomial::one());
  c.push_back(Monomial::h(1));
  c.push_back(Monomial::h_next(1));
  for (int i = 0; i < nx; ++i) c.push_back(Monomial::var(i));
  for (int i = 0; i < nx; ++i) c.push_back({1, 0, {i, -1}});   // h_a xbar_i
  for (int i = 0; i < nx; ++i) c.push_back({0, 1, {i, -1}});   // h_b xbar_i
  for (int i = 0; i < nx; ++i) c.push_back({-1, 0, {i, -1}});  // xbar_i / h_a
  for (int i = 0; i < nx; ++i) c.push_back({0, -1, {i, -1}});  // xbar_i / h_b
  return c;
}

Monomial shift_indices(const Monomial& m, int offset) {
  Monomial out = m;
  for (int k = 0; k < 2; ++k)
    if (out.r[k] >= 0) out.r[k] += offset;
  return out;
}
}  // namespace

CouplingLayout::CouplingLayout(int nx) : nx_(nx), block_(coupling_components(nx), 0) {
  if (nx < 1) throw Error("coupling layout requires at least one state");
}

std::vector<CouplingTie> match_block_entries(const BlockLayout& edge_block,
                                             const LiftLayout* prev, int offset_prev,
                                             const LiftLayout* next, int offset_next) {
  std::vector<CouplingTie> ties;
  const int d = edge_block.dim();
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      const Monomial m = edge_block.monomial_at(a, b);
      if (prev && m.hb == 0) {  // powers of the predecessor time step only
        if (auto e = prev->try_entry(shift_indices(m, offset_prev)))
          ties.push_back({Entry{a, b}, 0, *e});
      }
      if (next && m.ha == 0) {  // rebase h_b as the successor's own time step
        Monomial mn = shift_indices(m, offset_next);
        mn.ha = m.hb;
        mn.hb = 0;
        if (auto e = next->try_entry(mn)) ties.push_back({Entry{a, b}, 1, *e});
      }
    }
  }
  return ties;
}

std::vector<CouplingTie> coupling_constraints(const CouplingLayout& coupling,
                                              const LiftLayout& prev, int offset_prev,
                                              const LiftLayout& next, int offset_next) {
  if (offset_prev < 0 || offset_prev + coupling.nx() > prev.n() ||
      offset_next < 0 || offset_next + coupling.nx() > next.n())
    throw Error("coupling_constraints: boundary state does not fit the segment layouts");
  return match_block_entries(coupling.block(), &prev, offset_prev, &next, offset_next);
}

BlockLayout source_edge_layout(int nx) {
  std::vector<Monomial> c;
  c.reserve(3 + 3 * nx);
  c.push_back(Monomial::one());
  c.push_back(Monomial::h_next(1));
  c.push_back(Monomial::h_next(-1));
  for (int i = 0; i < nx; ++i) c.push_back(Monomial::var(i));
  for (int i = 0; i < nx; ++i) c.push_back({0, 1, {i, -1}});   // h' x_i
  for (int i = 0; i < nx; ++i) c.push_back({0, -1, {i, -1}});  // x_i / h'
  return BlockLayout(std::move(c), 0);
}

BlockLayout target_edge_layout(int nx) {
  std::vector<Monomial> c;
  c.reserve(3 + 3 * nx);
  c.push_back(Monomial::one());
  c.push_back(Monomial::h(1));
  c.push_back(Monomial::h(-1));
  for (int i = 0; i < nx; ++i) c.push_back(Monomial::var(i));
  for (int i = 0; i < nx; ++i) c.push_back({1, 0, {i, -1}});   // h x_i
  for (int i = 0; i < nx; ++i) c.push_back({-1, 0, {i, -1}});  // x_i / h
  return BlockLayout(std::move(c), 0);
}

Vec evaluate_components(const BlockLayout& layout, double h_prev, double h_next, const Vec& x) {
  Vec y(layout.dim());
  for (int i = 0; i < layout.dim(); ++i) {
    const Monomial& m = layout.components()[i];
    double v = std::pow(h_prev, m.ha) * std::pow(h_next, m.hb);
    for (int k : m.r)
      if (k >= 0) v *= x(k);
    y(i) = v;
  }
  return y;
}

}  // namespace tscale::lift
