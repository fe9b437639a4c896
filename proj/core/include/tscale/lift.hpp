// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tscale/types.hpp"

namespace tscale::lift {

// ---------------------------------------------------------------------------
// Monomials
// ---------------------------------------------------------------------------

/// Product of integer powers of up to two time steps with at most two
/// r-coordinates.  `ha` is the power of the segment's own time step; `hb` is
/// the power of the successor segment's time step and stays zero everywhere
/// except inside transition-coupling blocks.
struct Monomial {
  int ha = 0;
  int hb = 0;
  std::array<int, 2> r = {-1, -1};  // sorted ascending, -1 = unused slot

  static Monomial one() { return {}; }
  static Monomial h(int pow = 1) { return {pow, 0, {-1, -1}}; }
  static Monomial h_next(int pow = 1) { return {0, pow, {-1, -1}}; }
  static Monomial var(int i) { return {0, 0, {i, -1}}; }
  static Monomial h_var(int i) { return {1, 0, {i, -1}}; }
  static Monomial var_over_h(int i) { return {-1, 0, {i, -1}}; }

  int degree() const { return (r[0] >= 0 ? 1 : 0) + (r[1] >= 0 ? 1 : 0); }
  bool is_one() const { return ha == 0 && hb == 0 && degree() == 0; }

  /// Product of two monomials; degree in r is capped at two, which is all the
  /// lifted matrices can hold.  Returns nullopt when the cap is exceeded.
  std::optional<Monomial> times(const Monomial& o) const;

  auto operator<=>(const Monomial&) const = default;
  std::string str() const;
};

/// Sparse linear combination of monomials with merged, sorted terms.
class Poly {
 public:
  Poly() = default;
  Poly(double coeff, const Monomial& m) { add(coeff, m); }

  void add(double coeff, const Monomial& m);
  void add(const Poly& p, double scale = 1.0);

  /// Product of two polynomials; nullopt if any term pair exceeds degree two.
  std::optional<Poly> times(const Poly& o) const;
  std::optional<Poly> times(const Monomial& m) const;

  const std::vector<std::pair<Monomial, double>>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }

 private:
  void compress();
  std::vector<std::pair<Monomial, double>> terms_;
};

// ---------------------------------------------------------------------------
// Canonicalized references into the time-flexible lift
// ---------------------------------------------------------------------------

enum class MonomialKind : uint8_t {
  kConst,     // 1
  kH,         // h
  kInvH,      // 1/h
  kR,         // r_i
  kHR,        // h r_i
  kROverH,    // r_i / h
  kRR,        // r_i r_j
  kHRR,       // h r_i r_j
  kRROverH,   // r_i r_j / h
};

/// Canonicalized single-segment monomial (i <= j for the quadratic kinds).
struct MonomialRef {
  MonomialKind kind;
  int i = -1;
  int j = -1;

  static MonomialRef make(MonomialKind k, int i = -1, int j = -1);
  Monomial monomial() const;
  auto operator<=>(const MonomialRef&) const = default;
};

/// Classify a raw monomial against the nine representable kinds.
std::optional<MonomialRef> classify(const Monomial& m);

struct Entry {
  int a = 0;
  int b = 0;  // a <= b
  auto operator<=>(const Entry&) const = default;
};

// ---------------------------------------------------------------------------
// Lifted block layouts
// ---------------------------------------------------------------------------

/// Index layout of a PSD block obtained by lifting a vector of monomial
/// components, with an optional global power of h applied to every entry
/// (the time-flexible lift uses y = (1, h, r, hr) and Y = y y^T / h, i.e. a
/// global power of -1).  Entry (a, b) of the block represents the monomial
/// comp_a * comp_b * h^shift.  The same monomial may appear at several
/// entries; the lexicographically smallest position is canonical and
/// `alias_ties` lists the equalities that bind the duplicates.
class BlockLayout {
 public:
  BlockLayout(std::vector<Monomial> components, int h_shift);

  int dim() const { return static_cast<int>(components_.size()); }
  int h_shift() const { return h_shift_; }
  const std::vector<Monomial>& components() const { return components_; }

  Monomial monomial_at(int a, int b) const;
  std::optional<Entry> try_entry(const Monomial& m) const;
  Entry entry_of(const Monomial& m) const;  // throws NonRepresentableError

  /// Pairs (canonical, duplicate) covering every repeated monomial.
  const std::vector<std::pair<Entry, Entry>>& alias_ties() const { return ties_; }

  /// Entry holding the constant monomial 1 (every layout built here has one).
  Entry const_entry() const { return const_entry_; }

 private:
  std::vector<Monomial> components_;
  int h_shift_;
  std::vector<std::pair<Monomial, Entry>> index_;  // sorted by monomial
  std::vector<std::pair<Entry, Entry>> ties_;
  Entry const_entry_;
};

/// Layout of the time-flexible lift y = (1, h, r, hr), Y = y y^T / h for an
/// r of dimension n; the block has dimension 2n + 2.
class LiftLayout {
 public:
  explicit LiftLayout(int n);

  int n() const { return n_; }
  int dim() const { return 2 * n_ + 2; }
  const BlockLayout& block() const { return block_; }

  Entry entry_of(const MonomialRef& m) const;
  Entry entry_of(const Monomial& m) const { return block_.entry_of(m); }
  std::optional<Entry> try_entry(const Monomial& m) const { return block_.try_entry(m); }

 private:
  int n_;
  BlockLayout block_;
};

/// Layout of the standard first-order lift x = (1, h, r), X = x x^T of
/// dimension n + 2.  All entries are distinct monomials (h^2 included).
BlockLayout standard_sdr_layout(int n);

// ---------------------------------------------------------------------------
// Point lifting and extraction
// ---------------------------------------------------------------------------

/// Y = (1/h) y y^T with y = (1, h, r, hr).  Requires h > 0.
Mat lift_point(double h, const Vec& r);

struct ExtractResult {
  double h = 0;
  Vec r;
  double rank_ratio = 0;  // second-to-first eigenvalue ratio, 0 for exact rank one
};

/// Read (h, r) off the h-row of a (numerically) PSD lifted matrix and report
/// how far the matrix is from rank one.
ExtractResult extract_point(const Mat& Y, double psd_tol = 1e-6);

// ---------------------------------------------------------------------------
// Transition coupling blocks
// ---------------------------------------------------------------------------

/// Layout of the coupling lift over a mode transition with boundary state
/// xbar (dimension nx):
///   ybar = (1, h_a, h_b, xbar, h_a xbar, h_b xbar, xbar/h_a, xbar/h_b),
///   Ybar = ybar ybar^T,     dimension 3 + 5 nx.
/// Base r-indices refer to coordinates of xbar.
class CouplingLayout {
 public:
  explicit CouplingLayout(int nx);

  int nx() const { return nx_; }
  int dim() const { return 3 + 5 * nx_; }
  const BlockLayout& block() const { return block_; }

 private:
  int nx_;
  BlockLayout block_;
};

/// One matching equality: coupling-block entry == segment-block entry, where
/// `side` selects the predecessor (0) or successor (1) segment and
/// `segment_entry` is expressed in that segment's LiftLayout with xbar mapped
/// through the given r-offset.
struct CouplingTie {
  Entry coupling_entry;
  int side = 0;
  Entry segment_entry;
};

/// Enumerate every entry of the coupling block whose monomial is representable
/// in the predecessor layout (xbar at r-offset `offset_prev`) or the successor
/// layout (xbar at r-offset `offset_next`); entries with no counterpart (for
/// example h_a * h_b) yield no tie.
std::vector<CouplingTie> coupling_constraints(const CouplingLayout& coupling,
                                              const LiftLayout& prev, int offset_prev,
                                              const LiftLayout& next, int offset_next);

/// Generic edge-block matcher underlying coupling_constraints: works for any
/// lifted edge block whose components mix the predecessor time step (ha), the
/// successor time step (hb) and boundary-state coordinates.  Either side may
/// be absent.
std::vector<CouplingTie> match_block_entries(const BlockLayout& edge_block,
                                             const LiftLayout* prev, int offset_prev,
                                             const LiftLayout* next, int offset_next);

/// Boundary-edge layouts for virtual source/target attachment:
///   source: (1, h, 1/h, x, h x, x/h) over the successor time step,
///   target: the same over the predecessor time step.
BlockLayout source_edge_layout(int nx);
BlockLayout target_edge_layout(int nx);

/// Numeric component vector of a lifted block at a point; the block value is
/// the outer product (for unscaled layouts).
Vec evaluate_components(const BlockLayout& layout, double h_prev, double h_next, const Vec& x);

}  // namespace tscale::lift
