// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Native primal-dual interior-point method for block-PSD conic programs in
// standard form:
//
//   minimize    sum_b <C_b, X_b> + c_n^T w + c_f^T f
//   subject to  sum_b <A_pb, X_b> + a_p^T w + g_p^T f = rhs_p
//               X_b PSD,  w >= 0,  f free,
//
// after folding inequality rows into nonnegative slacks.  Directions use
// Nesterov-Todd scaling with a Mehrotra predictor-corrector; the reduced
// Schur system is factorized dense (LAPACK) or sparse (Eigen) depending on
// the coupling pattern.  Infeasible or stalled runs are classified with an
// elastic feasibility solve.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "tscale/conic.hpp"

#ifdef TSCALE_HAVE_LAPACK
#include <lapacke.h>
#endif

namespace tscale::conic {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct BlockTriplet {
  int a, b;
  double coeff;  // applies to the entry value (mirror counted once)
};

struct RowBlockTerms {
  int row;
  std::vector<BlockTriplet> triplets;
};

struct ScalarTerm {
  int row;
  double coeff;
};

// Equality rows produced by the lifted-constraint families are heavily
// redundant (alias ties, cross products); a rank-revealing presolve keeps a
// maximal independent subset so the Schur complement stays well posed.
// Dropped rows are re-checked on the final iterate by the caller.
struct Reduction {
  std::vector<int> kept;
  std::vector<int> dropped;
  bool trivial_infeasible = false;
};

double row_inner(const Row& x, const Row& y) {
  // inner product over canonical entries; off-diagonal block entries carry
  // weight 1/2 so that it matches the symmetric-matrix inner product
  double s = 0;
  size_t i = 0, j = 0;
  // terms assumed sorted by (block, a, b)
  while (i < x.terms.size() && j < y.terms.size()) {
    const Term& a = x.terms[i];
    const Term& b = y.terms[j];
    auto ka = std::tie(a.block, a.a, a.b);
    auto kb = std::tie(b.block, b.a, b.b);
    if (ka < kb) { ++i; continue; }
    if (kb < ka) { ++j; continue; }
    const double w = (a.block != kScalar && a.a != a.b) ? 0.5 : 1.0;
    s += w * a.coeff * b.coeff;
    ++i; ++j;
  }
  return s;
}

Reduction presolve(const ConicProgram& p) {
  Reduction red;
  const auto& rows = p.rows();
  std::vector<char> drop(rows.size(), 0);

  // group equality rows by block support; rows touching scalars are kept
  std::map<std::vector<int>, std::vector<int>> groups;
  std::vector<Row> sorted_rows(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].sense != Sense::kEq) continue;
    if (rows[r].terms.empty()) {
      if (std::abs(rows[r].rhs) > 1e-12)
        red.trivial_infeasible = true;
      else
        drop[r] = 1;
      continue;
    }
    bool has_scalar = false;
    std::vector<int> sig;
    for (const Term& t : rows[r].terms) {
      if (t.block == kScalar) has_scalar = true;
      else if (sig.empty() || sig.back() != t.block) sig.push_back(t.block);
    }
    if (has_scalar) continue;
    std::sort(sig.begin(), sig.end());
    sig.erase(std::unique(sig.begin(), sig.end()), sig.end());
    Row sorted = rows[r];
    std::sort(sorted.terms.begin(), sorted.terms.end(), [](const Term& a, const Term& b) {
      return std::tie(a.block, a.a, a.b) < std::tie(b.block, b.a, b.b);
    });
    sorted_rows[r] = std::move(sorted);
    groups[sig].push_back(static_cast<int>(r));
  }

#ifdef TSCALE_HAVE_LAPACK
  for (auto& [sig, members] : groups) {
    const int g = static_cast<int>(members.size());
    if (g < 2) continue;
    Mat G(g, g);
    std::vector<double> norms(g);
    for (int i = 0; i < g; ++i)
      norms[i] = std::sqrt(std::max(row_inner(sorted_rows[members[i]], sorted_rows[members[i]]),
                                    1e-300));
    for (int i = 0; i < g; ++i)
      for (int j = 0; j <= i; ++j) {
        const double v =
            row_inner(sorted_rows[members[i]], sorted_rows[members[j]]) / (norms[i] * norms[j]);
        G(i, j) = v;
        G(j, i) = v;
      }
    std::vector<lapack_int> piv(g);
    lapack_int rank = 0;
    LAPACKE_dpstrf(LAPACK_COL_MAJOR, 'L', g, G.data(), g, piv.data(), &rank, 1e-12);
    if (getenv("TSCALE_PRESOLVE_DEBUG")) {
      std::printf("presolve group size %d rank %d; trailing pivots:", g, (int)rank);
      for (int k = std::max(0, (int)rank - 6); k < std::min(g, (int)rank + 2); ++k)
        std::printf(" %.2e", G(k, k) * G(k, k));
      std::printf("\n");
    }
    for (int k = rank; k < g; ++k) drop[members[piv[k] - 1]] = 1;
  }
#endif

  for (size_t r = 0; r < rows.size(); ++r)
    (drop[r] ? red.dropped : red.kept).push_back(static_cast<int>(r));
  return red;
}

// Program flattened for the solver: per-block row lists, per-scalar column
// lists, slacks appended as extra nonnegative scalars.
struct Flat {
  int m = 0;       // rows
  int n_nonneg = 0;
  int n_free = 0;
  Vec rhs;
  Vec row_scale;                            // original row = scale * internal row
  std::vector<int> block_dims;
  std::vector<std::vector<RowBlockTerms>> block_rows;  // per block
  std::vector<std::vector<ScalarTerm>> nonneg_cols;    // per nonneg scalar
  std::vector<std::vector<ScalarTerm>> free_cols;      // per free scalar
  std::vector<Mat> C;                       // objective per block
  Vec c_nonneg, c_free;
  std::vector<int> nonneg_of_scalar;        // original scalar -> nonneg index or -1
  std::vector<int> free_of_scalar;
  std::vector<int> slack_of_row;            // row -> slack nonneg index or -1
  std::vector<int> orig_row;                // internal row -> original row index
  int cone_dim = 0;                         // sum of block dims + n_nonneg

  // Cone-preserving equilibration: internal entry (a,b) of block k represents
  // original_entry / (D_k(a) D_k(b)); internal scalar i represents
  // original / e(i).  Rows carry row_scale as before.
  std::vector<Vec> D;
  Vec e_nonneg, e_free;
};

// Ruiz-style equilibration over the kept rows: iteratively balance row
// infinity norms and per-variable column norms, with one diagonal scale per
// PSD block index so that X -> D X D preserves the cone.
void equilibrate(const ConicProgram& p, const std::vector<int>& kept, Flat& f) {
  const int nb = p.num_blocks();
  f.D.resize(nb);
  for (int b = 0; b < nb; ++b) f.D[b] = Vec::Ones(p.block_dim(b));
  f.e_nonneg = Vec::Ones(f.n_nonneg);
  f.e_free = Vec::Ones(f.n_free);
  Vec row_s = Vec::Ones(static_cast<int>(kept.size()));

  for (int pass = 0; pass < 6; ++pass) {
    // column norms per block index / scalar under current scaling
    std::vector<Vec> colmax(nb);
    for (int b = 0; b < nb; ++b) colmax[b] = Vec::Zero(p.block_dim(b));
    Vec colmax_n = Vec::Zero(f.n_nonneg), colmax_f = Vec::Zero(f.n_free);
    for (size_t r = 0; r < kept.size(); ++r) {
      for (const Term& t : p.rows()[kept[r]].terms) {
        if (t.block == kScalar) {
          const int i = t.a;
          if (f.nonneg_of_scalar[i] >= 0) {
            const int k = f.nonneg_of_scalar[i];
            colmax_n(k) = std::max(colmax_n(k), std::abs(t.coeff) * f.e_nonneg(k) * row_s(r));
          } else {
            const int k = f.free_of_scalar[i];
            colmax_f(k) = std::max(colmax_f(k), std::abs(t.coeff) * f.e_free(k) * row_s(r));
          }
        } else {
          const double v =
              std::abs(t.coeff) * f.D[t.block](t.a) * f.D[t.block](t.b) * row_s(r);
          colmax[t.block](t.a) = std::max(colmax[t.block](t.a), v);
          colmax[t.block](t.b) = std::max(colmax[t.block](t.b), v);
        }
      }
    }
    for (int b = 0; b < nb; ++b)
      for (int a = 0; a < p.block_dim(b); ++a)
        if (colmax[b](a) > 0) f.D[b](a) /= std::sqrt(std::sqrt(colmax[b](a)));
    for (int k = 0; k < f.n_nonneg; ++k)
      if (colmax_n(k) > 0) f.e_nonneg(k) /= std::sqrt(colmax_n(k));
    for (int k = 0; k < f.n_free; ++k)
      if (colmax_f(k) > 0) f.e_free(k) /= std::sqrt(colmax_f(k));

    for (size_t r = 0; r < kept.size(); ++r) {
      double m = std::abs(p.rows()[kept[r]].rhs);
      for (const Term& t : p.rows()[kept[r]].terms) {
        double v = std::abs(t.coeff);
        if (t.block == kScalar) {
          const int i = t.a;
          v *= f.nonneg_of_scalar[i] >= 0 ? f.e_nonneg(f.nonneg_of_scalar[i])
                                          : f.e_free(f.free_of_scalar[i]);
        } else {
          v *= f.D[t.block](t.a) * f.D[t.block](t.b);
        }
        m = std::max(m, v);
      }
      row_s(r) = m > 0 ? 1.0 / m : 1.0;
    }
  }
}

Flat flatten(const ConicProgram& p, const std::vector<int>& kept) {
  Flat f;
  f.orig_row = kept;
  const int nb = p.num_blocks();
  f.block_dims.resize(nb);
  f.C.resize(nb);
  for (int b = 0; b < nb; ++b) {
    f.block_dims[b] = p.block_dim(b);
    f.C[b] = Mat::Zero(p.block_dim(b), p.block_dim(b));
  }
  f.block_rows.resize(nb);

  f.nonneg_of_scalar.assign(p.num_scalars(), -1);
  f.free_of_scalar.assign(p.num_scalars(), -1);
  for (int i = 0; i < p.num_scalars(); ++i) {
    if (p.scalar_kind(i) == ScalarKind::kNonneg)
      f.nonneg_of_scalar[i] = f.n_nonneg++;
    else
      f.free_of_scalar[i] = f.n_free++;
  }

  const auto& rows = p.rows();
  f.m = static_cast<int>(kept.size());
  f.rhs.resize(f.m);
  f.row_scale.resize(f.m);
  f.slack_of_row.assign(f.m, -1);
  for (int r = 0; r < f.m; ++r)
    if (rows[kept[r]].sense == Sense::kGe) f.slack_of_row[r] = f.n_nonneg++;

  f.nonneg_cols.resize(f.n_nonneg);
  f.free_cols.resize(f.n_free);
  f.c_nonneg = Vec::Zero(f.n_nonneg);
  f.c_free = Vec::Zero(f.n_free);
  equilibrate(p, kept, f);

  for (const Term& t : p.objective()) {
    if (t.block == kScalar) {
      if (f.nonneg_of_scalar[t.a] >= 0)
        f.c_nonneg(f.nonneg_of_scalar[t.a]) += t.coeff * f.e_nonneg(f.nonneg_of_scalar[t.a]);
      else
        f.c_free(f.free_of_scalar[t.a]) += t.coeff * f.e_free(f.free_of_scalar[t.a]);
    } else {
      Mat& C = f.C[t.block];
      const double c = t.coeff * f.D[t.block](t.a) * f.D[t.block](t.b);
      if (t.a == t.b)
        C(t.a, t.a) += c;
      else {
        C(t.a, t.b) += c / 2;
        C(t.b, t.a) += c / 2;
      }
    }
  }

  std::vector<std::vector<BlockTriplet>> scratch(nb);
  for (int r = 0; r < f.m; ++r) {
    const Row& row = rows[kept[r]];
    double amax = std::abs(row.rhs);
    for (const Term& t : row.terms) {
      double v = std::abs(t.coeff);
      if (t.block == kScalar) {
        v *= f.nonneg_of_scalar[t.a] >= 0 ? f.e_nonneg(f.nonneg_of_scalar[t.a])
                                          : f.e_free(f.free_of_scalar[t.a]);
      } else {
        v *= f.D[t.block](t.a) * f.D[t.block](t.b);
      }
      amax = std::max(amax, v);
    }
    const double scale = amax > 0 ? amax : 1.0;
    f.row_scale(r) = scale;
    const double inv = 1.0 / scale;
    f.rhs(r) = row.rhs * inv;

    for (auto& s : scratch) s.clear();
    for (const Term& t : row.terms) {
      if (t.block == kScalar) {
        if (f.nonneg_of_scalar[t.a] >= 0) {
          const int k = f.nonneg_of_scalar[t.a];
          f.nonneg_cols[k].push_back({r, t.coeff * f.e_nonneg(k) * inv});
        } else {
          const int k = f.free_of_scalar[t.a];
          f.free_cols[k].push_back({r, t.coeff * f.e_free(k) * inv});
        }
      } else {
        scratch[t.block].push_back({t.a, t.b, t.coeff * f.D[t.block](t.a) * f.D[t.block](t.b) * inv});
      }
    }
    for (int b = 0; b < nb; ++b)
      if (!scratch[b].empty()) {
        // merge duplicate entries within the row
        auto& tr = scratch[b];
        std::sort(tr.begin(), tr.end(), [](const BlockTriplet& x, const BlockTriplet& y) {
          return std::tie(x.a, x.b) < std::tie(y.a, y.b);
        });
        std::vector<BlockTriplet> merged;
        for (const auto& t : tr) {
          if (!merged.empty() && merged.back().a == t.a && merged.back().b == t.b)
            merged.back().coeff += t.coeff;
          else
            merged.push_back(t);
        }
        f.block_rows[b].push_back({r, std::move(merged)});
      }
    if (f.slack_of_row[r] >= 0) f.nonneg_cols[f.slack_of_row[r]].push_back({r, -1.0});
  }

  f.cone_dim = f.n_nonneg;
  for (int d : f.block_dims) f.cone_dim += d;
  return f;
}

// <A_p, V> for a symmetric V.
double dot_row_block(const std::vector<BlockTriplet>& tr, const Mat& V) {
  double s = 0;
  for (const auto& t : tr) s += t.coeff * V(t.a, t.b);
  return s;
}

// V += alpha * A_p (symmetric scatter).
void axpy_row_block(const std::vector<BlockTriplet>& tr, double alpha, Mat& V) {
  for (const auto& t : tr) {
    if (t.a == t.b)
      V(t.a, t.a) += alpha * t.coeff;
    else {
      V(t.a, t.b) += alpha * t.coeff / 2;
      V(t.b, t.a) += alpha * t.coeff / 2;
    }
  }
}

// W * A_p * W from W's columns (A_p is sparse symmetric).
void congruence_row(const std::vector<BlockTriplet>& tr, const Mat& W, Mat& out) {
  out.setZero();
  for (const auto& t : tr) {
    const auto wa = W.col(t.a);
    const auto wb = W.col(t.b);
    if (t.a == t.b)
      out.noalias() += t.coeff * (wa * wb.transpose());
    else {
      out.noalias() += (t.coeff / 2) * (wa * wb.transpose());
      out.noalias() += (t.coeff / 2) * (wb * wa.transpose());
    }
  }
}

struct Scaling {
  std::vector<Mat> R, Rinv, W;
  std::vector<Vec> lambda;
  Vec wnt, lam_lin;  // nonneg part
};

// Square factor F with M = F F^T, falling back to an eigenvalue-clamped
// square root when the iterate has drifted to the cone boundary.
Mat robust_factor(const Mat& M) {
  Eigen::LLT<Mat> llt(M);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Mat> eig(M);
  const double floor = std::max(1e-14 * eig.eigenvalues().maxCoeff(), 1e-300);
  Vec lam = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal();
}

// Nesterov-Todd scaling point per block: W Z W = X with W = R R^T,
// R^{-1} X R^{-T} = R^T Z R = diag(lambda).
bool compute_scaling(const std::vector<Mat>& X, const std::vector<Mat>& Z, const Vec& w,
                     const Vec& zeta, Scaling& s) {
  const int nb = static_cast<int>(X.size());
  s.R.resize(nb);
  s.Rinv.resize(nb);
  s.W.resize(nb);
  s.lambda.resize(nb);
  for (int b = 0; b < nb; ++b) {
    Mat Lx = robust_factor(X[b]);
    Mat Lz = robust_factor(Z[b]);
    Eigen::JacobiSVD<Mat> svd(Lz.transpose() * Lx, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec sig = svd.singularValues();
    if (sig.minCoeff() <= 0) return false;
    Vec isqrt = sig.array().sqrt().inverse();
    s.R[b] = Lx * svd.matrixV() * isqrt.asDiagonal();
    s.Rinv[b] = isqrt.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
    s.W[b].noalias() = s.R[b] * s.R[b].transpose();
    s.lambda[b] = sig;
  }
  s.wnt = (w.array() / zeta.array()).sqrt();
  s.lam_lin = (w.array() * zeta.array()).sqrt();
  return true;
}

// Largest step t with X + t*dX staying PSD (exact boundary, no margin).
double max_step_psd(const Mat& X, const Mat& dX) {
  Eigen::LLT<Mat> llt(X);
  Mat S;
  if (llt.info() == Eigen::Success) {
    Mat L = llt.matrixL();
    Mat T = L.template triangularView<Eigen::Lower>().solve(dX).transpose();
    S = L.template triangularView<Eigen::Lower>().solve(T);
  } else {
    // Boundary iterate: fall back to a clamped square factor.
    Mat F = robust_factor(X);
    Mat Fi = F.fullPivLu().inverse();
    S = Fi * dX * Fi.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(S, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues()(0);
  if (lmin >= 0) return kInf;
  return -1.0 / lmin;
}

double max_step_vec(const Vec& x, const Vec& dx) {
  double t = kInf;
  for (int i = 0; i < x.size(); ++i)
    if (dx(i) < 0) t = std::min(t, -x(i) / dx(i));
  return t;
}

// --------------------------------------------------------------------------
// Schur complement solver (dense via LAPACK, sparse via Eigen LDLT)
// --------------------------------------------------------------------------

class SchurSolver {
 public:
  explicit SchurSolver(const Flat& f) : f_(f) {
    ny_ = f.m;
    nf_ = f.n_free;
    n_ = ny_ + nf_;
    size_t pair_estimate = 0;
    for (const auto& br : f.block_rows) pair_estimate += br.size() * br.size();
    dense_ = (n_ <= 700) || (pair_estimate > size_t(0.25 * double(ny_) * double(ny_)));
  }

  bool dense() const { return dense_; }
  bool used_bk() const { return !chol_; }
  mutable double last_solve_resid = 0;
  mutable int last_passes = 0;

  // Assemble M = A_K W A_K^T (+ scalar diagonal) and the free-variable border,
  // with a quasi-definite regularization ridge.
  bool factorize(const Scaling& s, double reg) {
    wnt_sq_ = s.wnt.cwiseAbs2();
    reg_ = reg;
    if (dense_) return factorize_dense(s);
    return factorize_sparse(s);
  }

  // Solve [[M, G_f],[G_f^T, -reg]] [dy; df] = [r1; r2] with one round of
  // iterative refinement; redundant constraint rows make M singular and the
  // ridge alone would otherwise contaminate the direction.
  bool solve(const Vec& r1, const Vec& r2, Vec& dy, Vec& df) const {
    Vec rhs(n_);
    rhs.head(ny_) = r1;
    rhs.tail(nf_) = r2;
    Vec sol(n_);
    if (!solve_once(rhs, sol)) return false;
    const double bn = n_ > 0 ? rhs.cwiseAbs().maxCoeff() : 0.0;
    Vec best_sol = sol;
    double best_rn = n_ > 0 ? (rhs - apply(sol)).cwiseAbs().maxCoeff() : 0.0;
    last_passes = 0;
    for (int pass = 0; pass < 4 && best_rn > 1e-14 * (1.0 + bn); ++pass) {
      Vec resid = rhs - apply(sol);
      Vec corr(n_);
      if (!solve_once(resid, corr)) break;
      sol += corr;
      const double rn = n_ > 0 ? (rhs - apply(sol)).cwiseAbs().maxCoeff() : 0.0;
      ++last_passes;
      if (rn < best_rn) {
        best_rn = rn;
        best_sol = sol;
      } else {
        break;  // refinement stopped contracting
      }
    }
    sol = best_sol;
    last_solve_resid = best_rn / (1.0 + bn);
    dy = sol.head(ny_);
    df = sol.tail(nf_);
    return true;
  }

 private:
  bool factorize_dense(const Scaling& s) {
    M_.setZero(n_, n_);
    Mat V;
    for (size_t b = 0; b < f_.block_rows.size(); ++b) {
      const auto& rows = f_.block_rows[b];
      if (rows.empty()) continue;
      V.resize(f_.block_dims[b], f_.block_dims[b]);
      for (size_t pi = 0; pi < rows.size(); ++pi) {
        congruence_row(rows[pi].triplets, s.W[b], V);
        const int p = rows[pi].row;
        for (size_t qi = 0; qi <= pi; ++qi) {
          const double v = dot_row_block(rows[qi].triplets, V);
          const int q = rows[qi].row;
          M_(std::max(p, q), std::min(p, q)) += v;
        }
      }
    }
    add_scalar_terms([&](int p, int q, double v) { M_(std::max(p, q), std::min(p, q)) += v; });
    for (int j = 0; j < nf_; ++j)
      for (const auto& t : f_.free_cols[j]) M_(ny_ + j, t.row) += t.coeff;
    M_orig_ = M_;  // refinement target: the true (singular) system
    for (int i = 0; i < ny_; ++i) M_(i, i) += reg_;
    for (int j = 0; j < nf_; ++j) M_(ny_ + j, ny_ + j) = -reg_;
    return dense_factor();
  }

  bool factorize_sparse(const Scaling& s) {
    trips_.clear();
    Mat V;
    for (size_t b = 0; b < f_.block_rows.size(); ++b) {
      const auto& rows = f_.block_rows[b];
      if (rows.empty()) continue;
      V.resize(f_.block_dims[b], f_.block_dims[b]);
      for (size_t pi = 0; pi < rows.size(); ++pi) {
        congruence_row(rows[pi].triplets, s.W[b], V);
        const int p = rows[pi].row;
        for (size_t qi = 0; qi <= pi; ++qi) {
          const double v = dot_row_block(rows[qi].triplets, V);
          const int q = rows[qi].row;
          trips_.emplace_back(std::max(p, q), std::min(p, q), v);
        }
      }
    }
    add_scalar_terms([&](int p, int q, double v) {
      trips_.emplace_back(std::max(p, q), std::min(p, q), v);
    });
    for (int j = 0; j < nf_; ++j)
      for (const auto& t : f_.free_cols[j]) trips_.emplace_back(ny_ + j, t.row, t.coeff);
    K_.resize(n_, n_);
    K_.setFromTriplets(trips_.begin(), trips_.end());
    K_.makeCompressed();
    auto ridged = trips_;
    for (int i = 0; i < ny_; ++i) ridged.emplace_back(i, i, reg_);
    for (int j = 0; j < nf_; ++j) ridged.emplace_back(ny_ + j, ny_ + j, -reg_);
    Eigen::SparseMatrix<double> Kr(n_, n_);
    Kr.setFromTriplets(ridged.begin(), ridged.end());
    Kr.makeCompressed();
    ldlt_.compute(Kr.selfadjointView<Eigen::Lower>());
    return ldlt_.info() == Eigen::Success;
  }

  Vec apply(const Vec& v) const {
    if (dense_) return M_orig_.selfadjointView<Eigen::Lower>() * v;
    return K_.selfadjointView<Eigen::Lower>() * v;
  }

  template <typename F>
  void add_scalar_terms(F&& put) const {
    for (int i = 0; i < f_.n_nonneg; ++i) {
      const double w2 = wnt_sq_(i);
      const auto& col = f_.nonneg_cols[i];
      for (size_t a = 0; a < col.size(); ++a)
        for (size_t c = 0; c <= a; ++c)
          put(col[a].row, col[c].row, col[a].coeff * col[c].coeff * w2);
    }
  }

  bool dense_factor() {
    M_factor_ = M_;
#ifdef TSCALE_HAVE_LAPACK
    if (nf_ == 0) {
      // Pure cone: Cholesky or bust; a failure means the ridge must grow,
      // which the caller handles.  Bunch-Kaufman on these near-singular
      // matrices silently produces unusable factors.
      lapack_int info = LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', n_, M_factor_.data(), n_);
      chol_ = true;
      return info == 0;
    }
    ipiv_.resize(n_);
    lapack_int info = LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n_, M_factor_.data(), n_, ipiv_.data());
    chol_ = false;
    return info == 0;
#else
    eigen_lu_.compute(Mat(M_factor_.selfadjointView<Eigen::Lower>()));
    chol_ = false;
    return true;
#endif
  }

  bool solve_once(const Vec& rhs, Vec& sol) const {
    if (dense_) return solve_dense(rhs, sol);
    sol = ldlt_.solve(rhs);
    return ldlt_.info() == Eigen::Success;
  }

  bool solve_dense(const Vec& rhs, Vec& sol) const {
#ifdef TSCALE_HAVE_LAPACK
    sol = rhs;
    lapack_int info;
    if (chol_)
      info = LAPACKE_dpotrs(LAPACK_COL_MAJOR, 'L', n_, 1, M_factor_.data(), n_, sol.data(), n_);
    else
      info = LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n_, 1, M_factor_.data(), n_, ipiv_.data(),
                            sol.data(), n_);
    return info == 0;
#else
    sol = eigen_lu_.solve(rhs);
    return true;
#endif
  }

  const Flat& f_;
  double reg_ = 0;
  int ny_ = 0, nf_ = 0, n_ = 0;
  bool dense_ = true;
  bool chol_ = true;
  Vec wnt_sq_;
  mutable Mat M_;
  Mat M_factor_;
  Mat M_orig_;
  Eigen::SparseMatrix<double> K_;
#ifdef TSCALE_HAVE_LAPACK
  std::vector<lapack_int> ipiv_;
#else
  Eigen::PartialPivLU<Mat> eigen_lu_;
#endif
  std::vector<Eigen::Triplet<double>> trips_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
};

// Mutable per-iteration state.
struct State {
  std::vector<Mat> X, Z;
  Vec w, zeta, y, fvar;
};

struct Direction {
  std::vector<Mat> dX, dZ;
  Vec dw, dzeta, dy, df;
};

struct Residuals {
  Vec rp;                // rhs - A x
  std::vector<Mat> Rd;   // C - A^T y - Z
  Vec rd_n, rd_f;
  double pinf = 0, dinf = 0;
};

class Ipm {
 public:
  Ipm(const ConicProgram& p, const SolverSettings& st)
      : prog_(p), st_(st), red_(presolve(p)), f_(flatten(p, red_.kept)) {}

  ConicSolution run();

 private:
  void residuals(const State& s, Residuals& r) const;
  double gap(const State& s) const;
  void apply_A(const State& s, Vec& out) const;      // out_p = (A x)_p
  void apply_AT_y(const Vec& y, std::vector<Mat>& MB, Vec& vn, Vec& vf) const;
  bool direction(const State& s, const Scaling& sc, SchurSolver& schur, const Residuals& r,
                 const std::vector<Mat>& D, const Vec& d_lin, Direction& d) const;
  ConicSolution finalize(const State& s, SolveStatus status, int iters, double t0_gap,
                         double elapsed) const;
  SolveStatus classify(const State& s) const;
  bool dropped_rows_consistent(const State& s) const;

  const ConicProgram& prog_;
  SolverSettings st_;
  Reduction red_;
  Flat f_;
  double last_ap_ = 0, last_ad_ = 0, last_sigma_ = 0;
};

void Ipm::apply_A(const State& s, Vec& out) const {
  std::vector<long double> acc(f_.m, 0.0L);
  for (size_t b = 0; b < f_.block_rows.size(); ++b)
    for (const auto& rb : f_.block_rows[b]) {
      long double v = 0;
      for (const auto& t : rb.triplets) v += (long double)t.coeff * s.X[b](t.a, t.b);
      acc[rb.row] += v;
    }
  for (int i = 0; i < f_.n_nonneg; ++i)
    for (const auto& t : f_.nonneg_cols[i]) acc[t.row] += (long double)t.coeff * s.w(i);
  for (int j = 0; j < f_.n_free; ++j)
    for (const auto& t : f_.free_cols[j]) acc[t.row] += (long double)t.coeff * s.fvar(j);
  out.resize(f_.m);
  for (int r = 0; r < f_.m; ++r) out(r) = static_cast<double>(acc[r]);
}

void Ipm::apply_AT_y(const Vec& y, std::vector<Mat>& MB, Vec& vn, Vec& vf) const {
  // Accumulate in extended precision: the dual iterates of degenerate
  // programs carry huge, nearly cancelling components and the difference is
  // what enters the step.
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  for (size_t b = 0; b < f_.block_rows.size(); ++b) {
    LMat acc = LMat::Zero(f_.block_dims[b], f_.block_dims[b]);
    for (const auto& rb : f_.block_rows[b]) {
      const long double alpha = y(rb.row);
      for (const auto& t : rb.triplets) {
        if (t.a == t.b)
          acc(t.a, t.a) += alpha * t.coeff;
        else {
          acc(t.a, t.b) += alpha * t.coeff / 2;
          acc(t.b, t.a) += alpha * t.coeff / 2;
        }
      }
    }
    MB[b] = acc.cast<double>();
  }
  vn.setZero(f_.n_nonneg);
  for (int i = 0; i < f_.n_nonneg; ++i) {
    long double acc = 0;
    for (const auto& t : f_.nonneg_cols[i]) acc += (long double)t.coeff * y(t.row);
    vn(i) = static_cast<double>(acc);
  }
  vf.setZero(f_.n_free);
  for (int j = 0; j < f_.n_free; ++j) {
    long double acc = 0;
    for (const auto& t : f_.free_cols[j]) acc += (long double)t.coeff * y(t.row);
    vf(j) = static_cast<double>(acc);
  }
}

void Ipm::residuals(const State& s, Residuals& r) const {
  apply_A(s, r.rp);
  r.rp = f_.rhs - r.rp;

  std::vector<Mat> ATy(f_.block_rows.size());
  Vec vn, vf;
  apply_AT_y(s.y, ATy, vn, vf);
  r.Rd.resize(f_.block_rows.size());
  double dmax = 0;
  for (size_t b = 0; b < r.Rd.size(); ++b) {
    r.Rd[b] = f_.C[b] - ATy[b] - s.Z[b];
    dmax = std::max(dmax, r.Rd[b].cwiseAbs().maxCoeff());
  }
  r.rd_n = f_.c_nonneg - vn - s.zeta;
  r.rd_f = f_.c_free - vf;
  if (r.rd_n.size() > 0) dmax = std::max(dmax, r.rd_n.cwiseAbs().maxCoeff());
  if (r.rd_f.size() > 0) dmax = std::max(dmax, r.rd_f.cwiseAbs().maxCoeff());

  double bmax = f_.m > 0 ? f_.rhs.cwiseAbs().maxCoeff() : 0.0;
  double cmax = 0;
  for (const auto& C : f_.C) if (C.size()) cmax = std::max(cmax, C.cwiseAbs().maxCoeff());
  if (f_.c_nonneg.size()) cmax = std::max(cmax, f_.c_nonneg.cwiseAbs().maxCoeff());
  if (f_.c_free.size()) cmax = std::max(cmax, f_.c_free.cwiseAbs().maxCoeff());
  r.pinf = (f_.m > 0 ? r.rp.cwiseAbs().maxCoeff() : 0.0) / (1.0 + bmax);
  r.dinf = dmax / (1.0 + cmax);
}

double Ipm::gap(const State& s) const {
  double g = s.w.dot(s.zeta);
  for (size_t b = 0; b < s.X.size(); ++b) g += s.X[b].cwiseProduct(s.Z[b]).sum();
  return g;
}

bool Ipm::direction(const State& s, const Scaling& sc, SchurSolver& schur, const Residuals& r,
                    const std::vector<Mat>& D, const Vec& d_lin, Direction& d) const {
  const size_t nb = s.X.size();
  // N_b = R G R^T with the Lyapunov division G_ij = 2 D_ij / (lam_i + lam_j).
  std::vector<Mat> N(nb);
  for (size_t b = 0; b < nb; ++b) {
    const Vec& lam = sc.lambda[b];
    Mat G = D[b];
    for (int i = 0; i < G.rows(); ++i)
      for (int j = 0; j < G.cols(); ++j) G(i, j) = 2.0 * G(i, j) / (lam(i) + lam(j));
    N[b].noalias() = sc.R[b] * G * sc.R[b].transpose();
  }
  Vec n_lin = sc.wnt.cwiseProduct(d_lin.cwiseQuotient(sc.lam_lin));

  // Right-hand side: rp - A(N) + A(W Rd W) applied per part.
  Vec r1 = r.rp;
  Mat tmp;
  for (size_t b = 0; b < nb; ++b) {
    tmp.noalias() = sc.W[b] * r.Rd[b] * sc.W[b];
    tmp -= N[b];
    for (const auto& rb : f_.block_rows[b]) r1(rb.row) += dot_row_block(rb.triplets, tmp);
  }
  for (int i = 0; i < f_.n_nonneg; ++i) {
    const double v = sc.wnt(i) * sc.wnt(i) * r.rd_n(i) - n_lin(i);
    for (const auto& t : f_.nonneg_cols[i]) r1(t.row) += t.coeff * v;
  }

  if (!schur.solve(r1, r.rd_f, d.dy, d.df)) return false;

  // Back-substitute.
  std::vector<Mat> ATdy(nb);
  Vec vn, vf;
  apply_AT_y(d.dy, ATdy, vn, vf);
  d.dX.resize(nb);
  d.dZ.resize(nb);
  for (size_t b = 0; b < nb; ++b) {
    d.dZ[b] = r.Rd[b] - ATdy[b];
    d.dX[b].noalias() = N[b] - sc.W[b] * d.dZ[b] * sc.W[b];
  }
  d.dzeta = r.rd_n - vn;
  d.dw = n_lin - sc.wnt.cwiseAbs2().cwiseProduct(d.dzeta);

  // Step refinement: cancellation in A^T dy (huge, nearly opposing dual
  // components on degenerate programs) leaks into dX through W(.)W.  The
  // dual and centrality equations hold by construction, so the whole error
  // shows up in the primal equation; correct it through the same
  // factorization with a zero centrality target.
  const double rp_norm = 1.0 + (f_.m > 0 ? r.rp.cwiseAbs().maxCoeff() : 0.0);
  auto primal_residual_of = [&](const Direction& dir, Vec& res) {
    std::vector<long double> acc(f_.m, 0.0L);
    for (size_t b = 0; b < nb; ++b)
      for (const auto& rb : f_.block_rows[b]) {
        long double v = 0;
        for (const auto& t : rb.triplets) v += (long double)t.coeff * dir.dX[b](t.a, t.b);
        acc[rb.row] += v;
      }
    for (int i = 0; i < f_.n_nonneg; ++i)
      for (const auto& t : f_.nonneg_cols[i]) acc[t.row] += (long double)t.coeff * dir.dw(i);
    for (int j = 0; j < f_.n_free; ++j)
      for (const auto& t : f_.free_cols[j]) acc[t.row] += (long double)t.coeff * dir.df(j);
    res.resize(f_.m);
    for (int rr = 0; rr < f_.m; ++rr) res(rr) = r.rp(rr) - static_cast<double>(acc[rr]);
  };

  Vec res_p;
  primal_residual_of(d, res_p);
  double res_norm = f_.m > 0 ? res_p.cwiseAbs().maxCoeff() : 0.0;
  for (int pass = 0; pass < 5 && res_norm > 1e-11 * rp_norm; ++pass) {
    Vec dy2, df2;
    if (!schur.solve(res_p, Vec::Zero(f_.n_free), dy2, df2)) break;
    Direction trial = d;
    std::vector<Mat> ATdy2(nb);
    Vec vn2, vf2;
    apply_AT_y(dy2, ATdy2, vn2, vf2);
    trial.dy += dy2;
    trial.df += df2;
    for (size_t b = 0; b < nb; ++b) {
      trial.dZ[b] -= ATdy2[b];
      trial.dX[b].noalias() += sc.W[b] * ATdy2[b] * sc.W[b];
    }
    trial.dzeta -= vn2;
    trial.dw += sc.wnt.cwiseAbs2().cwiseProduct(vn2);
    Vec res_trial;
    primal_residual_of(trial, res_trial);
    const double trial_norm = f_.m > 0 ? res_trial.cwiseAbs().maxCoeff() : 0.0;
    if (trial_norm >= 0.9 * res_norm) break;  // refinement stopped contracting
    d = std::move(trial);
    res_p = std::move(res_trial);
    res_norm = trial_norm;
  }
  return true;
}

// Rows removed by the rank presolve are implied combinations when the
// program is consistent; on the solved iterate they must hold to tolerance.
bool Ipm::dropped_rows_consistent(const State& s) const {
  for (int r : red_.dropped) {
    const Row& row = prog_.rows()[r];
    double v = 0;
    double scale = std::abs(row.rhs);
    for (const Term& t : row.terms) {
      scale = std::max(scale, std::abs(t.coeff));
      if (t.block == kScalar) {
        const int i = t.a;
        v += t.coeff * (f_.nonneg_of_scalar[i] >= 0
                            ? s.w(f_.nonneg_of_scalar[i]) * f_.e_nonneg(f_.nonneg_of_scalar[i])
                            : s.fvar(f_.free_of_scalar[i]) * f_.e_free(f_.free_of_scalar[i]));
      } else {
        v += t.coeff * s.X[t.block](t.a, t.b) * f_.D[t.block](t.a) * f_.D[t.block](t.b);
      }
    }
    if (std::abs(v - row.rhs) > 1e4 * st_.tol_feas * std::max(1.0, scale)) {
      if (st_.verbose)
        std::printf("dropped row %d [%s] violated by %.3e (scale %.1e)\n", r, row.tag.c_str(),
                    std::abs(v - row.rhs), scale);
      return false;
    }
  }
  return true;
}

SolveStatus Ipm::classify(const State& s) const {
  // Elastic feasibility: minimize a single nonnegative violation bound.
  ConicProgram elastic;
  for (int b = 0; b < prog_.num_blocks(); ++b) elastic.add_block(prog_.block_name(b), prog_.block_dim(b));
  for (int i = 0; i < prog_.num_scalars(); ++i)
    elastic.add_scalar(prog_.scalar_name(i), prog_.scalar_kind(i));
  const int v = elastic.add_scalar("elastic_violation", ScalarKind::kNonneg);
  elastic.obj_add({kScalar, v, v, 1.0});
  double scale_max = 1.0;
  for (const Row& row : prog_.rows()) {
    scale_max = std::max(scale_max, std::abs(row.rhs));
    Row up;
    up.terms = row.terms;
    up.terms.push_back({kScalar, v, v, 1.0});
    up.rhs = row.rhs;
    up.sense = Sense::kGe;
    up.tag = row.tag;
    elastic.add_row(up);
    if (row.sense == Sense::kEq) {
      Row dn;
      dn.terms.reserve(row.terms.size() + 1);
      for (Term t : row.terms) {
        t.coeff = -t.coeff;
        dn.terms.push_back(t);
      }
      dn.terms.push_back({kScalar, v, v, 1.0});
      dn.rhs = -row.rhs;
      dn.sense = Sense::kGe;
      dn.tag = row.tag;
      elastic.add_row(dn);
    }
  }
  SolverSettings es = st_;
  es.classify_failures = false;
  es.max_iter = std::min(st_.max_iter, 100);
  es.tol_feas = std::max(st_.tol_feas, 1e-8);
  es.tol_gap = std::max(st_.tol_gap, 1e-7);
  ConicSolution sol = solve(elastic, es);
  if (sol.status == SolveStatus::kOptimal &&
      sol.objective > std::max(1e-6, 1e3 * st_.tol_feas) * scale_max)
    return SolveStatus::kPrimalInfeasible;

  // Unboundedness signature: interior iterate drove the objective to -inf.
  double pobj = s.w.dot(f_.c_nonneg) + s.fvar.dot(f_.c_free);
  for (size_t b = 0; b < s.X.size(); ++b) pobj += f_.C[b].cwiseProduct(s.X[b]).sum();
  if (pobj < -1e10 * scale_max) return SolveStatus::kDualInfeasible;
  return SolveStatus::kNumericalLimit;
}

ConicSolution Ipm::finalize(const State& s, SolveStatus status, int iters, double mu,
                            double elapsed) const {
  ConicSolution out;
  out.status = status;
  out.blocks.resize(s.X.size());
  out.dual_blocks.resize(s.Z.size());
  for (size_t b = 0; b < s.X.size(); ++b) {
    // internal X is D^{-1} X_orig D^{-1}: undo by congruence with D
    out.blocks[b] = f_.D[b].asDiagonal() * s.X[b] * f_.D[b].asDiagonal();
    out.dual_blocks[b] = f_.D[b].cwiseInverse().asDiagonal() * s.Z[b] *
                         f_.D[b].cwiseInverse().asDiagonal();
  }
  out.scalars.resize(prog_.num_scalars());
  for (int i = 0; i < prog_.num_scalars(); ++i)
    out.scalars(i) = f_.nonneg_of_scalar[i] >= 0
                         ? s.w(f_.nonneg_of_scalar[i]) * f_.e_nonneg(f_.nonneg_of_scalar[i])
                         : s.fvar(f_.free_of_scalar[i]) * f_.e_free(f_.free_of_scalar[i]);
  out.dual_rows = Vec::Zero(prog_.rows().size());
  for (int r = 0; r < f_.m; ++r) out.dual_rows(f_.orig_row[r]) = s.y(r) / f_.row_scale(r);
  double pobj = s.w.dot(f_.c_nonneg) + s.fvar.dot(f_.c_free);
  for (size_t b = 0; b < s.X.size(); ++b) pobj += f_.C[b].cwiseProduct(s.X[b]).sum();
  out.objective = pobj + prog_.objective_constant();
  out.dual_objective = f_.rhs.dot(s.y) + prog_.objective_constant();
  out.stats.iterations = iters;
  out.stats.wall_time_s = elapsed;
  out.stats.complementarity = mu;
  Residuals r;
  residuals(s, r);
  out.stats.primal_residual = r.pinf;
  out.stats.dual_residual = r.dinf;
  const double denom = 1.0 + std::max(std::abs(pobj), std::abs(f_.rhs.dot(s.y)));
  out.stats.gap = std::abs(pobj - f_.rhs.dot(s.y)) / denom;
  return out;
}

ConicSolution Ipm::run() {
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  prog_.check_well_formed();
  const int nb = prog_.num_blocks();
  const double nu = static_cast<double>(f_.cone_dim);
  if (f_.cone_dim == 0) throw SolveError("program has no cone variables");
  if (red_.trivial_infeasible) {
    State empty;
    empty.X.resize(nb);
    empty.Z.resize(nb);
    for (int b = 0; b < nb; ++b) {
      empty.X[b] = Mat::Zero(f_.block_dims[b], f_.block_dims[b]);
      empty.Z[b] = Mat::Zero(f_.block_dims[b], f_.block_dims[b]);
    }
    empty.w = Vec::Zero(f_.n_nonneg);
    empty.zeta = Vec::Zero(f_.n_nonneg);
    empty.y = Vec::Zero(f_.m);
    empty.fvar = Vec::Zero(f_.n_free);
    return finalize(empty, SolveStatus::kPrimalInfeasible, 0, 0.0, elapsed());
  }

  // Scale-aware cold start.
  double bmax = f_.m > 0 ? f_.rhs.cwiseAbs().maxCoeff() : 0.0;
  double cmax = 0;
  for (const auto& C : f_.C) if (C.size()) cmax = std::max(cmax, C.cwiseAbs().maxCoeff());
  if (f_.c_nonneg.size()) cmax = std::max(cmax, f_.c_nonneg.cwiseAbs().maxCoeff());
  if (f_.c_free.size()) cmax = std::max(cmax, f_.c_free.cwiseAbs().maxCoeff());
  const double xi_p = std::max(1.0, bmax);
  const double xi_d = std::max(1.0, cmax);

  State s;
  s.X.resize(nb);
  s.Z.resize(nb);
  for (int b = 0; b < nb; ++b) {
    s.X[b] = xi_p * Mat::Identity(f_.block_dims[b], f_.block_dims[b]);
    s.Z[b] = xi_d * Mat::Identity(f_.block_dims[b], f_.block_dims[b]);
  }
  s.w = Vec::Constant(f_.n_nonneg, xi_p);
  s.zeta = Vec::Constant(f_.n_nonneg, xi_d);
  s.y = Vec::Zero(f_.m);
  s.fvar = Vec::Zero(f_.n_free);

  SchurSolver schur(f_);
  double reg = st_.static_reg;
  Residuals r;
  Scaling sc;
  Direction aff, cor;
  int stall = 0;
  State best = s;
  double best_merit = kInf;
  int best_iter = 0;
  int since_best = 0;

  for (int iter = 0; iter < st_.max_iter; ++iter) {
    residuals(s, r);
    const double g = gap(s);
    const double mu = g / nu;
    if (!(g > 0)) {  // iterate left the cone: revert to the best point seen
      s = best;
      break;
    }
    double pobj = s.w.dot(f_.c_nonneg) + s.fvar.dot(f_.c_free);
    for (int b = 0; b < nb; ++b) pobj += f_.C[b].cwiseProduct(s.X[b]).sum();
    const double dobj = f_.rhs.dot(s.y);
    const double relgap = std::abs(pobj - dobj) / (1.0 + std::max(std::abs(pobj), std::abs(dobj)));

    if (st_.verbose)
      std::printf("it %3d  pobj % .6e  dobj % .6e  gap %.2e  pinf %.2e  dinf %.2e  mu %.2e  reg %.1e  ap %.2e ad %.2e sg %.2e\n",
                  iter, pobj, dobj, relgap, r.pinf, r.dinf, mu, reg, last_ap_, last_ad_, last_sigma_);

    const double merit = r.pinf + r.dinf + relgap;
    if (merit < 0.995 * best_merit) {
      best_merit = merit;
      best = s;
      best_iter = iter;
      since_best = 0;
    } else if (++since_best >= 40) {
      s = best;  // a long stretch without real progress: stop from the best point
      break;
    }

    if (r.pinf <= st_.tol_feas && r.dinf <= st_.tol_feas && relgap <= st_.tol_gap) {
      if (dropped_rows_consistent(s)) return finalize(s, SolveStatus::kOptimal, iter, mu, elapsed());
      break;  // a presolved-away row is violated: fall through to classification
    }
    if (pobj < -1e12 * std::max(1.0, bmax) && r.pinf <= 1e-6)
      return finalize(s, SolveStatus::kDualInfeasible, iter, mu, elapsed());
    if (elapsed() > st_.time_limit_s || stall >= 4) break;

    if (!compute_scaling(s.X, s.Z, s.w, s.zeta, sc)) {
      if (st_.verbose) std::printf("scaling failed\n");
      break;
    }
    if (st_.verbose >= 2) {
      for (int b = 0; b < std::min(nb, 1); ++b) {
        const double nt_err = (sc.W[b] * s.Z[b] * sc.W[b] - s.X[b]).norm() / s.X[b].norm();
        const double lmin = sc.lambda[b].minCoeff(), lmax = sc.lambda[b].maxCoeff();
        std::printf("   [nt] err %.2e  lam [%.2e, %.2e]  sprd %.1e\n", nt_err, lmin * lmin,
                    lmax * lmax, (lmax * lmax) / std::max(lmin * lmin, 1e-300));
      }
    }
    bool factored = false;
    for (int attempt = 0; attempt < 6 && !factored; ++attempt) {
      factored = schur.factorize(sc, reg);
      if (!factored) reg = std::max(reg * 100, 1e-10);
    }
    if (!factored) break;

    // Predictor: full residuals, target -lambda^2.
    std::vector<Mat> D(nb);
    for (int b = 0; b < nb; ++b) D[b] = Mat((-sc.lambda[b].cwiseAbs2()).asDiagonal());
    Vec d_lin = -sc.lam_lin.cwiseAbs2();
    if (!direction(s, sc, schur, r, D, d_lin, aff)) break;

    double ap = 1.0, ad = 1.0;
    for (int b = 0; b < nb; ++b) {
      ap = std::min(ap, max_step_psd(s.X[b], aff.dX[b]));
      ad = std::min(ad, max_step_psd(s.Z[b], aff.dZ[b]));
    }
    ap = std::min(ap, max_step_vec(s.w, aff.dw));
    ad = std::min(ad, max_step_vec(s.zeta, aff.dzeta));

    // Mehrotra centering parameter from the affine trial point.
    double g_aff = (s.w + ap * aff.dw).dot(s.zeta + ad * aff.dzeta);
    for (int b = 0; b < nb; ++b)
      g_aff += (s.X[b] + ap * aff.dX[b]).cwiseProduct(s.Z[b] + ad * aff.dZ[b]).sum();
    g_aff = std::max(g_aff, 0.0);
    double sigma = std::pow(g_aff / g, 3.0);
    sigma = std::clamp(sigma, 1e-8, 0.999);

    // Corrector: recenter and subtract the second-order term.
    for (int b = 0; b < nb; ++b) {
      Mat U = sc.Rinv[b] * aff.dX[b] * sc.Rinv[b].transpose();
      Mat V = sc.R[b].transpose() * aff.dZ[b] * sc.R[b];
      Mat UV = U * V;
      D[b] = -Mat(sc.lambda[b].cwiseAbs2().asDiagonal()) - 0.5 * (UV + UV.transpose());
      D[b].diagonal().array() += sigma * g / nu;
    }
    d_lin = -sc.lam_lin.cwiseAbs2() - aff.dw.cwiseQuotient(sc.wnt).cwiseProduct(sc.wnt.cwiseProduct(aff.dzeta));
    d_lin.array() += sigma * g / nu;
    if (!direction(s, sc, schur, r, D, d_lin, cor)) break;

    ap = 1.0;
    ad = 1.0;
    for (int b = 0; b < nb; ++b) {
      ap = std::min(ap, max_step_psd(s.X[b], cor.dX[b]));
      ad = std::min(ad, max_step_psd(s.Z[b], cor.dZ[b]));
    }
    ap = std::min(ap, max_step_vec(s.w, cor.dw));
    ad = std::min(ad, max_step_vec(s.zeta, cor.dzeta));
    const double tau = 0.99;
    ap = std::min(1.0, tau * ap);
    ad = std::min(1.0, tau * ad);

    if (ap < 1e-8 && ad < 1e-8)
      ++stall;
    else
      stall = 0;

    if (st_.verbose >= 2) {
      double ap_blk = 1.0, ap_w = max_step_vec(s.w, cor.dw);
      double ad_blk = 1.0, ad_z = max_step_vec(s.zeta, cor.dzeta);
      for (int b = 0; b < nb; ++b) {
        ap_blk = std::min(ap_blk, max_step_psd(s.X[b], cor.dX[b]));
        ad_blk = std::min(ad_blk, max_step_psd(s.Z[b], cor.dZ[b]));
      }
      Vec Adx(f_.m);
      {
        State tmp = s;
        for (int b = 0; b < nb; ++b) tmp.X[b] = cor.dX[b];
        tmp.w = cor.dw;
        tmp.fvar = cor.df;
        apply_A(tmp, Adx);
      }
      const double newton_res = (Adx - r.rp).cwiseAbs().maxCoeff();
      // complementarity spectrum spread
      double lam_min = 1e300, lam_max = 0;
      for (int b = 0; b < nb; ++b) {
        lam_min = std::min(lam_min, (double)sc.lambda[b].minCoeff());
        lam_max = std::max(lam_max, (double)sc.lambda[b].maxCoeff());
      }
      if (f_.n_nonneg > 0) {
        lam_min = std::min(lam_min, (double)sc.lam_lin.minCoeff());
        lam_max = std::max(lam_max, (double)sc.lam_lin.maxCoeff());
      }
      std::printf("   [dir] ap: blk %.1e w %.1e | ad: blk %.1e z %.1e | res %.1e | lam %.1e..%.1e mu %.1e | schur res %.1e passes %d bk %d\n",
                  ap_blk, ap_w, ad_blk, ad_z, newton_res, lam_min * lam_min, lam_max * lam_max,
                  gap(s) / nu, schur.last_solve_resid, schur.last_passes, (int)schur.used_bk());
    }
    last_ap_ = ap; last_ad_ = ad; last_sigma_ = sigma;
    for (int b = 0; b < nb; ++b) {
      s.X[b] += ap * cor.dX[b];
      s.Z[b] += ad * cor.dZ[b];
    }
    s.w += ap * cor.dw;
    s.zeta += ad * cor.dzeta;
    s.y += ad * cor.dy;
    s.fvar += ap * cor.df;
  }

  // No convergence: report from the best iterate, classifying if allowed.
  if (best_merit < kInf) s = best;
  residuals(s, r);
  const double mu = gap(s) / nu;
  // A best iterate that meets the tolerances can still be optimal (the loop
  // may have broken before revisiting the convergence test).
  double pobj = s.w.dot(f_.c_nonneg) + s.fvar.dot(f_.c_free);
  for (int b = 0; b < nb; ++b) pobj += f_.C[b].cwiseProduct(s.X[b]).sum();
  const double dobj = f_.rhs.dot(s.y);
  const double relgap = std::abs(pobj - dobj) / (1.0 + std::max(std::abs(pobj), std::abs(dobj)));
  if (r.pinf <= st_.tol_feas && r.dinf <= st_.tol_feas && relgap <= st_.tol_gap &&
      dropped_rows_consistent(s))
    return finalize(s, SolveStatus::kOptimal, best_iter, mu, elapsed());
  if (!st_.classify_failures)
    return finalize(s, SolveStatus::kNumericalLimit, st_.max_iter, mu, elapsed());
  SolveStatus cls = classify(s);
  return finalize(s, cls, st_.max_iter, mu, elapsed());
}

}  // namespace

ConicSolution solve(const ConicProgram& program, const SolverSettings& settings) {
  Ipm ipm(program, settings);
  return ipm.run();
}

}  // namespace tscale::conic
