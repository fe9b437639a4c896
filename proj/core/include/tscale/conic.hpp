// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "tscale/types.hpp"

namespace tscale::conic {

inline constexpr int kScalar = -1;  // Term::block value addressing a scalar variable

/// One coefficient of a linear row or objective: either `coeff * X_block[a,b]`
/// (with a <= b; the coefficient applies to the entry value, counting the
/// symmetric mirror once) or, when block == kScalar, `coeff * w[a]`.
struct Term {
  int block = kScalar;
  int a = 0;
  int b = 0;
  double coeff = 0;
};

enum class Sense : uint8_t { kEq, kGe };

/// Linear row  sum(terms) (=, >=) rhs  with a provenance tag naming the
/// constraint family that produced it.
struct Row {
  std::vector<Term> terms;
  double rhs = 0;
  Sense sense = Sense::kEq;
  std::string tag;
};

enum class ScalarKind : uint8_t { kNonneg, kFree };

/// Block-PSD plus scalar-variable program in standard conic form:
///   minimize    sum_b <C_b, X_b> + c^T w + constant
///   subject to  rows over block entries and scalars,
///               X_b PSD, nonneg scalars >= 0, free scalars unrestricted.
class ConicProgram {
 public:
  int add_block(std::string name, int dim);
  int add_scalar(std::string name, ScalarKind kind);
  void add_row(Row row) { rows_.push_back(std::move(row)); }
  void obj_add(Term t) { objective_.push_back(t); }
  void obj_add_constant(double c) { objective_constant_ += c; }

  int num_blocks() const { return static_cast<int>(block_dims_.size()); }
  int num_scalars() const { return static_cast<int>(scalar_kinds_.size()); }
  int block_dim(int b) const { return block_dims_.at(b); }
  const std::string& block_name(int b) const { return block_names_.at(b); }
  ScalarKind scalar_kind(int i) const { return scalar_kinds_.at(i); }
  const std::string& scalar_name(int i) const { return scalar_names_.at(i); }
  const std::vector<Row>& rows() const { return rows_; }
  std::vector<Row>& mutable_rows() { return rows_; }
  const std::vector<Term>& objective() const { return objective_; }
  double objective_constant() const { return objective_constant_; }

  /// Throws SolveError when an index is out of range or an entry is not
  /// referenced canonically (a <= b).
  void check_well_formed() const;

  /// Documented debug dump (block sizes, triplet rows, provenance tags) for
  /// cross-implementation diffing.
  nlohmann::json debug_dump() const;

 private:
  std::vector<std::string> block_names_;
  std::vector<int> block_dims_;
  std::vector<std::string> scalar_names_;
  std::vector<ScalarKind> scalar_kinds_;
  std::vector<Term> objective_;
  double objective_constant_ = 0;
  std::vector<Row> rows_;
};

enum class SolveStatus : uint8_t { kOptimal, kPrimalInfeasible, kDualInfeasible, kNumericalLimit };

std::string to_string(SolveStatus s);

struct SolveStats {
  int iterations = 0;
  double wall_time_s = 0;
  double primal_residual = 0;
  double dual_residual = 0;
  double gap = 0;            // relative primal-dual objective gap
  double complementarity = 0;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::kNumericalLimit;
  std::vector<Mat> blocks;      // primal PSD blocks
  Vec scalars;                  // primal scalar values
  Vec dual_rows;                // multiplier per row
  std::vector<Mat> dual_blocks; // dual PSD blocks
  double objective = 0;         // includes the program's constant
  double dual_objective = 0;
  SolveStats stats;

  /// Value of a linear expression over this solution.
  double value(const std::vector<Term>& terms) const;

  /// Solved to tolerance, or stopped with diagnostics tight enough for
  /// bounding work.  Heavily degenerate relaxations (every input saturated at
  /// a bang-bang optimum) can leave the interior-point method short of the
  /// full gap tolerance while the residuals are already excellent; such runs
  /// carry usable iterates and a valid dual bound.
  bool near_optimal(double feas = 1e-6, double gap = 5e-3) const {
    if (status == SolveStatus::kOptimal) return true;
    return status == SolveStatus::kNumericalLimit && stats.primal_residual <= feas &&
           stats.dual_residual <= feas && stats.gap <= gap;
  }

  /// Lower bound on the optimum of a minimization program: the dual
  /// objective, valid up to the reported dual residual.
  double certified_lower_bound() const { return dual_objective; }
};

struct SolverSettings {
  double tol_feas = 1e-8;
  double tol_gap = 1e-7;
  int max_iter = 200;
  double time_limit_s = 1e18;
  int verbose = 0;
  /// Ridge added to the Schur diagonal when factorization struggles.
  double static_reg = 1e-10;
  /// Skip the elastic classification solve when an optimal status was not
  /// reached (used by callers that only care about optimal runs).
  bool classify_failures = true;
};

/// Solve with the native primal-dual interior-point method (Nesterov-Todd
/// scaling, Mehrotra predictor-corrector).  Never throws for infeasible or
/// unbounded inputs; those come back as statuses.
ConicSolution solve(const ConicProgram& program, const SolverSettings& settings = {});

struct Violation {
  std::string tag;
  int row = -1;        // -1 for cone violations
  double amount = 0;
  std::string detail;
};

struct ViolationReport {
  double max_violation = 0;
  double min_block_eigenvalue = 0;
  std::vector<Violation> worst;  // sorted, largest first, capped

  bool ok(double tol) const { return max_violation <= tol; }
};

/// Recompute every row residual and block minimum eigenvalue independently of
/// the solver internals.
ViolationReport verify_feasibility(const ConicProgram& program, const ConicSolution& solution,
                                   double tol = 1e-8);

/// Same check against raw primal values (blocks + scalars), usable for lifted
/// points that never went through the solver.
ViolationReport verify_point(const ConicProgram& program, const std::vector<Mat>& blocks,
                             const Vec& scalars, double tol = 1e-8);

}  // namespace tscale::conic
