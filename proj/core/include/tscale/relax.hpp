// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tscale/conic.hpp"
#include "tscale/lift.hpp"
#include "tscale/model.hpp"

namespace tscale::relax {

/// Abstract single-mode program over r = (x_0, ..., x_K, u_0, ..., u_{K-1}):
///
///   minimize    eta_K h + tr((Q_x + R_u) h r r^T)
///   subject to  F [r; 1] = G [h r; h]      (dynamics, constant column folded)
///               C [r; h] + d >= 0          (state, input and time-step rows)
///               H r = b                    (boundary pins)
///               h in [h_min, h_max].
struct AbstractLtiProgram {
  int nx = 0, nu = 0, K = 0;
  int dim_r = 0;
  Mat F;  // n_dyn x (dim_r + 1); last column multiplies 1
  Mat G;  // n_dyn x (dim_r + 1); last column multiplies h
  Mat C;  // n_ineq x (dim_r + 1); last column multiplies h
  Vec d;
  Mat H;  // n_eq x dim_r
  Vec b;
  Mat Qx, Ru;  // dim_r x dim_r cost embeddings
  double eta_K = 0;
  double h_min = 0, h_max = 0;
  std::string mode_name;

  int x_index(int k, int i) const { return k * nx + i; }
  int u_index(int k, int j) const { return (K + 1) * nx + k * nu + j; }
};

struct BoundarySpec {
  std::optional<Vec> pin_start;
  std::optional<Vec> pin_goal;
};

/// Transcribe one mode of the OCP into the abstract form; boundary pins
/// default to the scenario's x_start and x_goal.
AbstractLtiProgram abstractify(const PwaMode& mode, const OcpSpec& ocp, int K,
                               const BoundarySpec& boundary);
AbstractLtiProgram abstractify(const PwaMode& mode, const OcpSpec& ocp);

enum class SegmentForm : uint8_t { kDense, kSparse };
enum class FormKind : uint8_t { kStandard, kDense, kSparse };

std::string to_string(FormKind kind);
FormKind form_kind_from_string(const std::string& s);

struct RelaxOptions {
  /// Include products of distinct domain rows (full matrix-valued products);
  /// diagonal-only is a speed escape hatch.
  bool full_products = true;
};

/// Where a boundary state lives inside a built segment.
struct BoundaryAccess {
  int block_id = -1;                        // conic program block index
  const lift::LiftLayout* layout = nullptr;
  int offset = 0;                           // r-slot of the state's first coordinate
};

/// Metadata for one mode segment appended to a conic program: block indices,
/// lift layout, and boundary-state locations for coupling.
struct SegmentInfo {
  SegmentForm form = SegmentForm::kSparse;
  std::string mode;
  int nx = 0, nu = 0, K = 0, dim_r = 0;
  std::vector<int> block_ids;
  std::shared_ptr<const lift::LiftLayout> layout;  // dense: dim_r; sparse: 2nx+nu

  BoundaryAccess start_boundary() const;
  BoundaryAccess goal_boundary() const;
};

struct SegmentOptions {
  SegmentForm form = SegmentForm::kSparse;
  RelaxOptions relax;
  BoundarySpec boundary;
  std::string name_prefix;
  /// Emit the "constant entry equals one" pin; the flow relaxation replaces it
  /// with a vertex-occupancy row.
  bool pin_const = true;
};

/// Append one mode segment (its PSD blocks, constraint rows and objective
/// terms) to an existing program.
SegmentInfo append_segment(conic::ConicProgram& prog, const PwaMode& mode, const OcpSpec& ocp,
                           int K, const SegmentOptions& options);

/// A complete single-mode relaxation.
struct Relaxation {
  FormKind kind = FormKind::kDense;
  conic::ConicProgram program;
  SegmentInfo segment;

  std::vector<int> psd_dims() const;
};

/// Standard first-order semidefinite relaxation over x = (1, h, r); requires
/// an eta-only objective (throws SolveError when Q or R is nonzero).
Relaxation build_standard_sdr(const AbstractLtiProgram& prog, const RelaxOptions& opts = {});

/// Dense time-flexible relaxation over y = (1, h, r, hr), one PSD block of
/// dimension 2 dim_r + 2 carrying every product family.
Relaxation build_dense_tfr(const AbstractLtiProgram& prog, const RelaxOptions& opts = {});

/// Sparse time-flexible relaxation: K blocks over r_k = (x_k, x_{k+1}, u_k)
/// with overlap-consistency rows and a single shared time step.
Relaxation build_sparse_tfr(const PwaMode& mode, const OcpSpec& ocp, const RelaxOptions& opts = {});
Relaxation build_sparse_tfr(const PwaMode& mode, const OcpSpec& ocp, int K,
                            const BoundarySpec& boundary, const RelaxOptions& opts = {});

/// Pull (h, r) and the rank-one defect out of a solved segment.
struct SegmentExtraction {
  double h = 0;
  Vec r;
  double rank_ratio = 0;
  Trajectory::Segment segment;
};
SegmentExtraction extract_segment(const SegmentInfo& info, const conic::ConicSolution& sol);

struct Extraction {
  double h = 0;
  Vec r;
  double rank_ratio = 0;
  Trajectory trajectory;
};
Extraction extract_solution(const Relaxation& built, const conic::ConicSolution& sol);

/// Objective value of a lifted feasible point, for parity checks.
double objective_on_point(const AbstractLtiProgram& prog, double h, const Vec& r);

/// Rank-one exactness certificate.  Interior-point solvers converge to the
/// analytic center of the optimal face; when that face is not a singleton the
/// returned matrix carries feasible null mass and its eigenvalue ratio says
/// nothing about exactness.  The certificate instead re-lifts the extracted
/// first moments and accepts when the lift is feasible and its objective
/// matches the certified dual bound, which exhibits an explicit (numerically)
/// rank-one optimal solution.
struct ExactnessCertificate {
  bool certified = false;
  double rank_ratio = 1.0;       // ratio of the certified matrix (raw if uncertified)
  double raw_rank_ratio = 1.0;   // ratio of the solver's matrix
  double lift_violation = 0;     // worst constraint violation of the rounded lift
  double objective_excess = 0;   // rounded objective minus certified lower bound
  Extraction extraction;
};

struct CertifyOptions {
  double rank_tol = 1e-3;
  double feas_tol = 1e-5;
  double obj_tol_rel = 1e-5;
  double obj_tol_abs = 1e-6;
};

ExactnessCertificate certify_rank_one(const Relaxation& built, const conic::ConicSolution& sol,
                                      const CertifyOptions& opts = {});

/// Lifted block values of a segment at a point (h, r), keyed by program
/// block index.
std::vector<std::pair<int, Mat>> lift_segment_blocks(const SegmentInfo& info, double h,
                                                     const Vec& r);

}  // namespace tscale::relax
