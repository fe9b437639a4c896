// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tscale/conic.hpp"
#include "tscale/model.hpp"
#include "tscale/relax.hpp"

namespace tscale::gcs {

/// A path is infeasible through every candidate mode sequence.
class AllPathsInfeasible : public Error {
 public:
  using Error::Error;
};

struct FixedSequenceOptions {
  relax::SegmentForm form = relax::SegmentForm::kSparse;
  bool coupling = true;  // transition coupling blocks; off keeps plain
                         // first-order state-continuity rows
  relax::RelaxOptions relax;
};

struct FixedSequenceProgram {
  conic::ConicProgram program;
  std::vector<std::string> path;
  std::vector<relax::SegmentInfo> segments;
  std::vector<int> coupling_blocks;
};

/// Relaxation of the fixed-mode-sequence program: one segment TFR per mode
/// with its own time step, boundary pins on the first and last segment, and
/// transition coupling between consecutive segments.  A length-one sequence
/// reduces exactly to the single-mode relaxation.
FixedSequenceProgram build_fixed_sequence_program(const Scenario& scenario,
                                                  const std::vector<std::string>& path,
                                                  const FixedSequenceOptions& options = {});

struct PathExtraction {
  Trajectory trajectory;
  std::vector<double> h;
  double rank_ratio = 0;  // worst segment ratio
};

PathExtraction extract_path(const FixedSequenceProgram& fsp, const conic::ConicSolution& sol);

struct PathCertificate {
  bool certified = false;
  double rank_ratio = 1.0;
  double raw_rank_ratio = 1.0;
  double lift_violation = 0;
  double objective_excess = 0;
  PathExtraction extraction;
};

/// Rank-one certification across all segment and coupling blocks (see
/// relax::certify_rank_one for the rationale).
PathCertificate certify_path(const FixedSequenceProgram& fsp, const conic::ConicSolution& sol,
                             const relax::CertifyOptions& options = {});

/// All simple source-to-target mode sequences with at most max_len modes, in
/// lexicographic order.
std::vector<std::vector<std::string>> enumerate_paths(const ModeGraph& graph, int max_len);

struct PathRecord {
  std::vector<std::string> path;
  conic::SolveStatus status = conic::SolveStatus::kNumericalLimit;
  bool usable = false;
  double objective = std::numeric_limits<double>::infinity();
  double lower_bound = std::numeric_limits<double>::infinity();
  conic::ConicSolution solution;
};

struct GcsOptions {
  int max_len = 6;
  FixedSequenceOptions fixed;
  conic::SolverSettings solver;
  bool parallel = true;
};

struct GcsResult {
  std::vector<PathRecord> paths;  // enumeration order
  int best = -1;
  double lower_bound = std::numeric_limits<double>::infinity();

  const PathRecord& best_record() const { return paths.at(best); }
};

/// Certified mode-sequence optimization: solve the fixed-sequence relaxation
/// of every enumerated path and keep the minimum-objective usable one
/// (deterministic tie-break on the lexicographic path).  Throws
/// AllPathsInfeasible when nothing is usable.
GcsResult solve_gcs_exact(const Scenario& scenario, const GcsOptions& options = {});

struct FlowOptions {
  relax::RelaxOptions relax;
};

struct FlowEdge {
  std::string from, to;  // "source" / "target" for the virtual endpoints
  int flow_scalar = -1;
  int block = -1;  // coupling or boundary block
};

struct FlowProgram {
  conic::ConicProgram program;
  std::vector<FlowEdge> edges;
  std::map<std::string, relax::SegmentInfo> vertices;
};

/// Convex flow relaxation of the shortest-path problem: unit source/target
/// flow with conservation, one occupancy-homogenized segment copy per vertex
/// (the segment's unit entry becomes the vertex occupancy), flow-scaled
/// coupling blocks per edge, and occupancy-scaled diagonal bounds that force
/// unused copies to zero.  Requires compact domains.
FlowProgram build_flow_relaxation(const Scenario& scenario, const FlowOptions& options = {});

/// Greedy maximum-flow walk from the source; lexicographic tie-break.
std::vector<std::string> round_flow(const FlowProgram& fp, const conic::ConicSolution& sol);

}  // namespace tscale::gcs
