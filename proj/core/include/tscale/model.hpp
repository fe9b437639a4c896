// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tscale/types.hpp"

namespace tscale {

/// Halfspace intersection {z : C z + d >= 0}.
struct Polytope {
  Mat C;  // rows x dim
  Vec d;
  bool compact = true;  // boundedness is certified at scenario validation

  int dim() const { return static_cast<int>(C.cols()); }
  int num_rows() const { return static_cast<int>(C.rows()); }
  Vec residual(const Vec& z) const { return C * z + d; }
  bool contains(const Vec& z, double tol = 1e-9) const {
    return num_rows() == 0 || residual(z).minCoeff() >= -tol;
  }

  static Polytope box(const Vec& lo, const Vec& hi);
};

/// One affine mode x+ = x + h (A x + B u + c) with polytopic domains.
/// An LTI system is a single mode with c = 0.
struct PwaMode {
  std::string name;
  Mat A;
  Mat B;
  Vec c;
  Polytope X;
  Polytope U;

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
};

/// Cost weights, step counts, time-step window and boundary states.
struct OcpSpec {
  double eta = 0;
  Mat Q;
  Mat R;
  int K = 1;
  std::map<std::string, int> K_per_mode;  // optional per-mode overrides
  double h_min = 0;
  double h_max = 0;
  Vec x_start;
  Vec x_goal;

  int steps_for(const std::string& mode) const {
    auto it = K_per_mode.find(mode);
    return it == K_per_mode.end() ? K : it->second;
  }
};

/// Mode graph with virtual source/target attachment.
struct ModeGraph {
  std::vector<std::string> vertices;                        // mode names
  std::vector<std::pair<std::string, std::string>> edges;   // directed mode->mode
  std::vector<std::string> source_out;  // modes whose domain contains x_start
  std::vector<std::string> target_in;   // modes whose domain contains x_goal

  bool has_edge(const std::string& a, const std::string& b) const;
};

struct Scenario {
  std::string name;
  std::vector<PwaMode> modes;
  ModeGraph graph;
  OcpSpec ocp;

  int nx() const { return modes.at(0).nx(); }
  int nu() const { return modes.at(0).nu(); }
  const PwaMode& mode(const std::string& mode_name) const;
  int mode_index(const std::string& mode_name) const;
};

/// Parse, check every invariant (dimensions, PSD weights, time-step window,
/// polytope compactness by LP, Chebyshev sanity) and resolve the mode graph.
/// Throws ScenarioError naming the offending field.
Scenario validate_scenario(const nlohmann::json& raw, const std::string& name = "scenario");
Scenario load_scenario(const std::string& path);

/// Edges (i, j), i != j, for every pair of modes whose closed state domains
/// intersect (LP feasibility test); both directions are emitted.
std::vector<std::pair<int, int>> mode_adjacency(const std::vector<PwaMode>& modes);

/// Infinity norm of x_next - x - h (A x + B u + c).
double dynamics_residual(const PwaMode& mode, double h, const Vec& x, const Vec& u,
                         const Vec& x_next);

/// Discrete trajectory over a mode sequence with one time step per segment.
struct Trajectory {
  struct Segment {
    std::string mode;
    double h = 0;
    Mat x;  // (K+1) x nx knot states
    Mat u;  // K x nu inputs
  };
  std::vector<Segment> segments;

  bool empty() const { return segments.empty(); }
  double total_time() const;
  double cost(const OcpSpec& ocp) const;
  double max_dynamics_residual(const Scenario& scenario) const;
};

namespace lp {

struct BoxedLpResult {
  bool feasible = false;
  double value = 0;
  Vec z;
};

/// max c^T z subject to C z + d >= 0 and |z_i| <= box.
BoxedLpResult maximize_boxed(const Mat& C, const Vec& d, const Vec& c, double box);

/// Closed polytopes share at least one point (touching facets count).
bool intersects(const Polytope& P, const Polytope& Q);

/// Center and radius of the largest inscribed ball; radius < 0 means empty.
std::pair<Vec, double> chebyshev_center(const Polytope& P);

/// Boundedness in every +-coordinate direction; on failure reports the
/// offending direction as e.g. "+e1".
bool bounded(const Polytope& P, std::string* direction = nullptr);

}  // namespace lp
}  // namespace tscale
