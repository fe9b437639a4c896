// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include "tscale/pwa_gcs.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <functional>
#include <future>
#include <limits>
#include <set>

#include "tscale/lift.hpp"

namespace tscale::gcs {

using conic::ConicProgram;
using conic::kScalar;
using conic::Row;
using conic::ScalarKind;
using conic::Sense;
using conic::Term;
using lift::BlockLayout;
using lift::CouplingTie;
using lift::Entry;
using lift::Monomial;

namespace {

constexpr const char* kSource = "source";
constexpr const char* kTarget = "target";

relax::BoundaryAccess side_access(const relax::SegmentInfo& seg, int side) {
  return side == 0 ? seg.goal_boundary() : seg.start_boundary();
}

void add_edge_structure(ConicProgram& prog, int blk, const BlockLayout& layout,
                        const std::string& prefix) {
  for (const auto& [canon, dup] : layout.alias_ties())
    prog.add_row({{{blk, canon.a, canon.b, 1.0}, {blk, dup.a, dup.b, -1.0}},
                  0.0,
                  Sense::kEq,
                  prefix + "structure"});
}

}  // namespace

// ---------------------------------------------------------------------------
// Fixed sequence
// ---------------------------------------------------------------------------

FixedSequenceProgram build_fixed_sequence_program(const Scenario& scenario,
                                                  const std::vector<std::string>& path,
                                                  const FixedSequenceOptions& options) {
  if (path.empty()) throw Error("fixed sequence: empty mode sequence");
  for (size_t n = 0; n + 1 < path.size(); ++n)
    if (!scenario.graph.has_edge(path[n], path[n + 1]))
      throw Error("fixed sequence: modes '" + path[n] + "' and '" + path[n + 1] +
                  "' are not adjacent");

  FixedSequenceProgram fsp;
  fsp.path = path;
  const size_t N = path.size();
  for (size_t n = 0; n < N; ++n) {
    const PwaMode& mode = scenario.mode(path[n]);
    relax::SegmentOptions so;
    so.form = options.form;
    so.relax = options.relax;
    so.name_prefix = "seg" + std::to_string(n) + ":";
    so.pin_const = true;
    if (n == 0) so.boundary.pin_start = scenario.ocp.x_start;
    if (n == N - 1) so.boundary.pin_goal = scenario.ocp.x_goal;
    fsp.segments.push_back(
        relax::append_segment(fsp.program, mode, scenario.ocp, scenario.ocp.steps_for(path[n]), so));
  }

  const int nx = scenario.nx();
  for (size_t n = 0; n + 1 < N; ++n) {
    const auto prev = fsp.segments[n].goal_boundary();
    const auto next = fsp.segments[n + 1].start_boundary();
    if (!options.coupling) {
      // plain first-order state continuity on the shared knot
      for (int i = 0; i < nx; ++i) {
        Entry ep = prev.layout->entry_of(Monomial::var(prev.offset + i));
        Entry en = next.layout->entry_of(Monomial::var(next.offset + i));
        fsp.program.add_row({{{prev.block_id, ep.a, ep.b, 1.0}, {next.block_id, en.a, en.b, -1.0}},
                             0.0,
                             Sense::kEq,
                             "continuity"});
      }
      continue;
    }
    lift::CouplingLayout cpl(nx);
    const std::string prefix = "cpl" + std::to_string(n) + ":";
    const int blk = fsp.program.add_block(prefix + "Y", cpl.dim());
    fsp.coupling_blocks.push_back(blk);
    add_edge_structure(fsp.program, blk, cpl.block(), prefix);
    const Entry ce = cpl.block().const_entry();
    fsp.program.add_row({{{blk, ce.a, ce.b, 1.0}}, 1.0, Sense::kEq, prefix + "normalize"});
    for (const CouplingTie& tie :
         lift::coupling_constraints(cpl, *prev.layout, prev.offset, *next.layout, next.offset)) {
      const auto& acc = tie.side == 0 ? prev : next;
      fsp.program.add_row({{{blk, tie.coupling_entry.a, tie.coupling_entry.b, 1.0},
                            {acc.block_id, tie.segment_entry.a, tie.segment_entry.b, -1.0}},
                           0.0,
                           Sense::kEq,
                           prefix + "match"});
    }
  }
  return fsp;
}

PathExtraction extract_path(const FixedSequenceProgram& fsp, const conic::ConicSolution& sol) {
  PathExtraction out;
  for (const auto& seg : fsp.segments) {
    auto ex = relax::extract_segment(seg, sol);
    out.rank_ratio = std::max(out.rank_ratio, ex.rank_ratio);
    out.h.push_back(ex.h);
    out.trajectory.segments.push_back(std::move(ex.segment));
  }
  return out;
}

PathCertificate certify_path(const FixedSequenceProgram& fsp, const conic::ConicSolution& sol,
                             const relax::CertifyOptions& opts) {
  PathCertificate cert;
  cert.extraction = extract_path(fsp, sol);
  cert.raw_rank_ratio = cert.extraction.rank_ratio;
  cert.rank_ratio = cert.extraction.rank_ratio;
  if (cert.raw_rank_ratio <= opts.rank_tol) {
    cert.certified = true;
    return cert;
  }

  std::vector<Mat> blocks(fsp.program.num_blocks());
  const size_t N = fsp.segments.size();
  for (size_t n = 0; n < N; ++n) {
    const auto& seg = fsp.segments[n];
    const auto& traj = cert.extraction.trajectory.segments[n];
    Vec r(seg.dim_r);
    for (int k = 0; k <= seg.K; ++k) r.segment(k * seg.nx, seg.nx) = traj.x.row(k);
    for (int k = 0; k < seg.K; ++k)
      r.segment((seg.K + 1) * seg.nx + k * seg.nu, seg.nu) = traj.u.row(k);
    for (auto& [id, M] : relax::lift_segment_blocks(seg, cert.extraction.h[n], r))
      blocks[id] = std::move(M);
  }
  for (size_t n = 0; n < fsp.coupling_blocks.size(); ++n) {
    lift::CouplingLayout cpl(fsp.segments[n].nx);
    const auto& traj = cert.extraction.trajectory.segments[n];
    Vec xbar = traj.x.row(traj.x.rows() - 1);
    Vec y = lift::evaluate_components(cpl.block(), cert.extraction.h[n],
                                      cert.extraction.h[n + 1], xbar);
    blocks[fsp.coupling_blocks[n]] = y * y.transpose();
  }

  auto rep =
      conic::verify_point(fsp.program, blocks, Vec::Zero(fsp.program.num_scalars()), 0.0);
  cert.lift_violation = rep.max_violation;
  double obj = fsp.program.objective_constant();
  for (const Term& t : fsp.program.objective())
    obj += t.coeff * (t.block == kScalar ? 0.0 : blocks[t.block](t.a, t.b));
  const double lb = sol.certified_lower_bound();
  cert.objective_excess = obj - lb;
  const double obj_tol = std::max(opts.obj_tol_abs, opts.obj_tol_rel * std::abs(lb));
  if (cert.lift_violation <= opts.feas_tol && cert.objective_excess <= obj_tol) {
    cert.certified = true;
    cert.rank_ratio = 0.0;
    for (const auto& seg : fsp.segments)
      for (int id : seg.block_ids) {
        Eigen::SelfAdjointEigenSolver<Mat> eig(blocks[id], Eigen::EigenvaluesOnly);
        const auto& ev = eig.eigenvalues();
        if (ev(ev.size() - 1) > 0)
          cert.rank_ratio =
              std::max(cert.rank_ratio, std::max(0.0, ev(ev.size() - 2)) / ev(ev.size() - 1));
      }
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> enumerate_paths(const ModeGraph& graph, int max_len) {
  if (max_len < 2) throw Error("enumerate_paths: max_len must be at least 2");
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& [a, b] : graph.edges) succ[a].push_back(b);
  for (auto& [a, list] : succ) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  std::set<std::string> goal(graph.target_in.begin(), graph.target_in.end());
  std::vector<std::string> starts = graph.source_out;
  std::sort(starts.begin(), starts.end());

  std::vector<std::vector<std::string>> paths;
  std::vector<std::string> stack;
  std::set<std::string> visited;
  std::function<void(const std::string&)> dfs = [&](const std::string& v) {
    stack.push_back(v);
    visited.insert(v);
    if (goal.count(v)) paths.push_back(stack);
    if (static_cast<int>(stack.size()) < max_len)
      for (const auto& w : succ[v])
        if (!visited.count(w)) dfs(w);
    visited.erase(v);
    stack.pop_back();
  };
  for (const auto& s : starts) dfs(s);
  return paths;
}

GcsResult solve_gcs_exact(const Scenario& scenario, const GcsOptions& options) {
  auto paths = enumerate_paths(scenario.graph, options.max_len);
  GcsResult result;
  result.paths.resize(paths.size());

  auto solve_one = [&](size_t i) {
    PathRecord rec;
    rec.path = paths[i];
    auto fsp = build_fixed_sequence_program(scenario, paths[i], options.fixed);
    rec.solution = conic::solve(fsp.program, options.solver);
    rec.status = rec.solution.status;
    rec.usable = rec.solution.near_optimal();
    if (rec.usable) {
      rec.objective = rec.solution.objective;
      rec.lower_bound = rec.solution.certified_lower_bound();
    }
    return rec;
  };

  if (options.parallel && paths.size() > 1) {
    std::vector<std::future<PathRecord>> futures;
    futures.reserve(paths.size());
    for (size_t i = 0; i < paths.size(); ++i)
      futures.push_back(std::async(std::launch::async, solve_one, i));
    for (size_t i = 0; i < paths.size(); ++i) result.paths[i] = futures[i].get();
  } else {
    for (size_t i = 0; i < paths.size(); ++i) result.paths[i] = solve_one(i);
  }

  // deterministic merge: objective first, lexicographic path on near-ties
  for (size_t i = 0; i < result.paths.size(); ++i) {
    const PathRecord& rec = result.paths[i];
    if (!rec.usable) continue;
    if (result.best < 0) {
      result.best = static_cast<int>(i);
      continue;
    }
    const PathRecord& cur = result.paths[result.best];
    const double tol = 1e-9 * (1.0 + std::abs(cur.objective));
    if (rec.objective < cur.objective - tol ||
        (std::abs(rec.objective - cur.objective) <= tol && rec.path < cur.path))
      result.best = static_cast<int>(i);
  }
  if (result.best < 0)
    throw AllPathsInfeasible("every candidate mode sequence is infeasible for this scenario");
  result.lower_bound = result.paths[result.best].lower_bound;
  return result;
}

// ---------------------------------------------------------------------------
// Flow relaxation
// ---------------------------------------------------------------------------

namespace {

// Upper bound on |entry (a,a)| of a lifted block over the scenario's windows:
// the monomial is comp_a^2 (times the layout's h shift), bounded by interval
// arithmetic with per-coordinate domain radii.
double diag_bound(const BlockLayout& layout, int a, double h_lo, double h_hi, const Vec& radius) {
  const Monomial m = layout.monomial_at(a, a);
  double v = 1.0;
  auto hpow = [&](int p) {
    if (p >= 0) return std::pow(h_hi, p);
    return std::pow(1.0 / h_lo, -p);
  };
  v *= hpow(m.ha);
  v *= hpow(m.hb);
  for (int k : m.r)
    if (k >= 0) v *= radius(k);
  return v;
}

Vec mode_radius(const PwaMode& mode) {
  // per-coordinate |.| bounds of (x_k, x_{k+1}, u_k)
  const int nx = mode.nx(), nu = mode.nu();
  Vec r(2 * nx + nu);
  for (int i = 0; i < nx; ++i) {
    Vec c = Vec::Zero(nx);
    c(i) = 1.0;
    auto hi = lp::maximize_boxed(mode.X.C, mode.X.d, c, 1e7);
    auto lo = lp::maximize_boxed(mode.X.C, mode.X.d, -c, 1e7);
    if (!hi.feasible || !lo.feasible) throw SolveError("flow relaxation: empty state domain");
    r(i) = r(nx + i) = std::max(std::abs(hi.value), std::abs(lo.value));
  }
  for (int j = 0; j < nu; ++j) {
    Vec c = Vec::Zero(nu);
    c(j) = 1.0;
    auto hi = lp::maximize_boxed(mode.U.C, mode.U.d, c, 1e7);
    auto lo = lp::maximize_boxed(mode.U.C, mode.U.d, -c, 1e7);
    if (!hi.feasible || !lo.feasible) throw SolveError("flow relaxation: empty input domain");
    r(2 * nx + j) = std::max(std::abs(hi.value), std::abs(lo.value));
  }
  return r;
}

struct GatheredTie {
  // sum over edge-block entries on one side == segment entry
  int vertex_block;
  Entry segment_entry;
  std::vector<std::pair<int, Entry>> edge_entries;  // (block, entry) per edge
};

}  // namespace

FlowProgram build_flow_relaxation(const Scenario& scenario, const FlowOptions& options) {
  for (const auto& m : scenario.modes)
    if (!m.X.compact || !m.U.compact)
      throw SolveError("flow relaxation requires compact domains (mode '" + m.name + "')");
  if (scenario.graph.source_out.empty())
    throw SolveError("flow relaxation: x_start lies outside every mode domain");
  if (scenario.graph.target_in.empty())
    throw SolveError("flow relaxation: x_goal lies outside every mode domain");

  FlowProgram fp;
  const int nx = scenario.nx();
  const double h_lo = scenario.ocp.h_min, h_hi = scenario.ocp.h_max;

  // vertex copies (no boundary pins, occupancy instead of the unit pin)
  std::map<std::string, Vec> radius;
  for (const auto& mode : scenario.modes) {
    relax::SegmentOptions so;
    so.form = relax::SegmentForm::kSparse;
    so.relax = options.relax;
    so.name_prefix = mode.name + ":";
    so.pin_const = false;
    fp.vertices[mode.name] = relax::append_segment(fp.program, mode, scenario.ocp,
                                                   scenario.ocp.steps_for(mode.name), so);
    radius[mode.name] = mode_radius(mode);
  }

  // edges with flow scalars
  auto add_edge = [&](const std::string& from, const std::string& to) {
    FlowEdge e;
    e.from = from;
    e.to = to;
    e.flow_scalar = fp.program.add_scalar("phi:" + from + ">" + to, ScalarKind::kNonneg);
    fp.edges.push_back(e);
    // phi <= 1
    fp.program.add_row({{{kScalar, e.flow_scalar, 0, -1.0}}, -1.0, Sense::kGe, "flow_cap"});
    return static_cast<int>(fp.edges.size()) - 1;
  };
  for (const auto& v : scenario.graph.source_out) add_edge(kSource, v);
  for (const auto& [a, b] : scenario.graph.edges) add_edge(a, b);
  for (const auto& v : scenario.graph.target_in) add_edge(v, kTarget);

  // per-edge blocks, pins, and gathered matching ties
  // key: (side, vertex block, entry); the side keeps in- and out-edge sums
  // apart when a one-block segment shares entries between its boundaries
  std::map<std::tuple<int, int, int, int>, GatheredTie> gathered;
  auto gather = [&](int side, const relax::BoundaryAccess& acc, Entry seg_entry, int edge_block,
                    Entry edge_entry) {
    auto key = std::make_tuple(side, acc.block_id, seg_entry.a, seg_entry.b);
    auto& g = gathered[key];
    g.vertex_block = acc.block_id;
    g.segment_entry = seg_entry;
    g.edge_entries.emplace_back(edge_block, edge_entry);
  };

  for (size_t ei = 0; ei < fp.edges.size(); ++ei) {
    FlowEdge& e = fp.edges[ei];
    const bool from_source = e.from == kSource;
    const bool to_target = e.to == kTarget;
    const std::string prefix = "edge" + std::to_string(ei) + ":";

    BlockLayout layout = from_source  ? lift::source_edge_layout(nx)
                         : to_target  ? lift::target_edge_layout(nx)
                                      : lift::CouplingLayout(nx).block();
    const int blk = fp.program.add_block(prefix + "Y", layout.dim());
    e.block = blk;
    add_edge_structure(fp.program, blk, layout, prefix);

    // unit entry carries the edge flow
    const Entry ce = layout.const_entry();
    fp.program.add_row({{{blk, ce.a, ce.b, 1.0}, {kScalar, e.flow_scalar, 0, -1.0}},
                        0.0,
                        Sense::kEq,
                        prefix + "flow"});

    // boundary pins: factor the boundary-state part of each entry at the
    // pinned value, leaving the time-step part symbolic
    if (from_source || to_target) {
      const Vec& pin = from_source ? scenario.ocp.x_start : scenario.ocp.x_goal;
      for (int a = 0; a < layout.dim(); ++a)
        for (int b = a; b < layout.dim(); ++b) {
          Monomial m = layout.monomial_at(a, b);
          if (m.degree() == 0) continue;
          double factor = 1.0;
          for (int k : m.r)
            if (k >= 0) factor *= pin(k);
          Monomial hpart = m;
          hpart.r = {-1, -1};
          Entry he = layout.entry_of(hpart);
          if (he.a == a && he.b == b && factor == 1.0) continue;
          fp.program.add_row({{{blk, a, b, 1.0}, {blk, he.a, he.b, -factor}},
                              0.0,
                              Sense::kEq,
                              prefix + "pin"});
        }
    }

    // matching ties, gathered per vertex side
    const relax::SegmentInfo* prev_seg = from_source ? nullptr : &fp.vertices.at(e.from);
    const relax::SegmentInfo* next_seg = to_target ? nullptr : &fp.vertices.at(e.to);
    auto prev_acc = prev_seg ? std::optional(prev_seg->goal_boundary()) : std::nullopt;
    auto next_acc = next_seg ? std::optional(next_seg->start_boundary()) : std::nullopt;
    auto ties = lift::match_block_entries(layout, prev_acc ? prev_acc->layout : nullptr,
                                          prev_acc ? prev_acc->offset : 0,
                                          next_acc ? next_acc->layout : nullptr,
                                          next_acc ? next_acc->offset : 0);
    // one edge entry per segment entry (the rest are bound by the block's
    // internal structure ties)
    std::set<std::tuple<int, int, int>> seen;
    for (const CouplingTie& tie : ties) {
      const auto& acc = tie.side == 0 ? *prev_acc : *next_acc;
      if (!seen.insert({tie.side, tie.segment_entry.a, tie.segment_entry.b}).second) continue;
      gather(tie.side, acc, tie.segment_entry, blk, tie.coupling_entry);
    }

    // occupancy-scaled diagonal bounds keep the block compact and force it to
    // zero when the edge carries no flow
    const Vec* rad = nullptr;
    Vec pin_radius;
    if (from_source || to_target) {
      const Vec& pin = from_source ? scenario.ocp.x_start : scenario.ocp.x_goal;
      pin_radius = pin.cwiseAbs() + Vec::Constant(nx, 1.0);
      rad = &pin_radius;
    } else {
      rad = &radius.at(e.to);  // the shared knot lies in the successor's domain
    }
    for (int a = 0; a < layout.dim(); ++a) {
      const double bound = diag_bound(layout, a, h_lo, h_hi, *rad);
      if (Entry{a, a} == ce) continue;
      fp.program.add_row({{{blk, ce.a, ce.b, bound}, {blk, a, a, -1.0}},
                          0.0,
                          Sense::kGe,
                          prefix + "box"});
    }
  }

  // occupancy, conservation and endpoint flows
  for (const auto& mode : scenario.modes) {
    std::vector<Term> in_terms, out_terms;
    for (const FlowEdge& e : fp.edges) {
      if (e.to == mode.name) in_terms.push_back({kScalar, e.flow_scalar, 0, 1.0});
      if (e.from == mode.name) out_terms.push_back({kScalar, e.flow_scalar, 0, -1.0});
    }
    const auto& seg = fp.vertices.at(mode.name);
    const Entry ce = seg.layout->block().const_entry();
    Row occ;
    occ.terms.push_back({seg.block_ids.front(), ce.a, ce.b, 1.0});
    for (Term t : in_terms) {
      t.coeff = -1.0;
      occ.terms.push_back(t);
    }
    occ.rhs = 0;
    occ.sense = Sense::kEq;
    occ.tag = "occupancy";
    fp.program.add_row(std::move(occ));

    Row cons;
    cons.terms = in_terms;
    cons.terms.insert(cons.terms.end(), out_terms.begin(), out_terms.end());
    cons.rhs = 0;
    cons.sense = Sense::kEq;
    cons.tag = "conservation";
    fp.program.add_row(std::move(cons));

    Row cap;  // occupancy at most one
    for (Term t : in_terms) {
      t.coeff = -1.0;
      cap.terms.push_back(t);
    }
    cap.rhs = -1.0;
    cap.sense = Sense::kGe;
    cap.tag = "occupancy_cap";
    fp.program.add_row(std::move(cap));

    // occupancy-scaled diagonal bounds on every vertex block
    const Vec& rad = radius.at(mode.name);
    for (int id : seg.block_ids)
      for (int a = 0; a < seg.layout->dim(); ++a) {
        if (Entry{a, a} == ce) continue;
        const double bound = diag_bound(seg.layout->block(), a, h_lo, h_hi, rad);
        fp.program.add_row({{{id, ce.a, ce.b, bound}, {id, a, a, -1.0}},
                            0.0,
                            Sense::kGe,
                            "occupancy_box"});
      }
  }
  {
    Row src;
    for (const FlowEdge& e : fp.edges)
      if (e.from == kSource) src.terms.push_back({kScalar, e.flow_scalar, 0, 1.0});
    src.rhs = 1.0;
    src.sense = Sense::kEq;
    src.tag = "source_flow";
    fp.program.add_row(std::move(src));
    Row tgt;
    for (const FlowEdge& e : fp.edges)
      if (e.to == kTarget) tgt.terms.push_back({kScalar, e.flow_scalar, 0, 1.0});
    tgt.rhs = 1.0;
    tgt.sense = Sense::kEq;
    tgt.tag = "target_flow";
    fp.program.add_row(std::move(tgt));
  }

  // gathered matching rows: sum of edge-block entries equals the vertex entry
  for (auto& [key, g] : gathered) {
    Row row;
    row.terms.push_back({g.vertex_block, g.segment_entry.a, g.segment_entry.b, -1.0});
    for (auto& [blk, entry] : g.edge_entries) row.terms.push_back({blk, entry.a, entry.b, 1.0});
    row.rhs = 0;
    row.sense = Sense::kEq;
    row.tag = "edge_match";
    fp.program.add_row(std::move(row));
  }
  return fp;
}

std::vector<std::string> round_flow(const FlowProgram& fp, const conic::ConicSolution& sol) {
  std::vector<std::string> path;
  std::string at = kSource;
  std::set<std::string> visited;
  for (size_t guard = 0; guard <= fp.vertices.size() + 2; ++guard) {
    if (at == kTarget) return path;
    std::string best_to;
    double best_flow = -1.0;
    for (const FlowEdge& e : fp.edges) {
      if (e.from != at || visited.count(e.to)) continue;
      const double phi = sol.scalars(e.flow_scalar);
      if (phi > best_flow + 1e-12 || (std::abs(phi - best_flow) <= 1e-12 && e.to < best_to)) {
        best_flow = phi;
        best_to = e.to;
      }
    }
    if (best_to.empty() || best_flow <= 1e-9)
      throw Error("round_flow: the flow solution does not reach the target");
    if (best_to != kTarget) path.push_back(best_to);
    visited.insert(best_to);
    at = best_to;
  }
  throw Error("round_flow: walk exceeded the vertex count");
}

}  // namespace tscale::gcs
