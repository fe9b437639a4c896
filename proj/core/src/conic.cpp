// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#include "tscale/conic.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>

namespace tscale::conic {

int ConicProgram::add_block(std::string name, int dim) {
  if (dim < 1) throw SolveError("block '" + name + "' must have positive dimension");
  block_names_.push_back(std::move(name));
  block_dims_.push_back(dim);
  return num_blocks() - 1;
}

int ConicProgram::add_scalar(std::string name, ScalarKind kind) {
  scalar_names_.push_back(std::move(name));
  scalar_kinds_.push_back(kind);
  return num_scalars() - 1;
}

namespace {
void check_term(const ConicProgram& p, const Term& t, const std::string& where) {
  if (t.block == kScalar) {
    if (t.a < 0 || t.a >= p.num_scalars())
      throw SolveError("scalar index out of range in " + where);
    return;
  }
  if (t.block < 0 || t.block >= p.num_blocks())
    throw SolveError("block index out of range in " + where);
  const int d = p.block_dim(t.block);
  if (t.a < 0 || t.b < t.a || t.b >= d)
    throw SolveError("entry not canonical (need 0 <= a <= b < dim) in " + where);
}
}  // namespace

void ConicProgram::check_well_formed() const {
  for (const Term& t : objective_) check_term(*this, t, "objective");
  for (size_t i = 0; i < rows_.size(); ++i)
    for (const Term& t : rows_[i].terms)
      check_term(*this, t, "row " + std::to_string(i) + " [" + rows_[i].tag + "]");
}

nlohmann::json ConicProgram::debug_dump() const {
  nlohmann::json j;
  j["blocks"] = nlohmann::json::array();
  for (int b = 0; b < num_blocks(); ++b)
    j["blocks"].push_back({{"name", block_names_[b]}, {"dim", block_dims_[b]}});
  j["scalars"] = nlohmann::json::array();
  for (int i = 0; i < num_scalars(); ++i)
    j["scalars"].push_back({{"name", scalar_names_[i]},
                            {"kind", scalar_kinds_[i] == ScalarKind::kNonneg ? "nonneg" : "free"}});
  auto terms_json = [](const std::vector<Term>& terms) {
    nlohmann::json a = nlohmann::json::array();
    for (const Term& t : terms) a.push_back({t.block, t.a, t.b, t.coeff});
    return a;
  };
  j["objective"] = terms_json(objective_);
  j["objective_constant"] = objective_constant_;
  j["rows"] = nlohmann::json::array();
  for (const Row& r : rows_)
    j["rows"].push_back({{"sense", r.sense == Sense::kEq ? "eq" : "ge"},
                         {"rhs", r.rhs},
                         {"tag", r.tag},
                         {"terms", terms_json(r.terms)}});
  return j;
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kPrimalInfeasible: return "primal_infeasible";
    case SolveStatus::kDualInfeasible: return "dual_infeasible";
    case SolveStatus::kNumericalLimit: return "numerical_limit";
  }
  return "unknown";
}

double ConicSolution::value(const std::vector<Term>& terms) const {
  double v = 0;
  for (const Term& t : terms) {
    if (t.block == kScalar)
      v += t.coeff * scalars(t.a);
    else
      v += t.coeff * blocks[t.block](t.a, t.b);
  }
  return v;
}

namespace {
ViolationReport verify_impl(const ConicProgram& p, const std::vector<Mat>& blocks,
                            const Vec& scalars, double tol) {
  ViolationReport rep;
  rep.min_block_eigenvalue = 0;

  auto record = [&](double amount, const std::string& tag, int row, const std::string& detail) {
    if (amount <= 0) return;
    rep.max_violation = std::max(rep.max_violation, amount);
    rep.worst.push_back({tag, row, amount, detail});
  };

  const auto& rows = p.rows();
  for (size_t i = 0; i < rows.size(); ++i) {
    double v = 0;
    for (const Term& t : rows[i].terms)
      v += t.coeff * (t.block == kScalar ? scalars(t.a) : blocks[t.block](t.a, t.b));
    const double resid =
        rows[i].sense == Sense::kEq ? std::abs(v - rows[i].rhs) : std::max(0.0, rows[i].rhs - v);
    record(resid, rows[i].tag, static_cast<int>(i), "row residual");
  }

  for (int b = 0; b < p.num_blocks(); ++b) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(blocks[b], Eigen::EigenvaluesOnly);
    const double lmin = eig.eigenvalues()(0);
    rep.min_block_eigenvalue = std::min(rep.min_block_eigenvalue, lmin);
    record(std::max(0.0, -lmin), "psd:" + p.block_name(b), -1, "minimum eigenvalue");
  }
  for (int i = 0; i < p.num_scalars(); ++i)
    if (p.scalar_kind(i) == ScalarKind::kNonneg)
      record(std::max(0.0, -scalars(i)), "nonneg:" + p.scalar_name(i), -1, "scalar sign");

  std::stable_sort(rep.worst.begin(), rep.worst.end(),
                   [](const Violation& x, const Violation& y) { return x.amount > y.amount; });
  // Keep only entries above tolerance, capped for readability.
  size_t keep = 0;
  for (const Violation& v : rep.worst)
    if (v.amount > tol && keep < 32) rep.worst[keep++] = v;
  rep.worst.resize(keep);
  return rep;
}
}  // namespace

ViolationReport verify_feasibility(const ConicProgram& program, const ConicSolution& solution,
                                   double tol) {
  return verify_impl(program, solution.blocks, solution.scalars, tol);
}

ViolationReport verify_point(const ConicProgram& program, const std::vector<Mat>& blocks,
                             const Vec& scalars, double tol) {
  return verify_impl(program, blocks, scalars, tol);
}

}  // namespace tscale::conic
