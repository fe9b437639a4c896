// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace tscale {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scenario ingestion or validation failure; the message names the offending field.
class ScenarioError : public Error {
 public:
  using Error::Error;
};

/// A monomial was requested that the lifted matrix cannot represent.
class NonRepresentableError : public Error {
 public:
  using Error::Error;
};

/// Solution extraction failure (no valid time step, indefinite matrix, ...).
class ExtractionError : public Error {
 public:
  using Error::Error;
};

/// Malformed conic program or solver misuse.
class SolveError : public Error {
 public:
  using Error::Error;
};

/// A refined cost dropped below a relaxation lower bound by more than the
/// allowed tolerance; either the relaxation or the solver is unsound.
class LowerBoundViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace tscale
