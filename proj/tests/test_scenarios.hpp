// Copyright The tscale Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Inline scenario documents shared across the test suites.
#pragma once

#include <json.hpp>
#include <string>

#include "tscale/model.hpp"

namespace tscale::testing {

/// Minimum-time double integrator: free states, |u| <= 1, eta-only cost.
inline nlohmann::json double_integrator_json(int K = 8, double h_min = 0.02, double h_max = 0.5) {
  nlohmann::json j = nlohmann::json::parse(R"({
    "name": "double_integrator",
    "modes": [{
      "name": "free",
      "A": [[0, 1], [0, 0]],
      "B": [[0], [1]],
      "c": [0, 0],
      "X": {"C": [], "d": [], "compact": false},
      "U": {"C": [[1], [-1]], "d": [1, 1]}
    }],
    "edges": [],
    "ocp": {
      "eta": 1.0,
      "Q": [[0, 0], [0, 0]],
      "R": [[0]],
      "K": 8,
      "h_min": 0.02,
      "h_max": 0.5,
      "x_start": [1, 0],
      "x_goal": [0, 0]
    }
  })");
  j["ocp"]["K"] = K;
  j["ocp"]["h_min"] = h_min;
  j["ocp"]["h_max"] = h_max;
  return j;
}

inline Scenario double_integrator(int K = 8) {
  return validate_scenario(double_integrator_json(K));
}

/// Linearized inverted pendulum against an elastic wall, three-vertex graph
/// (free approach, contact, free return) so contact sequences are simple paths.
inline nlohmann::json pendulum_wall_json(double theta_dot0 = 0.1, int K = 20) {
  nlohmann::json j = nlohmann::json::parse(R"({
    "name": "pendulum_wall",
    "modes": [
      {
        "name": "approach",
        "A": [[0, 1], [10, 0]],
        "B": [[0], [1]],
        "X": {"C": [[-1, 0], [1, 0], [0, -1], [0, 1]], "d": [0.1, 0.3, 1.0, 1.0]},
        "U": {"C": [[1], [-1]], "d": [1, 1]}
      },
      {
        "name": "contact",
        "A": [[0, 1], [-90, 0]],
        "B": [[0], [1]],
        "c": [0, 10],
        "X": {"C": [[1, 0], [-1, 0], [0, -1], [0, 1]], "d": [-0.1, 0.3, 1.0, 1.0]},
        "U": {"C": [[1], [-1]], "d": [1, 1]}
      },
      {
        "name": "recover",
        "A": [[0, 1], [10, 0]],
        "B": [[0], [1]],
        "X": {"C": [[-1, 0], [1, 0], [0, -1], [0, 1]], "d": [0.1, 0.3, 1.0, 1.0]},
        "U": {"C": [[1], [-1]], "d": [1, 1]}
      }
    ],
    "edges": [["approach", "contact"], ["contact", "recover"]],
    "ocp": {
      "eta": 1.0,
      "Q": [[0, 0], [0, 0]],
      "R": [[0]],
      "K": 20,
      "h_min": 0.002,
      "h_max": 0.06,
      "x_start": [0.09, 0.1],
      "x_goal": [0, 0]
    }
  })");
  j["ocp"]["x_start"][1] = theta_dot0;
  j["ocp"]["K"] = K;
  return j;
}

inline Scenario pendulum_wall(double theta_dot0 = 0.1, int K = 20) {
  return validate_scenario(pendulum_wall_json(theta_dot0, K));
}

}  // namespace tscale::testing
