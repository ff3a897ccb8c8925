// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rdte/gradcheck.hpp"

namespace rdte {

/// One named finite-difference check over a small random instance.
///
/// Instances are drawn from a seeded generator. Layer outputs are reduced
/// through a random projection <w, y>. For input checks, a draw where some
/// input has |gradient| below 0.1 is redrawn: there a float32 central
/// difference mostly measures rounding. Parameter checks take entries at or
/// above that floor (or each tensor's largest entry when none reach it).
struct GradcheckCase {
  std::string scope;
  std::string name;
  double tol = 1e-2;
  double eps = 1e-2;
  /// Runs the check with the given tolerance and step (normally `tol`, `eps`).
  std::function<GradcheckReport(double tol, double eps)> run;
};

/// tensor, nn, stair, hvda, asbe, euler, model.
const std::vector<std::string>& gradcheck_scopes();

/// Cases of one scope, or of every scope for "all". Throws ConfigError for
/// any other name.
std::vector<GradcheckCase> gradcheck_cases(const std::string& scope, std::uint64_t seed = 0);

}  // namespace rdte
