// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rdte/param_store.hpp"
#include "rdte/tape.hpp"

namespace rdte {

struct GradcheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  /// False when two identical forward passes disagreed; the check is void.
  bool valid = true;
  std::size_t checked = 0;
  /// Coordinates skipped because their differences never settled (see gradcheck).
  std::size_t excluded = 0;
  /// The coordinate behind max_rel_err.
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Function of one input tensor, built on the given tape. The checked scalar
/// is the sum of the result's entries, taken in double precision so that
/// it is not rounded back to `real` before differencing.
using InputFn = std::function<Var(Tape&, const Var& x)>;
/// Function of the parameters in a store, reduced the same way.
using ParamFn = std::function<Var(Tape&, ParamStore&)>;

struct ParamCoord {
  std::string name;
  std::size_t index = 0;
};

/// Compares the tape gradient of f at x with central differences
/// (f(x+eps e_i) - f(x-eps e_i)) / 2eps for every coordinate i.
///
/// A coordinate that misses is re-probed with the step halved, up to three
/// times and not below 1e-4, and scored by its closest central difference
/// (or Richardson combination of two). If it still misses, it fails only
/// when two successive differences agreed within tol with the rounding
/// noise of f (measured by ulp nudges) under tol / 2 of each; otherwise,
/// or when a bracket straddles a kink (analytic value matching one side,
/// the sides disagreeing), the differences certify nothing and it is
/// excluded.
/// The check passes when max_rel_err <= tol and no more coordinates were
/// excluded than checked.
GradcheckReport gradcheck(const InputFn& f, const Tensor& x, double eps, double tol);

/// Same check over selected scalar entries of a parameter store.
GradcheckReport gradcheck_params(const ParamFn& f, ParamStore& store,
                                 const std::vector<ParamCoord>& coords, double eps, double tol);

/// `count` distinct (name, index) pairs drawn uniformly over all trainable scalars.
std::vector<ParamCoord> sample_param_coords(const ParamStore& store, std::size_t count,
                                            unsigned long long seed);

}  // namespace rdte
