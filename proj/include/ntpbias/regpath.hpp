#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/optim.hpp"
#include "ntpbias/types.hpp"

#include <string>
#include <vector>

namespace ntpbias {

enum class RegPathMethod {
  /// Ridge multiplier search: solves min CE + mu/2 ||W||^2 by block Newton and root-finds log mu
  /// so that ||W|| = B.
  kRidgeNewton,
  /// Projected gradient on the ball, warm-started from the previous radius.
  kProjectedGradient,
};

std::string to_string(RegPathMethod method);
RegPathMethod regpath_method_from_string(const std::string& s);

struct RegPathOptions {
  RegPathMethod method = RegPathMethod::kRidgeNewton;
  /// Per-radius budget: gradient steps (projected gradient) or multiplier evaluations (ridge).
  long budget = 200000;
  /// Projected gradient stops once the gradient mapping is at most tol * (1 + CE).
  double tol = 1e-8;
  /// Ridge search stops once | ||W|| - B | <= norm_tol * B.
  double norm_tol = 1e-10;
};

struct RegPathPoint {
  double bound = 0.0;
  Decoder w;
  double norm = 0.0;
  double alignment = 0.0;      // with W^mm; NaN without reference
  double subspace_dist = 0.0;  // ||P_F(W) - W*||; NaN without reference
  double ce = 0.0;
  double ce_gap = 0.0;
  long iterations = 0;
  bool converged = false;
  /// The ball constraint is inactive: the unconstrained minimizer lies inside.
  bool interior = false;
  /// log of the ball multiplier mu (mu W = -grad CE at the solution).
  double log_multiplier = 0.0;
};

/// Minimizers of CE over Frobenius balls of the given radii. Throws std::invalid_argument unless the
/// grid is strictly increasing and positive. Unconverged points are flagged and kept.
std::vector<RegPathPoint> regpath(const ContextTable& table, const std::vector<double>& grid,
                                  const RegPathOptions& opts = {}, const References& refs = {});

}  // namespace ntpbias
