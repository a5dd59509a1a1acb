#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/svm.hpp"
#include "ntpbias/types.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace ntpbias {

/// Compatibility equations with anchor z_j = min(S_j):
///   <vec((e_{z_j} - e_{z'}) h_j^T), vec(W)> = log(p_{j,z_j} / p_{j,z'})   for z' in S_j \ {z_j}.
struct AnchoredSystem {
  Eigen::MatrixXd a;                  // sum_j (S_j - 1) rows, V*d columns
  Eigen::VectorXd b;
  std::vector<ConstraintIndex> rows;  // (j, z')
};

AnchoredSystem anchored_system(const ContextTable& table);

struct CompatibilityResult {
  Decoder w_star;
  double residual = 0.0;      // ||A w - b|| / (1 + ||b||)
  double residual_abs = 0.0;  // ||A w - b||
  bool compatible = false;
  int equations = 0;
};

/// Minimum-norm least-squares solution of the anchored system. It lies in the row space of A,
/// which is F, so it is the unique solution within F whenever one exists.
CompatibilityResult solve_wstar(const ContextTable& table, double tol = 1e-8);

struct SeparabilityResult {
  bool separable = false;
  SvmStatus status = SvmStatus::kUndecided;
  std::optional<Decoder> witness;
  std::optional<Eigen::VectorXd> certificate;
};

/// Decided by the NTP-SVM program: feasible means separable, and W^mm is the witness.
SeparabilityResult check_separability(const ContextTable& table, const SubspaceBasis& basis,
                                      const MarginProgramOptions& opts = {});
SeparabilityResult separability_from(const SvmSolution& svm);

struct OverparamCheck {
  bool d_gt_m = false;
  int rank_h = 0;
  bool satisfied = false;
};

/// d > m and the d x m embedding matrix has full column rank (SVD, threshold sigma_max * max(d, m) * 1e-12).
OverparamCheck overparam_check(const ContextTable& table);

}  // namespace ntpbias
