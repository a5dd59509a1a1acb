#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/types.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ntpbias {

enum class SvmStatus { kOptimal, kInfeasible, kUndecided };
std::string to_string(SvmStatus status);

struct MarginProgramOptions {
  double tol = 1e-8;
  long max_iters = 1'000'000;
  /// Iterations between convergence checks and polishing attempts.
  int check_every = 25;
  /// Starting dual point; clamped to the nonnegative orthant. Zero when absent.
  std::optional<Eigen::VectorXd> initial_dual;
};

struct MarginProgramResult {
  SvmStatus status = SvmStatus::kUndecided;
  Eigen::VectorXd primal;  // c
  Eigen::VectorXd dual;    // lambda >= 0, c = G^T lambda
  double kkt_residual = 0.0;
  double duality_gap = 0.0;
  long iterations = 0;
  /// True when the returned point was confirmed by solving the active-set KKT system exactly.
  bool polished = false;
  /// Farkas certificate for infeasibility: mu >= 0, sum(mu) = 1, G^T mu = 0.
  std::optional<Eigen::VectorXd> certificate;
};

/// Solves  min 1/2 ||c||^2  s.t.  G c >= 1  by accelerated projected gradient ascent on the dual
///   max_{lambda >= 0} 1^T lambda - 1/2 ||G^T lambda||^2,
/// with step 1/||G||_2^2. Candidate answers are verified before they are returned:
/// optimality through the KKT system on the active set, infeasibility through a certificate.
MarginProgramResult solve_margin_program(const Eigen::MatrixXd& g, const MarginProgramOptions& opts = {});

/// KKT residual of (c, lambda) for the margin program: primal infeasibility, dual infeasibility,
/// complementary slackness and stationarity, as a max.
double margin_program_kkt(const Eigen::MatrixXd& g, const Eigen::VectorXd& c, const Eigen::VectorXd& lambda);

/// Constraint (j, v): anchored margin (e_{z_j} - e_v)^T W h_j >= 1 for v outside S_j.
using ConstraintIndex = std::pair<int, Token>;

struct InequalitySystem {
  /// One row per (j, v notin S_j), in coordinates of `coords_basis`.
  Eigen::MatrixXd g;
  /// (V*d) x k orthonormal basis of span{P_perp vec((e_{z_j} - e_v) h_j^T)}, a subspace of F-perp.
  Eigen::MatrixXd coords_basis;
  std::vector<ConstraintIndex> rows;
  int vocab_size = 0;
  int embed_dim = 0;

  Decoder to_decoder(const Eigen::VectorXd& coords) const;
};

InequalitySystem build_inequalities(const ContextTable& table, const SubspaceBasis& basis);

struct SvmSolution {
  SvmStatus status = SvmStatus::kUndecided;
  Decoder w_mm;
  double norm = 0.0;
  double margin_normalized = 0.0;
  double kkt_residual = 0.0;
  std::vector<ConstraintIndex> active_constraints;
  long iterations = 0;
  bool converged = false;
  std::optional<Eigen::VectorXd> certificate;
  Eigen::VectorXd dual;
};

/// NTP-SVM: min ||W|| subject to W in F-perp and every in-support logit exceeding every
/// out-of-support logit by at least 1.
SvmSolution solve_svm(const ContextTable& table, const SubspaceBasis& basis, const MarginProgramOptions& opts = {});

/// Classical multiclass max-margin program over all (j, z in S_j, v notin S_j) with no equality
/// constraints. Coincides with solve_svm on one-hot tables.
SvmSolution solve_multiclass_svm(const ContextTable& table, const MarginProgramOptions& opts = {});

struct Margin {
  double raw_min = 0.0;
  double normalized_min = 0.0;
};

/// min over j, z in S_j, v notin S_j of (e_z - e_v)^T W h_j.
double raw_margin(const Decoder& w, const ContextTable& table);

/// Both margins; throws std::invalid_argument for W = 0.
Margin margin_of(const Decoder& w, const ContextTable& table);

}  // namespace ntpbias
