#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/types.hpp"

#include <Eigen/Core>

namespace ntpbias {

/// Softmax with max-logit subtraction.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
double log_sum_exp(const Eigen::VectorXd& logits);

/// Cross-entropy over distinct contexts, in nats. Only in-support tokens are ever evaluated.
double ce(const Decoder& w, const ContextTable& table);

/// Empirical conditional entropy, in nats.
double entropy(const ContextTable& table);

/// CE(W) - entropy, evaluated without cancellation as
///   sum_j pi_j [ KL(p_j || softmax restricted to S_j) + log1p(off-support mass ratio) ].
/// Agrees with ce() - entropy() to rounding and stays accurate when the gap is far below 1e-16.
double ce_gap(const Decoder& w, const ContextTable& table);

/// Loss restricted to in-support tokens (CE_F). Always <= ce(w).
double ce_subspace(const Decoder& w, const ContextTable& table);

/// Frobenius cosine similarity. Throws std::invalid_argument if either input is zero.
double alignment(const Decoder& w, const Decoder& reference);

/// ||P_F(W) - W*||_F.
double subspace_distance(const Decoder& w, const Decoder& w_star, const SubspaceBasis& basis);

/// Per-context KL(p_j || softmax(W h_j)) over the full vocabulary, weighted by pi_j and summed.
double weighted_kl(const Decoder& w, const ContextTable& table);

/// C = V * exp(||W*|| * M) with M = sqrt(2) * max_j ||h_j||, so that
/// CE(W* + gamma W^mm) - entropy <= C * exp(-gamma) for a unit-margin W^mm.
double decay_constant(const Decoder& w_star, const ContextTable& table);

}  // namespace ntpbias
