#include "ntpbias/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ntpbias {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

double log_sum_exp(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  return mx + std::log((logits.array() - mx).exp().sum());
}

double ce(const Decoder& w, const ContextTable& table) {
  double loss = 0.0;
  for (const auto& c : table.contexts) {
    const Eigen::VectorXd logits = w * c.embedding;
    const double lse = log_sum_exp(logits);
    double inner_sum = 0.0;
    for (std::size_t i = 0; i < c.support.size(); ++i) inner_sum += c.probs[i] * (logits(c.support[i]) - lse);
    loss -= c.prior * inner_sum;
  }
  return loss;
}

double entropy(const ContextTable& table) {
  double h = 0.0;
  for (const auto& c : table.contexts) {
    for (double p : c.probs) h -= c.prior * p * std::log(p);
  }
  return h;
}

double ce_gap(const Decoder& w, const ContextTable& table) {
  double gap = 0.0;
  for (const auto& c : table.contexts) {
    const Eigen::VectorXd logits = w * c.embedding;
    double in_max = -std::numeric_limits<double>::infinity();
    for (Token z : c.support) in_max = std::max(in_max, logits(z));
    double in_sum = 0.0;
    for (Token z : c.support) in_sum += std::exp(logits(z) - in_max);
    const double in_lse = in_max + std::log(in_sum);
    // KL(p || q) = sum p (d + e^{-d} - 1) with d = log(p / q); every term is nonnegative and
    // second order in d, so near-matched logits do not drown in cancellation noise
    double kl = 0.0;
    for (std::size_t i = 0; i < c.support.size(); ++i) {
      const double d = std::log(c.probs[i]) - (logits(c.support[i]) - in_lse);
      kl += c.probs[i] * (d + std::expm1(-d));
    }
    kl = std::max(kl, 0.0);
    double off_ratio = 0.0;
    for (Token v = 0; v < table.vocab_size; ++v) {
      if (!c.in_support(v)) off_ratio += std::exp(logits(v) - in_lse);
    }
    gap += c.prior * (kl + std::log1p(off_ratio));
  }
  return gap;
}

double ce_subspace(const Decoder& w, const ContextTable& table) {
  double loss = 0.0;
  for (const auto& c : table.contexts) {
    const Eigen::VectorXd logits = w * c.embedding;
    // log(1 + sum_{z' != z} e^{-(l_z - l_z')}) = LSE_S(l) - l_z
    double mx = -std::numeric_limits<double>::infinity();
    for (Token z : c.support) mx = std::max(mx, logits(z));
    double s = 0.0;
    for (Token z : c.support) s += std::exp(logits(z) - mx);
    const double in_lse = mx + std::log(s);
    for (std::size_t i = 0; i < c.support.size(); ++i) {
      loss += c.prior * c.probs[i] * (in_lse - logits(c.support[i]));
    }
  }
  return loss;
}

double alignment(const Decoder& w, const Decoder& reference) {
  if (w.rows() != reference.rows() || w.cols() != reference.cols()) {
    throw std::invalid_argument("alignment: shape mismatch");
  }
  const double nw = w.norm();
  const double nr = reference.norm();
  if (nw == 0.0 || nr == 0.0) throw std::invalid_argument("alignment: zero matrix has no direction");
  return inner(w, reference) / (nw * nr);
}

double subspace_distance(const Decoder& w, const Decoder& w_star, const SubspaceBasis& basis) {
  return (basis.project_f(w) - w_star).norm();
}

double weighted_kl(const Decoder& w, const ContextTable& table) {
  double total = 0.0;
  for (const auto& c : table.contexts) {
    const Eigen::VectorXd logits = w * c.embedding;
    const double lse = log_sum_exp(logits);
    double kl = 0.0;
    for (std::size_t i = 0; i < c.support.size(); ++i) {
      kl += c.probs[i] * (std::log(c.probs[i]) - (logits(c.support[i]) - lse));
    }
    total += c.prior * kl;
  }
  return total;
}

double decay_constant(const Decoder& w_star, const ContextTable& table) {
  double max_h = 0.0;
  for (const auto& c : table.contexts) max_h = std::max(max_h, c.embedding.norm());
  return table.vocab_size * std::exp(w_star.norm() * std::sqrt(2.0) * max_h);
}

}  // namespace ntpbias
