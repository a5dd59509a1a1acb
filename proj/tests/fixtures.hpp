#pragma once

#include "ntpbias/corpus.hpp"

#include <Eigen/Core>

#include <initializer_list>
#include <vector>

namespace fixture {

using ntpbias::ContextTable;
using ntpbias::DistinctContext;

/// Context with 0-based support, given probabilities and prior, no tokens.
inline DistinctContext context(Eigen::VectorXd h, std::vector<int> support, std::vector<double> probs, double prior) {
  DistinctContext c;
  c.embedding = std::move(h);
  c.support = std::move(support);
  c.probs = std::move(probs);
  c.prior = prior;
  return c;
}

inline Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline Eigen::VectorXd unit(int dim, int k) { return Eigen::VectorXd::Unit(dim, k); }

/// Built by hand, not validated: some oracle cases use full supports.
inline ContextTable table(int vocab, int dim, std::vector<DistinctContext> contexts) {
  ContextTable t;
  t.vocab_size = vocab;
  t.embed_dim = dim;
  t.contexts = std::move(contexts);
  return t;
}

/// m=1, V=3, d=1, h=(1), S={1,2} with the given probabilities.
inline ContextTable single_pair(double p1, double p2) {
  return table(3, 1, {context(vec({1.0}), {0, 1}, {p1, p2}, 1.0)});
}

/// One-hot pair: h1=e1 -> token 1, h2=e2 -> token 2, V=2.
inline ContextTable one_hot_pair() {
  return table(2, 2, {context(unit(2, 0), {0}, {1.0}, 0.5), context(unit(2, 1), {1}, {1.0}, 0.5)});
}

/// Same embedding, supports {1} and {2}: not separable.
inline ContextTable twin_contexts() {
  return table(2, 1, {context(vec({1.0}), {0}, {1.0}, 0.5), context(vec({1.0}), {1}, {1.0}, 0.5)});
}

}  // namespace fixture
