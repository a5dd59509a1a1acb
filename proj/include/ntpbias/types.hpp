#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace ntpbias {

/// Token ids are 0-based in memory; file formats use 1-based ids.
using Token = int;
using TokenSeq = std::vector<Token>;

/// V x d decoder matrix. Logits for context j are W * h_j.
using Decoder = Eigen::MatrixXd;

/// Row-major vectorization: entry (v, k) of a V x d matrix maps to v * d + k.
inline Eigen::VectorXd vec(const Decoder& w) {
  Eigen::VectorXd out(w.size());
  const Eigen::Index d = w.cols();
  for (Eigen::Index v = 0; v < w.rows(); ++v) {
    for (Eigen::Index k = 0; k < d; ++k) out(v * d + k) = w(v, k);
  }
  return out;
}

inline Decoder unvec(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Index rows, Eigen::Index cols) {
  Decoder w(rows, cols);
  for (Eigen::Index v = 0; v < rows; ++v) {
    for (Eigen::Index k = 0; k < cols; ++k) w(v, k) = x(v * cols + k);
  }
  return w;
}

/// vec((e_a - e_b) h^T) for tokens a != b.
inline Eigen::VectorXd pair_direction(Token a, Token b, const Eigen::VectorXd& h, int vocab_size) {
  const Eigen::Index d = h.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(vocab_size * d);
  out.segment(static_cast<Eigen::Index>(a) * d, d) += h;
  out.segment(static_cast<Eigen::Index>(b) * d, d) -= h;
  return out;
}

/// Frobenius inner product.
inline double inner(const Decoder& a, const Decoder& b) { return (a.array() * b.array()).sum(); }

}  // namespace ntpbias
