#include "ntpbias/subspace.hpp"

#include <Eigen/QR>

#include <stdexcept>

namespace ntpbias {

SubspaceBasis::SubspaceBasis(int vocab_size, int embed_dim, Eigen::MatrixXd basis, double drop_tol)
    : vocab_size_(vocab_size), embed_dim_(embed_dim), basis_(std::move(basis)), drop_tol_(drop_tol) {
  if (basis_.rows() != static_cast<Eigen::Index>(vocab_size) * embed_dim) {
    throw std::invalid_argument("subspace: basis row count must equal V*d");
  }
}

void SubspaceBasis::check_shape(const Decoder& w) const {
  if (w.rows() != vocab_size_ || w.cols() != embed_dim_) {
    throw std::invalid_argument("subspace: decoder is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                                ", basis expects " + std::to_string(vocab_size_) + "x" + std::to_string(embed_dim_));
  }
}

Decoder SubspaceBasis::element(int i) const { return unvec(basis_.col(i), vocab_size_, embed_dim_); }

Eigen::VectorXd SubspaceBasis::coordinates(const Decoder& w) const {
  check_shape(w);
  return basis_.transpose() * vec(w);
}

Decoder SubspaceBasis::from_coordinates(const Eigen::VectorXd& coords) const {
  if (coords.size() != dim()) throw std::invalid_argument("subspace: coordinate vector has wrong size");
  if (dim() == 0) return Decoder::Zero(vocab_size_, embed_dim_);
  return unvec(basis_ * coords, vocab_size_, embed_dim_);
}

Decoder SubspaceBasis::project_f(const Decoder& w) const {
  check_shape(w);
  if (dim() == 0) return Decoder::Zero(vocab_size_, embed_dim_);
  return unvec(basis_ * (basis_.transpose() * vec(w)), vocab_size_, embed_dim_);
}

Decoder SubspaceBasis::project_perp(const Decoder& w) const { return w - project_f(w); }

Eigen::MatrixXd orthonormal_span(const Eigen::MatrixXd& columns, double rel_tol, double reference_norm) {
  if (columns.cols() == 0 || reference_norm == 0.0) return Eigen::MatrixXd(columns.rows(), 0);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(columns);
  const auto& r = qr.matrixR();
  Eigen::Index rank = 0;
  const Eigen::Index diag = std::min(r.rows(), r.cols());
  while (rank < diag && std::abs(r(rank, rank)) > rel_tol * reference_norm) ++rank;
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(columns.rows(), rank);
  return q;
}

SubspaceBasis build_basis(const ContextTable& table, double drop_tol) {
  const int vocab = table.vocab_size;
  const int d = table.embed_dim;
  const int n_span = table.total_support() - table.num_contexts();
  Eigen::MatrixXd spanning(static_cast<Eigen::Index>(vocab) * d, n_span);
  Eigen::Index col = 0;
  double largest = 0.0;
  for (const auto& c : table.contexts) {
    for (std::size_t i = 1; i < c.support.size(); ++i) {
      spanning.col(col) = pair_direction(c.anchor(), c.support[i], c.embedding, vocab);
      largest = std::max(largest, spanning.col(col).norm());
      ++col;
    }
  }
  return SubspaceBasis(vocab, d, orthonormal_span(spanning, drop_tol, largest), drop_tol);
}

}  // namespace ntpbias
