#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/types.hpp"

#include <Eigen/Core>

namespace ntpbias {

/// Orthonormal basis of the data subspace F = span{(e_z - e_z') h_j^T : z, z' in S_j}
/// inside the V*d dimensional space of decoders. Immutable once built.
class SubspaceBasis {
 public:
  static constexpr double kDefaultDropTol = 1e-10;

  SubspaceBasis() = default;
  SubspaceBasis(int vocab_size, int embed_dim, Eigen::MatrixXd basis, double drop_tol);

  int vocab_size() const { return vocab_size_; }
  int embed_dim() const { return embed_dim_; }
  int dim() const { return static_cast<int>(basis_.cols()); }
  double drop_tol() const { return drop_tol_; }

  /// (V*d) x dim_f matrix; column i is vec(B_i).
  const Eigen::MatrixXd& vectors() const { return basis_; }
  Decoder element(int i) const;

  /// Coordinates <W, B_i>.
  Eigen::VectorXd coordinates(const Decoder& w) const;
  Decoder from_coordinates(const Eigen::VectorXd& coords) const;

  Decoder project_f(const Decoder& w) const;
  Decoder project_perp(const Decoder& w) const;

 private:
  void check_shape(const Decoder& w) const;

  int vocab_size_ = 0;
  int embed_dim_ = 0;
  Eigen::MatrixXd basis_;
  double drop_tol_ = kDefaultDropTol;
};

/// Orthonormal basis for the span of the given columns, via column-pivoted Householder QR.
/// Columns whose residual falls below rel_tol * reference_norm are dropped.
Eigen::MatrixXd orthonormal_span(const Eigen::MatrixXd& columns, double rel_tol, double reference_norm);

/// Anchored spanning set (anchor z_j = min S_j), orthonormalized by QR.
SubspaceBasis build_basis(const ContextTable& table, double drop_tol = SubspaceBasis::kDefaultDropTol);

inline Decoder project_f(const Decoder& w, const SubspaceBasis& basis) { return basis.project_f(w); }
inline Decoder project_perp(const Decoder& w, const SubspaceBasis& basis) { return basis.project_perp(w); }

}  // namespace ntpbias
