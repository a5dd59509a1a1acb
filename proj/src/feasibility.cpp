#include "ntpbias/feasibility.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace ntpbias {

AnchoredSystem anchored_system(const ContextTable& table) {
  AnchoredSystem sys;
  const int rows = table.total_support() - table.num_contexts();
  sys.a.resize(rows, static_cast<Eigen::Index>(table.vocab_size) * table.embed_dim);
  sys.b.resize(rows);
  Eigen::Index r = 0;
  for (int j = 0; j < table.num_contexts(); ++j) {
    const auto& c = table.contexts[j];
    for (std::size_t i = 1; i < c.support.size(); ++i) {
      sys.a.row(r) = pair_direction(c.anchor(), c.support[i], c.embedding, table.vocab_size).transpose();
      sys.b(r) = std::log(c.probs[0] / c.probs[i]);
      sys.rows.emplace_back(j, c.support[i]);
      ++r;
    }
  }
  return sys;
}

CompatibilityResult solve_wstar(const ContextTable& table, double tol) {
  const AnchoredSystem sys = anchored_system(table);
  CompatibilityResult res;
  res.equations = static_cast<int>(sys.b.size());
  if (res.equations == 0) {
    res.w_star = Decoder::Zero(table.vocab_size, table.embed_dim);
    res.compatible = true;
    return res;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sys.a);
  const Eigen::VectorXd x = cod.solve(sys.b);
  res.w_star = unvec(x, table.vocab_size, table.embed_dim);
  res.residual_abs = (sys.a * x - sys.b).norm();
  res.residual = res.residual_abs / (1.0 + sys.b.norm());
  res.compatible = res.residual <= tol;
  return res;
}

SeparabilityResult separability_from(const SvmSolution& svm) {
  SeparabilityResult res;
  res.status = svm.status;
  res.separable = svm.status == SvmStatus::kOptimal;
  if (res.separable) res.witness = svm.w_mm;
  res.certificate = svm.certificate;
  return res;
}

SeparabilityResult check_separability(const ContextTable& table, const SubspaceBasis& basis,
                                      const MarginProgramOptions& opts) {
  return separability_from(solve_svm(table, basis, opts));
}

OverparamCheck overparam_check(const ContextTable& table) {
  OverparamCheck res;
  const int m = table.num_contexts();
  const int d = table.embed_dim;
  res.d_gt_m = d > m;
  const Eigen::MatrixXd h = table.embedding_matrix();
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(h).singularValues();
  if (sv.size() > 0 && sv(0) > 0.0) {
    const double thresh = sv(0) * std::max(d, m) * 1e-12;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sv(i) > thresh) ++res.rank_h;
    }
  }
  res.satisfied = res.d_gt_m && res.rank_h == m;
  return res;
}

}  // namespace ntpbias
