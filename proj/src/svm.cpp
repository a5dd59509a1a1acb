#include "ntpbias/svm.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ntpbias {

namespace {

constexpr double kPolishFeasTol = 1e-11;
constexpr double kCertificateTol = 1e-10;

struct Candidate {
  Eigen::VectorXd lambda;
  Eigen::VectorXd c;
};

std::vector<Eigen::Index> support_of(const Eigen::VectorXd& x, double rel) {
  std::vector<Eigen::Index> idx;
  const double mx = x.size() ? x.maxCoeff() : 0.0;
  if (mx <= 0.0) return idx;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x(i) > rel * mx) idx.push_back(i);
  }
  return idx;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& g, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), g.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = g.row(idx[i]);
  return out;
}

// Solve G_A G_A^T x = 1 on a guessed active set and accept only a KKT point.
std::optional<Candidate> polish_active_set(const Eigen::MatrixXd& g, const std::vector<Eigen::Index>& active) {
  if (active.empty()) return std::nullopt;
  const Eigen::MatrixXd ga = rows_of(g, active);
  const Eigen::MatrixXd k = ga * ga.transpose();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(k);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k.rows());
  Eigen::VectorXd x = cod.solve(ones);
  if (!x.allFinite()) return std::nullopt;
  if ((k * x - ones).lpNorm<Eigen::Infinity>() > 1e-9) return std::nullopt;
  const double scale = std::max(1.0, x.lpNorm<Eigen::Infinity>());
  if (x.minCoeff() < -1e-12 * scale) return std::nullopt;
  x = x.cwiseMax(0.0);
  Candidate cand;
  cand.lambda = Eigen::VectorXd::Zero(g.rows());
  for (std::size_t i = 0; i < active.size(); ++i) cand.lambda(active[i]) = x(static_cast<Eigen::Index>(i));
  cand.c = g.transpose() * cand.lambda;
  const Eigen::VectorXd slack = g * cand.c - Eigen::VectorXd::Ones(g.rows());
  if (slack.minCoeff() < -kPolishFeasTol) return std::nullopt;
  return cand;
}

// Project a normalized dual direction onto {mu : G_S^T mu = 0} and verify it is a Farkas certificate.
std::optional<Eigen::VectorXd> polish_certificate(const Eigen::MatrixXd& g, const Eigen::VectorXd& lambda,
                                                  double row_scale) {
  const auto sup = support_of(lambda, 1e-9);
  if (sup.empty()) return std::nullopt;
  const Eigen::MatrixXd m = rows_of(g, sup).transpose();  // k x |S|
  Eigen::VectorXd mu(static_cast<Eigen::Index>(sup.size()));
  for (std::size_t i = 0; i < sup.size(); ++i) mu(static_cast<Eigen::Index>(i)) = lambda(sup[i]);
  mu /= mu.sum();
  if (m.rows() > 0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(m);
    mu -= cod.solve(m * mu);
  }
  if (mu.minCoeff() < -1e-10) return std::nullopt;
  mu = mu.cwiseMax(0.0);
  const double total = mu.sum();
  if (!(total > 0.5)) return std::nullopt;
  mu /= total;
  Eigen::VectorXd full = Eigen::VectorXd::Zero(g.rows());
  for (std::size_t i = 0; i < sup.size(); ++i) full(sup[i]) = mu(static_cast<Eigen::Index>(i));
  if ((g.transpose() * full).norm() > kCertificateTol * row_scale) return std::nullopt;
  return full;
}

}  // namespace

std::string to_string(SvmStatus status) {
  switch (status) {
    case SvmStatus::kOptimal: return "optimal";
    case SvmStatus::kInfeasible: return "infeasible";
    case SvmStatus::kUndecided: return "undecided";
  }
  return "unknown";
}

double margin_program_kkt(const Eigen::MatrixXd& g, const Eigen::VectorXd& c, const Eigen::VectorXd& lambda) {
  if (g.rows() == 0) return c.norm();
  const Eigen::VectorXd slack = g * c - Eigen::VectorXd::Ones(g.rows());
  const double primal = std::max(0.0, -slack.minCoeff());
  const double dual = std::max(0.0, -lambda.minCoeff());
  const double comp = (lambda.array() * slack.array()).abs().maxCoeff();
  const double stat = (c - g.transpose() * lambda).norm();
  return std::max({primal, dual, comp, stat});
}

MarginProgramResult solve_margin_program(const Eigen::MatrixXd& g, const MarginProgramOptions& opts) {
  const Eigen::Index r = g.rows();
  MarginProgramResult res;
  if (r == 0) {
    res.status = SvmStatus::kOptimal;
    res.primal = Eigen::VectorXd::Zero(g.cols());
    res.dual = Eigen::VectorXd::Zero(0);
    res.polished = true;
    return res;
  }
  const Eigen::VectorXd row_norms = g.rowwise().norm();
  const double row_scale = row_norms.maxCoeff();
  for (Eigen::Index i = 0; i < r; ++i) {
    if (row_norms(i) == 0.0) {
      // 0 >= 1 is violated by every c
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(r);
      mu(i) = 1.0;
      res.status = SvmStatus::kInfeasible;
      res.certificate = mu;
      res.primal = Eigen::VectorXd::Zero(g.cols());
      res.dual = Eigen::VectorXd::Zero(r);
      return res;
    }
  }

  const Eigen::MatrixXd k = g * g.transpose();
  const double lipschitz =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = 1.0 / lipschitz;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(r);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(r);
  if (opts.initial_dual) {
    if (opts.initial_dual->size() != r) throw std::invalid_argument("margin program: initial dual has wrong size");
    x = opts.initial_dual->cwiseMax(0.0);
  }
  Eigen::VectorXd x_prev = x;
  Eigen::VectorXd y = x;
  double t = 1.0;

  auto finish = [&](const Eigen::VectorXd& lambda, SvmStatus status, long iters, bool polished) {
    res.status = status;
    res.dual = lambda;
    res.primal = g.transpose() * lambda;
    res.kkt_residual = margin_program_kkt(g, res.primal, lambda);
    res.duality_gap = res.primal.squaredNorm() - lambda.sum();
    res.iterations = iters;
    res.polished = polished;
    return res;
  };

  for (long it = 1; it <= opts.max_iters; ++it) {
    const Eigen::VectorXd grad = ones - k * y;  // ascent direction of the dual
    x_prev.swap(x);
    x = (y + step * grad).cwiseMax(0.0);
    // adaptive restart when the momentum step stops agreeing with the gradient
    if (grad.dot(x - x_prev) < 0.0) {
      t = 1.0;
      y = x;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x + ((t - 1.0) / t_next) * (x - x_prev);
      t = t_next;
    }

    if (it % opts.check_every != 0 && it != opts.max_iters) continue;

    const Eigen::VectorXd c = g.transpose() * x;
    const Eigen::VectorXd slack = g * c - ones;
    const double infeas = std::max(0.0, -slack.minCoeff());
    const double primal_obj = 0.5 * c.squaredNorm();
    const double gap = c.squaredNorm() - x.sum();

    for (const auto& active : {support_of(x, 1e-12), [&] {
                                 std::vector<Eigen::Index> idx;
                                 for (Eigen::Index i = 0; i < r; ++i) {
                                   if (slack(i) <= 1e-6 * (1.0 + std::abs(slack.minCoeff()))) idx.push_back(i);
                                 }
                                 return idx;
                               }()}) {
      if (auto cand = polish_active_set(g, active)) return finish(cand->lambda, SvmStatus::kOptimal, it, true);
    }
    if (infeas <= opts.tol && std::abs(gap) <= opts.tol * (1.0 + primal_obj)) {
      return finish(x, SvmStatus::kOptimal, it, false);
    }
    // an unbounded dual drives x along a recession direction: G^T x stays small relative to sum(x)
    const double mass = x.sum();
    if (mass > 0.0 && c.norm() <= 1e-3 * row_scale * mass) {
      if (auto cert = polish_certificate(g, x, row_scale)) {
        finish(x, SvmStatus::kInfeasible, it, false);
        res.certificate = *cert;
        return res;
      }
    }
  }
  return finish(x, SvmStatus::kUndecided, opts.max_iters, false);
}

Decoder InequalitySystem::to_decoder(const Eigen::VectorXd& coords) const {
  if (coords_basis.cols() == 0) return Decoder::Zero(vocab_size, embed_dim);
  return unvec(coords_basis * coords, vocab_size, embed_dim);
}

InequalitySystem build_inequalities(const ContextTable& table, const SubspaceBasis& basis) {
  InequalitySystem sys;
  sys.vocab_size = table.vocab_size;
  sys.embed_dim = table.embed_dim;
  const Eigen::Index dim = static_cast<Eigen::Index>(table.vocab_size) * table.embed_dim;
  std::vector<Eigen::VectorXd> projected;
  double largest = 0.0;
  const Eigen::MatrixXd& q = basis.vectors();
  for (int j = 0; j < table.num_contexts(); ++j) {
    const auto& c = table.contexts[j];
    for (Token v : c.off_support(table.vocab_size)) {
      Eigen::VectorXd raw = pair_direction(c.anchor(), v, c.embedding, table.vocab_size);
      largest = std::max(largest, raw.norm());
      if (q.cols() > 0) raw -= q * (q.transpose() * raw);
      projected.push_back(std::move(raw));
      sys.rows.emplace_back(j, v);
    }
  }
  Eigen::MatrixXd cols(dim, static_cast<Eigen::Index>(projected.size()));
  for (std::size_t i = 0; i < projected.size(); ++i) cols.col(static_cast<Eigen::Index>(i)) = projected[i];
  sys.coords_basis = orthonormal_span(cols, basis.drop_tol(), largest);
  sys.g = (sys.coords_basis.transpose() * cols).transpose();
  // constraint matrices lying in F (up to rounding) have no F-perp component at all
  for (Eigen::Index i = 0; i < sys.g.rows(); ++i) {
    if (cols.col(i).norm() <= basis.drop_tol() * largest) sys.g.row(i).setZero();
  }
  return sys;
}

namespace {

SvmSolution to_solution(const ContextTable& table, const MarginProgramResult& res, const Decoder& w,
                        const std::vector<ConstraintIndex>& rows) {
  SvmSolution sol;
  sol.status = res.status;
  sol.iterations = res.iterations;
  sol.converged = res.status == SvmStatus::kOptimal;
  sol.kkt_residual = res.kkt_residual;
  sol.certificate = res.certificate;
  sol.dual = res.dual;
  if (sol.converged) {
    sol.w_mm = w;
    sol.norm = w.norm();
    sol.margin_normalized = sol.norm > 0.0 ? raw_margin(w, table) / sol.norm : 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (res.dual(static_cast<Eigen::Index>(i)) > 0.0) sol.active_constraints.push_back(rows[i]);
    }
  } else {
    sol.w_mm = Decoder::Zero(table.vocab_size, table.embed_dim);
  }
  return sol;
}

}  // namespace

SvmSolution solve_svm(const ContextTable& table, const SubspaceBasis& basis, const MarginProgramOptions& opts) {
  const InequalitySystem sys = build_inequalities(table, basis);
  const MarginProgramResult res = solve_margin_program(sys.g, opts);
  Decoder w = res.status == SvmStatus::kOptimal ? sys.to_decoder(res.primal)
                                                 : Decoder::Zero(table.vocab_size, table.embed_dim);
  return to_solution(table, res, w, sys.rows);
}

SvmSolution solve_multiclass_svm(const ContextTable& table, const MarginProgramOptions& opts) {
  std::vector<Eigen::VectorXd> rows;
  std::vector<ConstraintIndex> index;
  for (int j = 0; j < table.num_contexts(); ++j) {
    const auto& c = table.contexts[j];
    for (Token z : c.support) {
      for (Token v : c.off_support(table.vocab_size)) {
        rows.push_back(pair_direction(z, v, c.embedding, table.vocab_size));
        index.emplace_back(j, v);
      }
    }
  }
  Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.vocab_size) * table.embed_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) g.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  const MarginProgramResult res = solve_margin_program(g, opts);
  Decoder w = res.status == SvmStatus::kOptimal ? unvec(res.primal, table.vocab_size, table.embed_dim)
                                                 : Decoder::Zero(table.vocab_size, table.embed_dim);
  return to_solution(table, res, w, index);
}

double raw_margin(const Decoder& w, const ContextTable& table) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : table.contexts) {
    if (c.support_size() == table.vocab_size) continue;
    const Eigen::VectorXd logits = w * c.embedding;
    double in_min = std::numeric_limits<double>::infinity();
    double out_max = -std::numeric_limits<double>::infinity();
    for (Token v = 0; v < table.vocab_size; ++v) {
      if (c.in_support(v)) {
        in_min = std::min(in_min, logits(v));
      } else {
        out_max = std::max(out_max, logits(v));
      }
    }
    best = std::min(best, in_min - out_max);
  }
  return best;
}

Margin margin_of(const Decoder& w, const ContextTable& table) {
  const double norm = w.norm();
  if (norm == 0.0) throw std::invalid_argument("margin_of: normalized margin undefined for W = 0");
  const double raw = raw_margin(w, table);
  return {raw, raw / norm};
}

}  // namespace ntpbias
