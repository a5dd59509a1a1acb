#include "ntpbias/regpath.hpp"

#include "ntpbias/metrics.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/svm.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ntpbias {

std::string to_string(RegPathMethod method) {
  return method == RegPathMethod::kRidgeNewton ? "ridge-newton" : "projected-gradient";
}

RegPathMethod regpath_method_from_string(const std::string& s) {
  if (s == "ridge-newton") return RegPathMethod::kRidgeNewton;
  if (s == "projected-gradient") return RegPathMethod::kProjectedGradient;
  throw std::invalid_argument("unknown regpath method '" + s + "' (expected ridge-newton or projected-gradient)");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLogMuFloor = -5000.0;

double in_support_lse(const Eigen::VectorXd& logits, const DistinctContext& c) {
  double mx = -kInf;
  for (Token z : c.support) mx = std::max(mx, logits(z));
  double s = 0.0;
  for (Token z : c.support) s += std::exp(logits(z) - mx);
  return mx + std::log(s);
}

// Minimizer of CE(W) + mu/2 ||W||^2 in coordinates x = (f, c) with W = Q_F f + Q_perp c.
//
// CE - entropy splits into a KL term that only sees in-support logit differences (a function of f)
// plus phi = sum_j pi_j log1p(sum_{v notin S_j} exp(u_jv)), u_jv = l_v - LSE_S(l). While phi is
// sizable a joint damped Newton method converges fast. Far along the path every u_jv is very
// negative, phi and its derivatives fall below the rounding noise of the KL term, and the blocks
// decouple; there the solver alternates Newton on f with Newton on c, where the c-block works
// with phi and mu rescaled by exp(-u_ref).
class RidgeSolver {
 public:
  RidgeSolver(const ContextTable& table, const SubspaceBasis& basis) : table_(table) {
    const int vocab = table.vocab_size;
    const int d = table.embed_dim;
    const InequalitySystem ineq = build_inequalities(table, basis);
    kf_ = basis.dim();
    kp_ = ineq.coords_basis.cols();
    Eigen::MatrixXd q(basis.vectors().rows(), kf_ + kp_);
    q << basis.vectors(), ineq.coords_basis;
    q_ = q;
    const int m = table.num_contexts();
    x_all_.resize(static_cast<Eigen::Index>(m) * vocab, kf_ + kp_);
    for (int j = 0; j < m; ++j) {
      const auto& h = table.contexts[j].embedding;
      for (int v = 0; v < vocab; ++v) {
        x_all_.row(static_cast<Eigen::Index>(j) * vocab + v) = h.transpose() * q.middleRows(static_cast<Eigen::Index>(v) * d, d);
      }
    }
    p_dense_ = table.dense_probs();
    off_.resize(m);
    grow_.resize(m);
    for (int j = 0; j < m; ++j) {
      const auto& c = table.contexts[j];
      off_[j] = c.off_support(vocab);
      grow_[j].resize(off_[j].size(), kp_);
      for (std::size_t i = 0; i < off_[j].size(); ++i) {
        // d u_jv / d c = -(row of the anchored constraint)
        grow_[j].row(i) = block(j).row(c.anchor()).tail(kp_) - block(j).row(off_[j][i]).tail(kp_);
      }
    }
    x_ = Eigen::VectorXd::Zero(kf_ + kp_);
  }

  Decoder decoder() const {
    return unvec(q_ * x_, table_.vocab_size, table_.embed_dim);
  }
  double norm() const { return x_.norm(); }
  long newton_steps() const { return newton_steps_; }

  // Returns true when the iterate settled.
  bool solve(double log_mu) {
    const double mu = std::exp(log_mu);
    if (joint_newton(mu)) return true;
    for (int sweep = 0; sweep < 200; ++sweep) {
      const double df = f_block(mu);
      const double dc = c_block(log_mu);
      if (sweep > 0 && df <= 1e-12 * (1.0 + x_.norm()) && dc <= 1e-12 * (1.0 + x_.norm())) return true;
    }
    return false;
  }

 private:
  Eigen::Block<const Eigen::MatrixXd> block(int j) const {
    return x_all_.middleRows(static_cast<Eigen::Index>(j) * table_.vocab_size, table_.vocab_size);
  }

  // CE - entropy + mu/2 ||x||^2 without cancellation; also reports the largest off-support ratio.
  double merit(const Eigen::VectorXd& x, double mu, double* s_max = nullptr) const {
    const Eigen::VectorXd logits = x_all_ * x;
    double gap = 0.0;
    double smax = 0.0;
    const int vocab = table_.vocab_size;
    for (int j = 0; j < table_.num_contexts(); ++j) {
      const auto& c = table_.contexts[j];
      const Eigen::VectorXd l = logits.segment(static_cast<Eigen::Index>(j) * vocab, vocab);
      const double lse = in_support_lse(l, c);
      double kl = 0.0;
      for (std::size_t i = 0; i < c.support.size(); ++i) kl += c.probs[i] * (std::log(c.probs[i]) - (l(c.support[i]) - lse));
      double off = 0.0;
      for (Token v : off_[j]) off += std::exp(l(v) - lse);
      smax = std::max(smax, off);
      gap += c.prior * (std::max(kl, 0.0) + std::log1p(off));
    }
    if (s_max != nullptr) *s_max = smax;
    return gap + 0.5 * mu * x.squaredNorm();
  }

  // Gradient and Hessian of CE + mu/2 ||x||^2 restricted to the leading `k` coordinates.
  void ce_derivatives(Eigen::Index k, double mu, Eigen::VectorXd& g, Eigen::MatrixXd& h) const {
    const int vocab = table_.vocab_size;
    const int m = table_.num_contexts();
    const Eigen::VectorXd logits = x_all_ * x_;
    Eigen::MatrixXd weighted(static_cast<Eigen::Index>(m) * vocab, k);
    Eigen::MatrixXd means(k, m);
    g = mu * x_.head(k);
    for (int j = 0; j < m; ++j) {
      const double pi = table_.contexts[j].prior;
      const Eigen::VectorXd q = softmax(logits.segment(static_cast<Eigen::Index>(j) * vocab, vocab));
      const auto xj = block(j).leftCols(k);
      g.noalias() += pi * xj.transpose() * (q - p_dense_.row(j).transpose());
      weighted.middleRows(static_cast<Eigen::Index>(j) * vocab, vocab) = (pi * q).cwiseSqrt().asDiagonal() * xj;
      means.col(j) = std::sqrt(pi) * (xj.transpose() * q);
    }
    h.noalias() = weighted.transpose() * weighted;
    h.noalias() -= means * means.transpose();
    h.diagonal().array() += mu;
  }

  // Damped Newton on all coordinates. Returns true on convergence; false once the off-support
  // terms are too small for it to resolve, or when the line search stalls.
  bool joint_newton(double mu) {
    const Eigen::Index k = kf_ + kp_;
    if (k == 0) return true;
    for (int it = 0; it < 100; ++it) {
      double smax = 0.0;
      const double obj = merit(x_, mu, &smax);
      if (kp_ > 0 && smax < 1e-6) return false;
      Eigen::VectorXd g;
      Eigen::MatrixXd h;
      ce_derivatives(k, mu, g, h);
      const Eigen::VectorXd step = h.ldlt().solve(g);
      ++newton_steps_;
      const double step_norm = step.norm();
      if (!std::isfinite(step_norm)) return false;
      if (step_norm <= 1e-10 * (1.0 + x_.norm())) {
        // Near the noise floor of the unscaled gradient; the block phase finishes the job.
        x_ -= step;
        return kp_ == 0;
      }
      const double dec = g.dot(step);
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        const Eigen::VectorXd trial = x_ - t * step;
        if (merit(trial, mu) <= obj - 1e-4 * t * dec) {
          x_ = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted) return false;
    }
    return false;
  }

  // Damped Newton on f with c fixed. Returns the total distance moved.
  double f_block(double mu) {
    if (kf_ == 0) return 0.0;
    double moved = 0.0;
    for (int it = 0; it < 50; ++it) {
      Eigen::VectorXd g;
      Eigen::MatrixXd h;
      ce_derivatives(kf_, mu, g, h);
      Eigen::VectorXd step = Eigen::VectorXd::Zero(x_.size());
      step.head(kf_) = h.ldlt().solve(g);
      ++newton_steps_;
      const double step_norm = step.norm();
      if (!std::isfinite(step_norm)) break;
      if (step_norm <= 1e-13 * (1.0 + x_.norm())) {
        x_ -= step;
        moved += step_norm;
        break;
      }
      const double dec = g.dot(step.head(kf_));
      const double obj = merit(x_, mu);
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        const Eigen::VectorXd trial = x_ - t * step;
        if (merit(trial, mu) <= obj - 1e-4 * t * dec) {
          x_ = trial;
          moved += t * step_norm;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    return moved;
  }

  struct PhiTerms {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
  };

  // exp(-u_ref) * (phi + mu/2 ||c||^2) at x with the c-part replaced, and optionally its gradient
  // and Hessian in c.
  PhiTerms phi_terms(const Eigen::VectorXd& c, double u_ref, double log_mu, bool derivs) const {
    PhiTerms out;
    if (derivs) {
      out.grad = Eigen::VectorXd::Zero(kp_);
      out.hess = Eigen::MatrixXd::Zero(kp_, kp_);
    }
    Eigen::VectorXd x = x_;
    x.tail(kp_) = c;
    const Eigen::VectorXd logits = x_all_ * x;
    const int vocab = table_.vocab_size;
    for (int j = 0; j < table_.num_contexts(); ++j) {
      if (off_[j].empty()) continue;
      const auto& ctx = table_.contexts[j];
      const Eigen::VectorXd l = logits.segment(static_cast<Eigen::Index>(j) * vocab, vocab);
      const double lse = in_support_lse(l, ctx);
      Eigen::VectorXd e(off_[j].size());
      for (std::size_t i = 0; i < off_[j].size(); ++i) e(i) = std::exp(l(off_[j][i]) - lse - u_ref);
      const double s_scaled = e.sum();
      if (!std::isfinite(s_scaled)) {
        out.value = kInf;
        return out;
      }
      if (s_scaled == 0.0) continue;
      const double log_s = u_ref + std::log(s_scaled);
      double scaled_log1p;
      double inv_1ps;     // 1 / (1 + s)
      double curv_ratio;  // s / (1 + s)^2
      if (log_s < -20.0) {
        const double s = std::exp(log_s);
        scaled_log1p = s_scaled * (1.0 - 0.5 * s);
        inv_1ps = 1.0 / (1.0 + s);
        curv_ratio = s * inv_1ps * inv_1ps;
      } else if (log_s > 20.0) {
        const double r = std::exp(-log_s);
        scaled_log1p = (log_s + std::log1p(r)) * std::exp(-u_ref);
        inv_1ps = r / (1.0 + r);
        curv_ratio = r / ((1.0 + r) * (1.0 + r));
      } else {
        const double s = std::exp(log_s);
        scaled_log1p = std::log1p(s) * std::exp(-u_ref);
        inv_1ps = 1.0 / (1.0 + s);
        curv_ratio = s * inv_1ps * inv_1ps;
      }
      out.value += ctx.prior * scaled_log1p;
      if (!derivs) continue;
      const Eigen::MatrixXd& gj = grow_[j];
      const Eigen::VectorXd wsum = gj.transpose() * e;
      out.grad -= (ctx.prior * inv_1ps) * wsum;
      out.hess.noalias() += (ctx.prior * inv_1ps) * (gj.transpose() * e.asDiagonal() * gj);
      out.hess.noalias() -= (ctx.prior * curv_ratio / s_scaled) * (wsum * wsum.transpose());
    }
    const double mu_scaled = std::exp(log_mu - u_ref);
    out.value += 0.5 * mu_scaled * c.squaredNorm();
    if (derivs) {
      out.grad += mu_scaled * c;
      out.hess.diagonal().array() += mu_scaled;
    }
    return out;
  }

  double max_u() const {
    const Eigen::VectorXd logits = x_all_ * x_;
    const int vocab = table_.vocab_size;
    double mx = -kInf;
    for (int j = 0; j < table_.num_contexts(); ++j) {
      if (off_[j].empty()) continue;
      const Eigen::VectorXd l = logits.segment(static_cast<Eigen::Index>(j) * vocab, vocab);
      const double lse = in_support_lse(l, table_.contexts[j]);
      for (Token v : off_[j]) mx = std::max(mx, l(v) - lse);
    }
    return mx;
  }

  // Damped Newton on c with f fixed. Returns the total distance moved.
  double c_block(double log_mu) {
    if (kp_ == 0) return 0.0;
    double moved = 0.0;
    for (int it = 0; it < 200; ++it) {
      const double u_ref = max_u();
      if (!std::isfinite(u_ref)) break;
      const Eigen::VectorXd c = x_.tail(kp_);
      const PhiTerms cur = phi_terms(c, u_ref, log_mu, true);
      const double scale = std::max(cur.hess.diagonal().maxCoeff(), std::numeric_limits<double>::min());
      const Eigen::MatrixXd h = 0.5 * (cur.hess + cur.hess.transpose()) / scale;
      const Eigen::VectorXd step = h.ldlt().solve(cur.grad / scale);
      ++newton_steps_;
      const double step_norm = step.norm();
      if (!std::isfinite(step_norm)) break;
      const double dec = cur.grad.dot(step);
      if (step_norm <= 1e-13 * (1.0 + x_.norm()) || dec <= 1e-15 * cur.value) {
        x_.tail(kp_) -= step;
        moved += step_norm;
        break;
      }
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        const Eigen::VectorXd trial = c - t * step;
        if (phi_terms(trial, u_ref, log_mu, false).value <= cur.value - 1e-4 * t * dec) {
          x_.tail(kp_) = trial;
          moved += t * step_norm;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    return moved;
  }

  const ContextTable& table_;
  Eigen::Index kf_ = 0;
  Eigen::Index kp_ = 0;
  Eigen::MatrixXd q_;      // (V*d) x (kf + kp)
  Eigen::MatrixXd x_all_;  // (m*V) x (kf + kp): logits = x_all_ * x
  Eigen::MatrixXd p_dense_;
  std::vector<std::vector<Token>> off_;
  std::vector<Eigen::MatrixXd> grow_;
  Eigen::VectorXd x_;
  long newton_steps_ = 0;
};

void fill_metrics(RegPathPoint& pt, const ContextTable& table, const References& refs, const SubspaceBasis& basis) {
  pt.norm = pt.w.norm();
  pt.ce = ce(pt.w, table);
  pt.ce_gap = ce_gap(pt.w, table);
  pt.alignment = kNaN;
  pt.subspace_dist = kNaN;
  if (refs.w_mm && refs.w_mm->norm() > 0.0 && pt.norm > 0.0) pt.alignment = alignment(pt.w, *refs.w_mm);
  if (refs.w_star) pt.subspace_dist = subspace_distance(pt.w, *refs.w_star, basis);
}

std::vector<RegPathPoint> ridge_path(const ContextTable& table, const std::vector<double>& grid,
                                     const RegPathOptions& opts, const References& refs,
                                     const SubspaceBasis& basis) {
  std::vector<RegPathPoint> out;
  RidgeSolver solver(table, basis);
  const double g0 = grad_ce(Decoder::Zero(table.vocab_size, table.embed_dim), table).norm();
  double prev_log_mu = kInf;
  for (double bound : grid) {
    RegPathPoint pt;
    pt.bound = bound;
    if (g0 == 0.0) {
      // W = 0 already minimizes CE
      pt.w = Decoder::Zero(table.vocab_size, table.embed_dim);
      pt.converged = true;
      pt.interior = true;
      pt.log_multiplier = -kInf;
      fill_metrics(pt, table, refs, basis);
      out.push_back(pt);
      continue;
    }
    const long steps_before = solver.newton_steps();
    long evals = 0;
    bool inner_ok = true;
    auto eval = [&](double log_mu) {
      ++evals;
      inner_ok = solver.solve(log_mu);
      return std::log(solver.norm()) - std::log(bound);
    };
    // ||W(mu)|| <= ||grad CE(0)|| / mu, so this multiplier keeps the solution inside the ball.
    double hi = std::min(prev_log_mu, std::log(g0 / bound));
    double f_hi = eval(hi);
    double lo = hi;
    double f_lo = f_hi;
    double width = 4.0;
    bool interior = false;
    while (f_lo < 0.0 && evals < opts.budget) {
      hi = lo;
      f_hi = f_lo;
      if (lo <= kLogMuFloor) {
        interior = true;
        break;
      }
      lo = std::max(lo - width, kLogMuFloor);
      width *= 2.0;
      f_lo = eval(lo);
    }
    double log_mu = lo;
    double f_cur = f_lo;
    if (!interior && f_lo >= 0.0) {
      // Illinois variant of regula falsi on log ||W|| - log B, decreasing in log mu.
      int side = 0;
      while (std::abs(std::expm1(f_cur)) > opts.norm_tol && evals < opts.budget) {
        double x = (f_hi == f_lo) ? 0.5 * (lo + hi) : hi - f_hi * (hi - lo) / (f_hi - f_lo);
        if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
        if (hi - lo <= 1e-13 * std::max(1.0, std::abs(x))) break;
        const double fx = eval(x);
        log_mu = x;
        f_cur = fx;
        if (fx > 0.0) {
          lo = x;
          f_lo = fx;
          if (side == -1) f_hi *= 0.5;
          side = -1;
        } else {
          hi = x;
          f_hi = fx;
          if (side == 1) f_lo *= 0.5;
          side = 1;
        }
      }
      // The solver's state belongs to the last evaluation.
    } else if (interior) {
      log_mu = kLogMuFloor;
      f_cur = eval(log_mu);
    }
    pt.w = solver.decoder();
    pt.interior = interior;
    pt.log_multiplier = interior ? -kInf : log_mu;
    pt.iterations = solver.newton_steps() - steps_before;
    pt.converged = inner_ok && (interior || std::abs(std::expm1(f_cur)) <= std::max(opts.norm_tol, 1e-9));
    fill_metrics(pt, table, refs, basis);
    out.push_back(pt);
    if (!interior) prev_log_mu = log_mu;
  }
  return out;
}

std::vector<RegPathPoint> projected_path(const ContextTable& table, const std::vector<double>& grid,
                                         const RegPathOptions& opts, const References& refs,
                                         const SubspaceBasis& basis) {
  std::vector<RegPathPoint> out;
  const double lip = smoothness_estimate(table);
  const double eta = lip > 0.0 ? 1.0 / lip : 1.0;
  Decoder w = Decoder::Zero(table.vocab_size, table.embed_dim);
  for (double bound : grid) {
    RegPathPoint pt;
    pt.bound = bound;
    const double n0 = w.norm();
    if (n0 > 0.0) w *= bound / n0;
    long it = 0;
    bool converged = false;
    Decoder g;
    for (; it < opts.budget; ++it) {
      g = grad_ce(w, table);
      Decoder next = w - eta * g;
      const double nn = next.norm();
      if (nn > bound) next *= bound / nn;
      const double mapping = (w - next).norm() / eta;
      w = std::move(next);
      if (mapping <= opts.tol * (1.0 + ce(w, table))) {
        converged = true;
        ++it;
        break;
      }
    }
    pt.w = w;
    pt.iterations = it;
    pt.converged = converged;
    g = grad_ce(w, table);
    const double wn = w.norm();
    const double mu = wn > 0.0 ? -inner(g, w) / (wn * wn) : 0.0;
    pt.interior = wn < bound * (1.0 - 1e-12);
    pt.log_multiplier = mu > 0.0 ? std::log(mu) : -kInf;
    fill_metrics(pt, table, refs, basis);
    out.push_back(pt);
  }
  return out;
}

}  // namespace

std::vector<RegPathPoint> regpath(const ContextTable& table, const std::vector<double>& grid,
                                  const RegPathOptions& opts, const References& refs) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0) || !std::isfinite(grid[i])) throw std::invalid_argument("radii must be positive and finite");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("radii must be strictly increasing");
  }
  if (opts.budget < 1) throw std::invalid_argument("budget must be positive");
  SubspaceBasis local;
  const SubspaceBasis* basis = refs.basis;
  if (basis == nullptr) {
    local = build_basis(table);
    basis = &local;
  }
  if (opts.method == RegPathMethod::kRidgeNewton) return ridge_path(table, grid, opts, refs, *basis);
  return projected_path(table, grid, opts, refs, *basis);
}

}  // namespace ntpbias
