#include "ntpbias/report.hpp"

#include "ntpbias/feasibility.hpp"
#include "ntpbias/metrics.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/svm.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace ntpbias {

namespace {

std::string fmt(double x) { return format_double(x); }

void add(Report& r, const std::string& name, bool ok, const std::string& detail) {
  r.checks.push_back({name, ok ? "pass" : "fail", detail});
}

void skip(Report& r, const std::string& name, const std::string& why) { r.checks.push_back({name, "skip", why}); }

Decoder random_decoder(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(std::log(0.1), std::log(10.0));
  Decoder w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  return w * std::exp(log_scale(rng));
}

// Row of the trace at or just after the given fraction of the final iteration.
const TraceRow& row_at_fraction(const std::vector<TraceRow>& rows, double fraction) {
  const double target = fraction * static_cast<double>(rows.back().iter);
  for (const auto& r : rows) {
    if (static_cast<double>(r.iter) >= target) return r;
  }
  return rows.back();
}

}  // namespace

bool Report::passed() const {
  for (const auto& c : checks) {
    if (c.verdict == "fail") return false;
  }
  return true;
}

Json Report::to_json() const {
  Json checks_json = Json::array();
  for (const auto& c : checks) checks_json.push_back({{"name", c.name}, {"verdict", c.verdict}, {"detail", c.detail}});
  Json j = Json::object();
  j["passed"] = passed();
  j["summary"] = summary;
  j["checks"] = checks_json;
  return j;
}

Report build_report(const ReportInputs& in) {
  if (in.table == nullptr) throw std::invalid_argument("report needs a table");
  const ContextTable& table = *in.table;
  Report rep;
  std::mt19937_64 rng(in.seed);

  try {
    table.validate();
    add(rep, "table_invariants", true, "priors and next-token laws on the simplex within 1e-12");
  } catch (const std::invalid_argument& e) {
    add(rep, "table_invariants", false, e.what());
  }

  const double h = entropy(table);
  const SubspaceBasis basis = build_basis(table);
  const CompatibilityResult comp = solve_wstar(table);
  const SvmSolution svm = solve_svm(table, basis);
  const OverparamCheck over = overparam_check(table);
  const bool separable = svm.status == SvmStatus::kOptimal;
  const bool both = separable && comp.compatible;

  {
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 2 * in.samples; ++i) {
      const Decoder w = random_decoder(table.vocab_size, table.embed_dim, rng);
      worst = std::min(worst, ce(w, table) - h);
    }
    add(rep, "entropy_bound", worst >= -1e-10, "min ce - entropy over random decoders = " + fmt(worst));
  }

  if (comp.compatible) {
    const double wn = comp.w_star.norm();
    const double perp = basis.project_perp(comp.w_star).norm();
    add(rep, "wstar_in_subspace", perp <= 1e-8 * (1.0 + wn), "||P_perp W*|| = " + fmt(perp));
    double worst = 0.0;
    for (const auto& c : table.contexts) {
      const Eigen::VectorXd logits = comp.w_star * c.embedding;
      for (std::size_t a = 0; a < c.support.size(); ++a) {
        for (std::size_t b = a + 1; b < c.support.size(); ++b) {
          const double want = std::log(c.probs[a] / c.probs[b]);
          const double got = logits(c.support[a]) - logits(c.support[b]);
          worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
        }
      }
    }
    add(rep, "wstar_log_odds", worst <= 1e-6, "max relative log-odds error = " + fmt(worst));
    const double sub_gap = ce_subspace(comp.w_star, table) - h;
    add(rep, "wstar_attains_entropy_in_subspace", std::abs(sub_gap) <= 1e-10, "ce_F(W*) - entropy = " + fmt(sub_gap));
  } else {
    skip(rep, "wstar_in_subspace", "table is not entropy-compatible (residual " + fmt(comp.residual) + ")");
  }

  if (separable) {
    const Margin mg = margin_of(svm.w_mm, table);
    add(rep, "svm_feasible", mg.raw_min >= 1.0 - 1e-6 && mg.raw_min <= 1.0 + 1e-3,
        "min constraint value = " + fmt(mg.raw_min));
    add(rep, "svm_kkt", svm.kkt_residual <= 1e-6, "kkt residual = " + fmt(svm.kkt_residual));
    const double perp_f = basis.project_f(svm.w_mm).norm();
    add(rep, "svm_in_complement", perp_f <= 1e-8 * (1.0 + svm.norm), "||P_F W^mm|| = " + fmt(perp_f));
  } else if (svm.status == SvmStatus::kInfeasible) {
    const InequalitySystem sys = build_inequalities(table, basis);
    const Eigen::VectorXd& mu = *svm.certificate;
    const double resid = (sys.g.transpose() * mu).norm();
    const bool ok = mu.minCoeff() >= 0.0 && std::abs(mu.sum() - 1.0) <= 1e-9 && resid <= 1e-8;
    add(rep, "svm_infeasibility_certificate", ok, "||G^T mu|| = " + fmt(resid));
  } else {
    add(rep, "svm_decided", false, "margin program neither solved nor certified infeasible");
  }

  if (over.satisfied) {
    add(rep, "overparameterization_implies_feasibility", comp.compatible && separable,
        "d > m with full-rank embeddings");
  } else {
    skip(rep, "overparameterization_implies_feasibility", "d <= m or rank-deficient embeddings");
  }

  if (both) {
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < in.samples; ++i) {
      const Decoder w = random_decoder(table.vocab_size, table.embed_dim, rng);
      worst = std::min(worst, -inner(grad_ce(w, table), svm.w_mm));
    }
    add(rep, "descent_margin", worst > 0.0, "min <-grad CE(W), W^mm> = " + fmt(worst));

    const double c0 = decay_constant(comp.w_star, table);
    std::ostringstream csv;
    csv << "gamma,ce_gap,bound\n";
    bool pointwise = true;
    std::vector<double> xs;
    std::vector<double> ys;
    for (int g = 1; g <= 20; ++g) {
      const double gap = ce_gap(comp.w_star + g * svm.w_mm, table);
      const double bound = c0 * std::exp(-static_cast<double>(g));
      pointwise = pointwise && gap <= bound;
      csv << g << ',' << fmt(gap) << ',' << fmt(bound) << '\n';
      if (g >= 10 && gap > 0.0) {
        xs.push_back(g);
        ys.push_back(std::log(gap));
      }
    }
    rep.decay_csv = csv.str();
    add(rep, "decay_bound", pointwise, "CE - entropy <= C exp(-gamma) for gamma = 1..20, C = " + fmt(c0));
    if (xs.size() >= 2) {
      const double n = static_cast<double>(xs.size());
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i] / n;
        my += ys[i] / n;
      }
      double sxy = 0.0, sxx = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
      }
      const double slope = sxy / sxx;
      add(rep, "decay_slope", slope <= -0.9, "slope of log(CE - entropy) over gamma in [10, 20] = " + fmt(slope));
    } else {
      add(rep, "decay_slope", false, "CE - entropy vanished before gamma = 10");
    }
  } else {
    skip(rep, "descent_margin", "needs a separable and compatible table");
  }

  Json summary = Json::object();
  summary["entropy"] = number(h);
  summary["m"] = table.num_contexts();
  summary["d"] = table.embed_dim;
  summary["V"] = table.vocab_size;
  summary["dim_f"] = basis.dim();
  summary["compatible"] = comp.compatible;
  summary["separable"] = separable;
  summary["wstar_norm"] = number(comp.w_star.norm());
  summary["wmm_norm"] = number(separable ? svm.norm : std::numeric_limits<double>::quiet_NaN());

  if (in.trace && !in.trace->empty()) {
    const auto& rows = *in.trace;
    bool increasing = true;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0 && rows[i].iter <= rows[i - 1].iter) increasing = false;
      worst = std::min(worst, rows[i].ce - h);
    }
    add(rep, "trace_iterations_increasing", increasing, std::to_string(rows.size()) + " rows");
    add(rep, "trace_entropy_bound", worst >= -1e-10, "min ce - entropy over the trace = " + fmt(worst));
    const TraceRow& last = rows.back();
    summary["final_iter"] = last.iter;
    summary["final_ce_gap"] = number(last.ce_gap);
    summary["final_norm"] = number(last.norm);
    summary["final_align_raw"] = number(last.align_raw);
    summary["final_align_corrected"] = number(last.align_corrected);
    summary["final_subspace_dist"] = number(last.subspace_dist);
    if (both && rows.size() >= 2) {
      const TraceRow& early = row_at_fraction(rows, 0.01);
      add(rep, "trace_norm_growth", last.norm > early.norm,
          "||W|| " + fmt(early.norm) + " at iteration " + std::to_string(early.iter) + " -> " + fmt(last.norm));
      add(rep, "trace_gap_decay", last.ce_gap * 10.0 <= early.ce_gap,
          "CE - entropy " + fmt(early.ce_gap) + " -> " + fmt(last.ce_gap));
      add(rep, "trace_final_alignment", last.align_corrected >= in.align_threshold,
          "corrected alignment " + fmt(last.align_corrected) + " vs threshold " + fmt(in.align_threshold));
    } else {
      skip(rep, "trace_final_alignment", "needs a separable and compatible table and at least two rows");
    }
  } else {
    skip(rep, "trace", "no trace given");
  }

  if (in.regpath && !in.regpath->empty()) {
    const auto& pts = *in.regpath;
    double worst_norm = 0.0;
    bool monotone = true;
    bool converged = true;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      converged = converged && pts[i].converged;
      if (!pts[i].interior) worst_norm = std::max(worst_norm, std::abs(pts[i].norm - pts[i].bound) / pts[i].bound);
      if (i > 0 && pts[i].alignment < pts[i - 1].alignment - 1e-4) monotone = false;
    }
    add(rep, "regpath_converged", converged, std::to_string(pts.size()) + " radii");
    add(rep, "regpath_on_boundary", worst_norm <= 1e-6, "max | ||W_B|| - B | / B = " + fmt(worst_norm));
    if (separable) {
      add(rep, "regpath_alignment_monotone", monotone, "final alignment " + fmt(pts.back().alignment));
    }
    summary["regpath_final_alignment"] = number(pts.back().alignment);
    summary["regpath_final_subspace_dist"] = number(pts.back().subspace_dist);
  } else {
    skip(rep, "regpath", "no regularization path given");
  }

  rep.summary = summary;
  return rep;
}

}  // namespace ntpbias
