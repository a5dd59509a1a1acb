// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include "ntpbias/cli.hpp"
#include "ntpbias/corpus.hpp"
#include "ntpbias/feasibility.hpp"
#include "ntpbias/io.hpp"
#include "ntpbias/metrics.hpp"
#include "ntpbias/optim.hpp"
#include "ntpbias/regpath.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/svm.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace ntpbias;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kAppSeed = 7;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "ntpbias_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct PipelineRun {
  int code = -1;
  double seconds = 0.0;
  fs::path dir;
  std::string err;
};

PipelineRun run_app_pipeline(const std::string& sub) {
  PipelineRun r;
  r.dir = work_dir() / sub;
  std::ostringstream out, err;
  const auto t0 = std::chrono::steady_clock::now();
  r.code = cli::run({"pipeline", "--preset", "appA", "--seed", std::to_string(kAppSeed), "--out-dir", r.dir.string()},
                    out, err);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.err = err.str();
  return r;
}

const PipelineRun& first_run() {
  static const PipelineRun r = run_app_pipeline("first");
  return r;
}

ContextTable app_table() { return table_from_json(Json::parse(read_file((first_run().dir / "table.json").string()))); }

bool pipeline_ok(const PipelineRun& r) { return r.code == cli::kOk || r.code == cli::kInvariantFailed; }

Outcome appa_replication() {
  Outcome o;
  const PipelineRun& run = first_run();
  if (!pipeline_ok(run)) {
    o.require(false, "pipeline exit " + std::to_string(run.code) + " " + run.err);
    return o;
  }
  const ContextTable t = app_table();
  const Json meta = Json::parse(read_file((run.dir / "train.json").string()));
  const Decoder w = decoder_from_json(meta["final_W"]);
  const auto rows = trace_from_csv(read_file((run.dir / "trace.csv").string()));
  double norm100 = std::nan("");
  for (const auto& r : rows) {
    if (r.iter == 100) norm100 = r.norm;
  }
  o.require(rows.back().iter == 10000, "iterations " + std::to_string(rows.back().iter));

  const SubspaceBasis basis = build_basis(t);
  const CompatibilityResult ws = solve_wstar(t);
  const SvmSolution mm = solve_svm(t, basis);
  o.require(ws.compatible && mm.status == SvmStatus::kOptimal, "compatible and separable");

  const double gap = oracle::naive_ce(w, t) - oracle::naive_entropy(t);
  o.require(gap <= 0.05, "(a) gap " + fmt("%.4g", gap) + " <= 0.05");
  o.require(w.norm() >= 2.0 * norm100,
            "(b) |W| " + fmt("%.4g", w.norm()) + " >= 2 x |W_100| " + fmt("%.4g", norm100));
  const Decoder centered = w - ws.w_star;
  const double align = inner(centered, mm.w_mm) / (centered.norm() * mm.w_mm.norm());
  o.require(align >= 0.99, "(c) corrected alignment " + fmt("%.4f", align) + " >= 0.99");
  const double dist = (basis.project_f(w) - ws.w_star).norm();
  const double bound = 1e-2 * (1.0 + ws.w_star.norm());
  o.require(dist <= bound, "(d) subspace distance " + fmt("%.4g", dist) + " <= " + fmt("%.4g", bound));
  o.require(run.seconds <= 300.0, "runtime " + fmt("%.1f", run.seconds) + " s");
  return o;
}

Outcome entropy_bound() {
  Outcome o;
  std::mt19937_64 rng(2);
  double worst = INFINITY;
  int n = 0;
  for (int k = 0; k < 10; ++k) {
    const int vocab = 3 + k;
    const auto t = random_table(2 + 3 * k, 2 + k, vocab, 1 + k % (vocab - 1), 100 + k);
    const double h = entropy(t);
    for (int i = 0; i < 10; ++i) {
      const Decoder w = oracle::random_decoder(vocab, t.embed_dim, rng, std::pow(4.0, i % 5 - 1));
      worst = std::min(worst, ce(w, t) - h);
      ++n;
    }
  }
  o.require(n == 100 && worst >= -1e-10, std::to_string(n) + " decoders, min ce - entropy " + fmt("%.3g", worst));
  return o;
}

Outcome decay_rate() {
  Outcome o;
  const auto t = random_table(5, 8, 6, 3, 11);
  const auto basis = build_basis(t);
  const auto ws = solve_wstar(t);
  const auto mm = solve_svm(t, basis);
  o.require(ws.compatible && mm.status == SvmStatus::kOptimal, "compatible and separable");
  double max_h = 0.0;
  for (const auto& c : t.contexts) max_h = std::max(max_h, c.embedding.norm());
  const double constant = t.vocab_size * std::exp(ws.w_star.norm() * std::sqrt(2.0) * max_h);
  bool bounded = true;
  std::vector<double> xs, ys;
  for (int g = 1; g <= 20; ++g) {
    const double gap = ce_gap(ws.w_star + g * mm.w_mm, t);
    bounded = bounded && gap <= constant * std::exp(-g);
    if (g >= 10) {
      xs.push_back(g);
      ys.push_back(std::log(gap));
    }
  }
  o.require(bounded, "gap <= C e^-gamma for gamma 1..20");
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  o.require(std::isfinite(slope) && slope <= -0.9, "slope " + fmt("%.4f", slope) + " <= -0.9");
  return o;
}

Outcome gradient_check() {
  Outcome o;
  double worst = 0.0;
  for (int seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int vocab = 3 + seed % 6;
    const auto t = random_table(2 + seed % 9, 1 + seed % 7, vocab, 1 + seed % (vocab - 1), 900 + seed);
    const Decoder w = oracle::random_decoder(vocab, t.embed_dim, rng);
    const Decoder fd =
        oracle::central_difference([&](const Decoder& x) { return oracle::naive_ce(x, t); }, w, 1e-5);
    const Decoder g = grad_ce(w, t);
    worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff());
  }
  o.require(worst <= 1e-6, "max relative error " + fmt("%.3g", worst) + " over 20 pairs");
  return o;
}

Outcome wstar_check() {
  Outcome o;
  double res = 0.0, perp = 0.0, odds = 0.0;
  for (int seed = 1; seed <= 10; ++seed) {
    const auto t = random_table(3 + seed, 10 + 2 * seed, 8, 2 + seed % 5, 40 + seed);
    if (!overparam_check(t).satisfied) {
      o.require(false, "table not overparameterized");
      continue;
    }
    const auto r = solve_wstar(t);
    const auto basis = build_basis(t);
    // residual of the anchored equations rebuilt here from the table
    double rss = 0.0, bss = 0.0;
    for (const auto& c : t.contexts) {
      const Eigen::VectorXd logits = r.w_star * c.embedding;
      for (std::size_t i = 0; i < c.support.size(); ++i) {
        for (std::size_t k = 0; k < c.support.size(); ++k) {
          const double want = std::log(c.probs[i] / c.probs[k]);
          const double diff = logits(c.support[i]) - logits(c.support[k]) - want;
          odds = std::max(odds, std::abs(diff));
          if (i == 0 && k > 0) {
            rss += diff * diff;
            bss += want * want;
          }
        }
      }
    }
    res = std::max(res, std::sqrt(rss) / (1.0 + std::sqrt(bss)));
    perp = std::max(perp, basis.project_perp(r.w_star).norm() / std::max(r.w_star.norm(), 1e-300));
  }
  o.require(res <= 1e-8, "relative residual " + fmt("%.3g", res));
  o.require(perp <= 1e-8, "|P_perp W*| / |W*| " + fmt("%.3g", perp));
  o.require(odds <= 1e-6, "log-odds error " + fmt("%.3g", odds));
  return o;
}

/// Small random table with at most 10 margin rows.
ContextTable tiny_table(std::mt19937_64& rng) {
  for (;;) {
    const int vocab = 3 + static_cast<int>(rng() % 2);
    const int m = 1 + static_cast<int>(rng() % 2);
    const int d = 1 + static_cast<int>(rng() % 3);
    const int s = 1 + static_cast<int>(rng() % (vocab - 1));
    const auto t = random_table(m, d, vocab, s, rng());
    const auto rows = oracle::margin_rows(t).rows();
    if (rows >= 1 && rows <= 10) return t;
  }
}

double anchored_min(const Decoder& w, const ContextTable& t) {
  double best = INFINITY;
  for (const auto& c : t.contexts) {
    const Eigen::VectorXd logits = w * c.embedding;
    for (Token v : c.off_support(t.vocab_size)) best = std::min(best, logits(c.anchor()) - logits(v));
  }
  return best;
}

Outcome svm_check() {
  Outcome o;
  const auto a = solve_svm(fixture::single_pair(0.5, 0.5), build_basis(fixture::single_pair(0.5, 0.5)));
  o.require(a.status == SvmStatus::kOptimal && std::abs(a.norm - std::sqrt(2.0 / 3.0)) <= 1e-6,
            "(a) norm " + fmt("%.9f", a.norm) + " vs sqrt(2/3)");

  std::mt19937_64 rng(77);
  int compared = 0, tried = 0;
  double worst = 0.0;
  bool statuses = true;
  while (compared < 20 && tried < 500) {
    ++tried;
    const auto t = tiny_table(rng);
    const auto bf = oracle::brute_force_svm(oracle::equality_rows(t), oracle::margin_rows(t));
    const auto s = solve_svm(t, build_basis(t));
    if (!bf.feasible) {
      statuses = statuses && s.status == SvmStatus::kInfeasible;
      continue;
    }
    if (s.status != SvmStatus::kOptimal) {
      statuses = false;
      continue;
    }
    worst = std::max(worst, std::abs(s.norm - bf.norm) / bf.norm);
    ++compared;
  }
  o.require(compared == 20 && statuses && worst <= 1e-6,
            "(b) " + std::to_string(compared) + " instances, max relative norm error " + fmt("%.3g", worst));

  double kkt = 0.0, lo = INFINITY, hi = -INFINITY;
  for (int seed = 1; seed <= 10; ++seed) {
    const auto t = random_table(3 + seed % 5, 8 + seed % 4, 5 + seed % 3, 2 + seed % 2, 600 + seed);
    const auto s = solve_svm(t, build_basis(t));
    if (s.status != SvmStatus::kOptimal) {
      o.require(false, "random table not separable");
      continue;
    }
    kkt = std::max(kkt, s.kkt_residual);
    const double mn = anchored_min(s.w_mm, t);
    lo = std::min(lo, mn);
    hi = std::max(hi, mn);
  }
  o.require(kkt <= 1e-6, "(c) KKT residual " + fmt("%.3g", kkt));
  o.require(lo >= 1.0 - 1e-6 && hi <= 1.0 + 1e-3,
            "(d) min anchored constraint in [" + fmt("%.9f", lo) + ", " + fmt("%.9f", hi) + "]");
  return o;
}

Outcome descent_margin() {
  Outcome o;
  const auto t = random_table(6, 10, 7, 3, 17);
  const auto mm = solve_svm(t, build_basis(t));
  o.require(mm.status == SvmStatus::kOptimal && solve_wstar(t).compatible, "separable and compatible");
  std::mt19937_64 rng(6);
  int positive = 0;
  double smallest = INFINITY;
  for (int i = 0; i < 50; ++i) {
    const Decoder w = oracle::random_decoder(7, 10, rng, 0.2 * (1 + i));
    const double ip = inner(-grad_ce(w, t), mm.w_mm);
    smallest = std::min(smallest, ip);
    if (ip > 0.0) ++positive;
  }
  o.require(positive == 50, std::to_string(positive) + "/50 positive, smallest " + fmt("%.3g", smallest));
  return o;
}

Outcome regularization_path() {
  Outcome o;
  if (!pipeline_ok(first_run())) {
    o.require(false, "pipeline failed");
    return o;
  }
  const ContextTable t = app_table();
  o.require(overparam_check(t).satisfied, "overparameterized");
  const auto basis = build_basis(t);
  const auto ws = solve_wstar(t);
  const auto mm = solve_svm(t, basis);
  const std::vector<double> grid{2, 4, 8, 16, 32, 64, 128, 256};
  const auto pts = regpath(t, grid, {}, References{ws.w_star, mm.w_mm, &basis});
  double norm_err = 0.0;
  bool monotone = true;
  double prev = -INFINITY;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    norm_err = std::max(norm_err, std::abs(pts[i].w.norm() - grid[i]) / grid[i]);
    const double a = alignment(pts[i].w, mm.w_mm);
    monotone = monotone && a >= prev - 1e-4;
    prev = a;
  }
  o.require(norm_err <= 1e-6, "max relative norm error " + fmt("%.3g", norm_err));
  o.require(monotone, "alignment non-decreasing");
  o.require(prev >= 0.99, "alignment at 256 " + fmt("%.5f", prev));
  const double dist = (basis.project_f(pts.back().w) - ws.w_star).norm();
  o.require(dist <= 1e-2, "subspace distance at 256 " + fmt("%.3g", dist));
  return o;
}

Outcome overparameterization() {
  Outcome o;
  int good = 0;
  for (int seed = 1; seed <= 20; ++seed) {
    const int m = 2 + seed % 8;
    const auto t = random_table(m, m + 1 + seed % 5, 6 + seed % 3, 2 + seed % 3, 700 + seed);
    const auto over = overparam_check(t);
    const bool ok = over.satisfied && solve_wstar(t).compatible &&
                    check_separability(t, build_basis(t)).separable;
    if (ok) ++good;
  }
  o.require(good == 20, std::to_string(good) + "/20 Gaussian tables compatible and separable");

  int refuted = 0;
  for (int seed = 1; seed <= 5; ++seed) {
    auto t = random_table(4, 8, 6, 3, 800 + seed);
    // context 1 reuses context 0's embedding while keeping a different next-token law
    t.contexts[1].embedding = t.contexts[0].embedding;
    if (t.contexts[1].support == t.contexts[0].support) t.contexts[1].support.back() = (t.contexts[1].support.back() + 1) % 6;
    std::sort(t.contexts[1].support.begin(), t.contexts[1].support.end());
    const auto over = overparam_check(t);
    const bool predicate = solve_wstar(t).compatible && check_separability(t, build_basis(t)).separable;
    if (!over.satisfied && over.rank_h < t.num_contexts() && !predicate) ++refuted;
  }
  o.require(refuted == 5, std::to_string(refuted) + "/5 rank-deficient tables report the predicate false");
  return o;
}

Outcome one_hot() {
  Outcome o;
  const auto t = random_table(4, 6, 5, 1, 3);
  const auto basis = build_basis(t);
  const auto a = solve_svm(t, basis);
  const auto b = solve_multiclass_svm(t);
  o.require(t.one_hot() && basis.dim() == 0, "dim_f " + std::to_string(basis.dim()));
  const bool same = a.status == SvmStatus::kOptimal && b.status == SvmStatus::kOptimal &&
                    (a.w_mm - b.w_mm).norm() <= 1e-6 * (1.0 + a.norm);
  o.require(same, "NTP-SVM equals multiclass SVM");
  const auto pair = fixture::one_hot_pair();
  const auto p = solve_svm(pair, build_basis(pair));
  o.require(p.status == SvmStatus::kOptimal && std::abs(p.norm - 1.0) <= 1e-6,
            "hand instance norm " + fmt("%.9f", p.norm));
  return o;
}

Outcome determinism() {
  Outcome o;
  if (!pipeline_ok(first_run())) {
    o.require(false, "pipeline failed");
    return o;
  }
  ::setenv("NTP_BIAS_THREADS", "3", 1);
  const PipelineRun second = run_app_pipeline("second");
  ::unsetenv("NTP_BIAS_THREADS");
  o.require(pipeline_ok(second), "second run exit " + std::to_string(second.code));
  if (!pipeline_ok(second)) return o;
  const std::string a = read_file((first_run().dir / "trace.csv").string());
  const std::string b = read_file((second.dir / "trace.csv").string());
  o.require(!a.empty() && a == b, "trace.csv identical (" + std::to_string(a.size()) + " bytes)");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"appA replication", appa_replication},
      {"entropy lower bound", entropy_bound},
      {"decay along the max-margin ray", decay_rate},
      {"gradient vs finite differences", gradient_check},
      {"W* correctness", wstar_check},
      {"SVM correctness", svm_check},
      {"descent-margin property", descent_margin},
      {"regularization path", regularization_path},
      {"overparameterization implies feasibility", overparameterization},
      {"one-hot reduction", one_hot},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  fs::remove_all(work_dir());
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
