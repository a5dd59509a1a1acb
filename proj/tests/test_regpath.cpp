#include "ntpbias/feasibility.hpp"
#include "ntpbias/metrics.hpp"
#include "ntpbias/optim.hpp"
#include "ntpbias/regpath.hpp"
#include "ntpbias/svm.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ntpbias;

namespace {

struct Solved {
  ContextTable table;
  SubspaceBasis basis;
  Decoder w_star;
  Decoder w_mm;
};

Solved solved(int m, int d, int vocab, int support, std::uint64_t seed) {
  Solved s{random_table(m, d, vocab, support, seed), {}, {}, {}};
  s.basis = build_basis(s.table);
  s.w_star = solve_wstar(s.table).w_star;
  s.w_mm = solve_svm(s.table, s.basis).w_mm;
  return s;
}

/// On the boundary the minimizer satisfies -grad CE = mu W with mu > 0.
double kkt_misalignment(const RegPathPoint& p, const ContextTable& t) {
  return 1.0 - alignment(-grad_ce(p.w, t), p.w);
}

}  // namespace

TEST(RegPath, RejectsBadGrid) {
  const auto t = random_table(2, 3, 4, 2, 1);
  EXPECT_THROW(regpath(t, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(regpath(t, {2.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(regpath(t, {0.0, 1.0}), std::invalid_argument);
  RegPathOptions o;
  o.budget = 0;
  EXPECT_THROW(regpath(t, {1.0}, o), std::invalid_argument);
}

TEST(RegPath, MethodNames) {
  EXPECT_EQ(regpath_method_from_string("ridge-newton"), RegPathMethod::kRidgeNewton);
  EXPECT_EQ(regpath_method_from_string(to_string(RegPathMethod::kProjectedGradient)), RegPathMethod::kProjectedGradient);
  EXPECT_THROW(regpath_method_from_string("newton"), std::invalid_argument);
}

TEST(RegPath, MethodsAgreeOnSmallRadii) {
  for (std::uint64_t seed : {3u, 8u}) {
    const auto s = solved(4, 7, 5, 3, seed);
    const References refs{s.w_star, s.w_mm, &s.basis};
    const std::vector<double> grid{0.5, 1.0, 2.0, 4.0};
    RegPathOptions pg;
    pg.method = RegPathMethod::kProjectedGradient;
    pg.tol = 1e-10;
    pg.budget = 2000000;
    const auto a = regpath(s.table, grid, {}, refs);
    const auto b = regpath(s.table, grid, pg, refs);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      ASSERT_TRUE(a[i].converged);
      ASSERT_TRUE(b[i].converged);
      EXPECT_LT((a[i].w - b[i].w).norm(), 1e-6 * grid[i]) << "B=" << grid[i];
      EXPECT_NEAR(a[i].ce, b[i].ce, 1e-10);
    }
  }
}

TEST(RegPath, BoundaryAndOptimality) {
  const auto s = solved(5, 8, 6, 3, 4);
  const References refs{s.w_star, s.w_mm, &s.basis};
  const std::vector<double> grid{2, 4, 8, 16, 32, 64};
  const auto pts = regpath(s.table, grid, {}, refs);
  ASSERT_EQ(pts.size(), grid.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    EXPECT_TRUE(p.converged);
    EXPECT_FALSE(p.interior);
    EXPECT_NEAR(p.w.norm(), grid[i], 1e-6 * grid[i]);
    EXPECT_NEAR(p.norm, p.w.norm(), 1e-12 * grid[i]);
    EXPECT_NEAR(p.alignment, alignment(p.w, s.w_mm), 1e-12);
    EXPECT_NEAR(p.subspace_dist, subspace_distance(p.w, s.w_star, s.basis), 1e-12);
    EXPECT_NEAR(p.ce_gap, ce_gap(p.w, s.table), 1e-15 + 1e-12 * p.ce_gap);
    if (p.ce_gap > 1e-12) EXPECT_LT(kkt_misalignment(p, s.table), 1e-8) << "B=" << grid[i];
    if (i > 0) {
      EXPECT_GE(p.alignment, pts[i - 1].alignment - 1e-4);
      EXPECT_LE(p.ce, pts[i - 1].ce);
    }
  }
  EXPECT_GT(pts.back().alignment, 0.99);
  EXPECT_LT(pts.back().subspace_dist, 1e-2);
}

TEST(RegPath, NoPointOfTheBallBeatsIt) {
  // random feasible points of the ball never have lower loss than the solution
  const auto s = solved(3, 5, 5, 2, 9);
  const auto pts = regpath(s.table, {3.0});
  const double best = pts[0].ce;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Decoder w(5, 5);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = n(rng);
    w *= 3.0 / w.norm();
    EXPECT_GE(ce(w, s.table), best - 1e-12);
    EXPECT_GE(ce(0.99 * pts[0].w + 0.01 * w, s.table), best - 1e-12);
  }
}

TEST(RegPath, InteriorWhenMinimizerIsFinite) {
  const auto t = fixture::twin_contexts();
  const auto pts = regpath(t, {1.0, 2.0});
  for (const auto& p : pts) {
    EXPECT_TRUE(p.interior);
    EXPECT_LT(p.norm, 1e-8);
    EXPECT_NEAR(p.ce, std::log(2.0), 1e-12);
  }
}

TEST(RegPath, MissingReferencesGiveNaN) {
  const auto t = random_table(3, 5, 5, 2, 1);
  const auto pts = regpath(t, {1.0});
  EXPECT_TRUE(std::isnan(pts[0].alignment));
  EXPECT_TRUE(std::isnan(pts[0].subspace_dist));
}

TEST(RegPath, BudgetExhaustionIsFlagged) {
  const auto t = random_table(3, 5, 5, 2, 1);
  RegPathOptions o;
  o.method = RegPathMethod::kProjectedGradient;
  o.budget = 3;
  const auto pts = regpath(t, {5.0, 10.0}, o);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_FALSE(pts[0].converged);
  EXPECT_EQ(pts[0].iterations, 3);
}
