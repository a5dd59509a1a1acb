#include "ntpbias/feasibility.hpp"
#include "ntpbias/metrics.hpp"
#include "ntpbias/svm.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ntpbias;

namespace {

/// m=1, V=2, d=1, h=(1), p=(0.75, 0.25). Full support, so built without validation.
ContextTable binary() { return fixture::table(2, 1, {fixture::context(fixture::vec({1.0}), {0, 1}, {0.75, 0.25}, 1.0)}); }

}  // namespace

TEST(Ce, ZeroDecoderIsLogV) {
  const auto t = random_table(5, 4, 7, 3, 1);
  EXPECT_NEAR(ce(Decoder::Zero(7, 4), t), std::log(7.0), 1e-15);
}

TEST(Ce, MatchedLogitsReachEntropy) {
  const auto t = binary();
  Decoder w(2, 1);
  w << std::log(0.75), std::log(0.25);
  EXPECT_NEAR(entropy(t), 0.5623, 1e-4);
  EXPECT_NEAR(ce(w, t), entropy(t), 1e-15);
  EXPECT_NEAR(ce_gap(w, t), 0.0, 1e-15);
}

TEST(Ce, GapAtZero) {
  const auto t = binary();
  const Decoder w = Decoder::Zero(2, 1);
  EXPECT_NEAR(ce(w, t), 0.6931, 1e-4);
  EXPECT_NEAR(ce_gap(w, t), 0.1308, 1e-4);
  EXPECT_NEAR(ce_gap(w, t), std::log(2.0) - oracle::naive_entropy(t), 1e-15);
}

TEST(Ce, StableAtExtremeLogits) {
  const auto t = random_table(3, 5, 5, 2, 2);
  const auto b = build_basis(t);
  const auto s = solve_svm(t, b);
  ASSERT_EQ(s.status, SvmStatus::kOptimal);
  const auto w = solve_wstar(t).w_star;
  // exact F-perp direction, so the in-support log-odds stay those of W*
  const Decoder far = w + 800.0 * b.project_perp(s.w_mm);
  EXPECT_TRUE(std::isfinite(ce(far, t)));
  EXPECT_GE(ce_gap(far, t), 0.0);
  EXPECT_LT(ce_gap(far, t), 1e-20);
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(fixture::one_hot_pair()), 0.0);
  const auto uniform = fixture::table(3, 1, {fixture::context(fixture::vec({1.0}), {0, 1}, {0.5, 0.5}, 1.0)});
  EXPECT_NEAR(entropy(uniform), std::log(2.0), 1e-15);
  const auto mixed = fixture::table(3, 1, {fixture::context(fixture::vec({1.0}), {0, 1}, {0.5, 0.5}, 0.5),
                                           fixture::context(fixture::vec({-1.0}), {2}, {1.0}, 0.5)});
  EXPECT_NEAR(entropy(mixed), 0.5 * std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy(mixed), 0.3466, 1e-4);
}

TEST(CeSubspace, Examples) {
  const auto t = random_table(6, 8, 6, 3, 3);
  const auto r = solve_wstar(t);
  ASSERT_TRUE(r.compatible);
  EXPECT_NEAR(ce_subspace(r.w_star, t), entropy(t), 1e-10);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const Decoder w = oracle::random_decoder(6, 8, rng, 2.0);
    EXPECT_LE(ce_subspace(w, t), ce(w, t));
  }
  const Decoder w = oracle::random_decoder(2, 2, rng);
  EXPECT_EQ(ce_subspace(w, fixture::one_hot_pair()), 0.0);
}

class LossProperties : public ::testing::TestWithParam<int> {};

TEST_P(LossProperties, AgreeWithDefinitions) {
  const int seed = GetParam();
  std::mt19937_64 rng(seed);
  const int vocab = 3 + seed % 5;
  const auto t = random_table(2 + seed % 7, 1 + seed % 6, vocab, 1 + seed % (vocab - 1), seed);
  EXPECT_NEAR(entropy(t), oracle::naive_entropy(t), 1e-12);
  for (int i = 0; i < 10; ++i) {
    const Decoder w = oracle::random_decoder(t.vocab_size, t.embed_dim, rng, 1.5);
    const double c = ce(w, t);
    EXPECT_NEAR(c, oracle::naive_ce(w, t), 1e-11 * (1.0 + c));
    EXPECT_GE(c, entropy(t) - 1e-10);
    EXPECT_NEAR(ce_gap(w, t), c - entropy(t), 1e-11 * (1.0 + c));
    EXPECT_NEAR(weighted_kl(w, t), c - entropy(t), 1e-11 * (1.0 + c));
  }
}

INSTANTIATE_TEST_SUITE_P(RandomTables, LossProperties, ::testing::Range(1, 16));

TEST(Alignment, Examples) {
  std::mt19937_64 rng(2);
  const Decoder w = oracle::random_decoder(4, 3, rng);
  EXPECT_NEAR(alignment(w, w), 1.0, 1e-15);
  EXPECT_NEAR(alignment(w, 3.5 * w), 1.0, 1e-15);
  EXPECT_NEAR(alignment(w, -w), -1.0, 1e-15);
  const auto b = build_basis(random_table(3, 3, 4, 3, 1));
  EXPECT_NEAR(alignment(b.element(0), b.element(1)), 0.0, 1e-12);
  EXPECT_THROW(alignment(w, Decoder::Zero(4, 3)), std::invalid_argument);
}

TEST(SubspaceDistance, Examples) {
  const auto t = random_table(3, 5, 5, 3, 4);
  const auto b = build_basis(t);
  const Decoder ws = solve_wstar(t).w_star;
  std::mt19937_64 rng(2);
  const Decoder c = b.project_perp(oracle::random_decoder(5, 5, rng));
  EXPECT_NEAR(subspace_distance(ws, ws, b), 0.0, 1e-13);
  EXPECT_NEAR(subspace_distance(ws + c, ws, b), 0.0, 1e-12);
  EXPECT_NEAR(subspace_distance(ws + b.element(0), ws, b), 1.0, 1e-12);
}

TEST(Decay, BoundAlongRay) {
  const auto t = random_table(5, 8, 6, 3, 11);
  const auto b = build_basis(t);
  const auto s = solve_svm(t, b);
  const auto r = solve_wstar(t);
  ASSERT_EQ(s.status, SvmStatus::kOptimal);
  ASSERT_TRUE(r.compatible);
  double max_h = 0.0;
  for (const auto& c : t.contexts) max_h = std::max(max_h, c.embedding.norm());
  const double constant = 6.0 * std::exp(r.w_star.norm() * std::sqrt(2.0) * max_h);
  EXPECT_NEAR(decay_constant(r.w_star, t), constant, 1e-12 * constant);
  for (int g = 1; g <= 20; ++g) {
    EXPECT_LE(ce_gap(r.w_star + g * s.w_mm, t), constant * std::exp(-g));
  }
}
