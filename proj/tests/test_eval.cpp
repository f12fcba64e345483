#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crowdkernel/eval.hpp"
#include "support.hpp"

using namespace crowdkernel;
using namespace ck_test;

namespace {

Embedding line(std::size_t n, double spacing) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) c(static_cast<Eigen::Index>(i), 0) = spacing * static_cast<double>(i);
  return Embedding(c);
}

std::vector<ObjectId> all_targets(std::size_t n) {
  std::vector<ObjectId> t(n);
  for (ObjectId i = 0; i < n; ++i) t[i] = i;
  return t;
}

}  // namespace

TEST(TwentyQ, UniformBaselineValues) {
  EXPECT_EQ(uniform_log2_rank(1), 0.0);
  EXPECT_NEAR(uniform_log2_rank(2), 0.5, 1e-15);
  EXPECT_NEAR(uniform_log2_rank(4), (0.0 + 1.0 + std::log2(3.0) + 2.0) / 4.0, 1e-15);
  // log2(n!)/n approaches log2(n) - 1/ln 2 for large n.
  EXPECT_NEAR(uniform_log2_rank(100000), std::log2(100000.0) - 1.0 / std::log(2.0), 1e-3);
}

TEST(TwentyQ, NoQuestionsGivesTheUniformBaseline) {
  const Embedding m = line(12, 0.3);
  const auto targets = all_targets(12);
  for (QuestionMode qm : {QuestionMode::Random, QuestionMode::Adaptive}) {
    const auto res = twenty_questions(m, {}, noiseless_target_oracle(m), targets, qm, 0, 20, 3);
    // Ties rank by id, so target i sits at rank i + 1.
    for (ObjectId i = 0; i < 12; ++i) EXPECT_EQ(res.ranks[i], i + 1);
    EXPECT_NEAR(res.mean_log2_rank, uniform_log2_rank(12), 1e-12);
  }
}

TEST(TwentyQ, NoiselessAdaptiveGamesFindTheTarget) {
  std::mt19937_64 rng(501);
  const Embedding m(gaussian(16, 2, rng));
  const auto targets = all_targets(16);
  const auto adaptive =
      twenty_questions(m, {}, noiseless_target_oracle(m), targets, QuestionMode::Adaptive, 20, 100, 5);
  const auto random = twenty_questions(m, {}, noiseless_target_oracle(m), targets, QuestionMode::Random, 20, 100, 5);
  EXPECT_LE(adaptive.mean_log2_rank, 1.0);
  EXPECT_LT(adaptive.mean_log2_rank, random.mean_log2_rank);
  EXPECT_LT(random.mean_log2_rank, uniform_log2_rank(16));
  EXPECT_EQ(adaptive.ranks.size(), 16u);
}

TEST(TwentyQ, DeterministicAndValidated) {
  std::mt19937_64 rng(502);
  const Embedding m(gaussian(10, 2, rng));
  SimCrowd a(m, 0.05, uniform_workers(2, 0.8), 7), b(m, 0.05, uniform_workers(2, 0.8), 7);
  const auto targets = all_targets(10);
  const auto ra = twenty_questions(m, {}, crowd_target_oracle(a), targets, QuestionMode::Adaptive, 8, 30, 9);
  const auto rb = twenty_questions(m, {}, crowd_target_oracle(b), targets, QuestionMode::Adaptive, 8, 30, 9);
  EXPECT_EQ(ra.ranks, rb.ranks);
  const std::vector<ObjectId> bad{10};
  EXPECT_THROW(twenty_questions(m, {}, noiseless_target_oracle(m), bad, QuestionMode::Random, 1, 10, 1),
               ArgumentError);
  EXPECT_THROW(twenty_questions(line(2, 1.0), {}, noiseless_target_oracle(m), {}, QuestionMode::Random, 1, 10, 1),
               ArgumentError);
  EXPECT_EQ(question_mode_from_string("adaptive"), QuestionMode::Adaptive);
}

TEST(TwentyQ, CrowdOracleTargetMemberAlwaysWins) {
  const Embedding m = line(5, 1.0);
  SimCrowd sim(m, 0.05, uniform_workers(1, 0.0), 3);
  const TargetOracle o = crowd_target_oracle(sim);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(o(2, 2, 4), Choice::Left);
    EXPECT_EQ(o(2, 0, 2), Choice::Right);
  }
  EXPECT_EQ(sim.draws(0), 0u);
}

TEST(LooKnn, HandCases) {
  const std::vector<int> clusters{1, 1, 1, -1, -1, -1};
  Eigen::MatrixXd c(6, 1);
  c << 0.0, 0.1, 0.3, 5.0, 5.1, 5.3;
  EXPECT_EQ(loo_knn(kernel_from_embedding(Embedding(c)), clusters), 0.0);
  // Alternating labels on a line: every nearest neighbour disagrees.
  const std::vector<int> alternating{1, -1, 1, -1};
  EXPECT_EQ(loo_knn(kernel_from_embedding(line(4, 1.0)), alternating), 1.0);
  // Objects 2 and 5 carry the other cluster's label; only they are misread.
  const std::vector<int> mixed{1, 1, -1, -1, -1, 1};
  EXPECT_NEAR(loo_knn(kernel_from_embedding(Embedding(c)), mixed), 2.0 / 6.0, 1e-15);
  // Unlabelled objects neither vote nor count.
  const std::vector<int> partial{1, 0, 1, -1, 0, -1};
  EXPECT_EQ(loo_knn(kernel_from_embedding(Embedding(c)), partial), 0.0);
}

TEST(LooKnn, Errors) {
  const KernelMatrix k = kernel_from_embedding(line(4, 1.0));
  EXPECT_THROW(loo_knn(k, std::vector<int>{1, -1, 1}), ArgumentError);
  EXPECT_THROW(loo_knn(k, std::vector<int>{1, 1, 1, -1}), ArgumentError);
  EXPECT_THROW(loo_knn(k, std::vector<int>{1, 2, -1, -1}), ArgumentError);
}

TEST(Curve, AcquisitionModesCoincideAtSeedBudget) {
  CurveConfig cfg;
  cfg.synthetic.n = 16;
  cfg.synthetic.leaves = 4;
  cfg.pipeline.seed_triples = 4;
  cfg.pipeline.fit.epochs = 60;
  cfg.pipeline.fit.restarts = 1;
  cfg.pipeline.sample_size = 20;
  cfg.budgets = {6, 4};
  cfg.seeds = {3};
  cfg.games_per_target = 1;
  cfg.questions = 6;
  const auto pts = acquisition_curve(cfg);
  ASSERT_EQ(pts.size(), 2u * 2u * 2u);
  for (QuestionMode qm : {QuestionMode::Random, QuestionMode::Adaptive}) {
    EXPECT_EQ(curve_mean(pts, 4, Acquisition::Adaptive, qm), curve_mean(pts, 4, Acquisition::Random, qm));
    EXPECT_TRUE(std::isfinite(curve_mean(pts, 6, Acquisition::Adaptive, qm)));
  }
  EXPECT_TRUE(std::isnan(curve_mean(pts, 5, Acquisition::Adaptive, QuestionMode::Random)));
  const std::string csv = curve_csv(pts);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "budget,mode,questions,seed,mean_log2_rank");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_NE(csv.find("\n4,adaptive,random,3,"), std::string::npos);
  EXPECT_NE(curve_svg(pts).find("<svg"), std::string::npos);
  cfg.budgets = {3, 6};
  EXPECT_THROW(acquisition_curve(cfg), ArgumentError);
}

TEST(Curve, ReliableCrowdWhenAgreementDisabled) {
  CurveConfig cfg;
  cfg.target_agreement = 0.0;
  const SyntheticData data = generate(cfg.synthetic);
  const SimCrowd sim = make_curve_crowd(cfg, data.truth, 1);
  for (const auto& w : sim.workers()) EXPECT_EQ(w.reliability, 1.0);
}
