#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crowdkernel/crowdsim.hpp"
#include "support.hpp"

using namespace crowdkernel;
using namespace ck_test;

namespace {

double three_sigma(double p, double draws) { return 3.0 * std::sqrt(p * (1.0 - p) / draws); }

Embedding line(std::initializer_list<double> xs) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) c(i++, 0) = x;
  return Embedding(c);
}

}  // namespace

TEST(SimCrowd, ReliableFrequencyMatchesModel) {
  SimCrowd sim(line({0.0, 0.1, 1.0}), 0.05, uniform_workers(1, 1.0), 11);
  const Triple t{0, 1, 2};
  const double p = sim.model_probability(t);
  EXPECT_NEAR(p, (0.05 + 1.0) / (0.1 + 0.01 + 1.0), 1e-15);
  const int draws = 100000;
  int left = 0;
  for (int i = 0; i < draws; ++i) left += sim.answer(t, 0).choice == Choice::Left;
  EXPECT_NEAR(left / static_cast<double>(draws), p, three_sigma(p, draws));
  EXPECT_EQ(sim.draws(0), static_cast<std::uint64_t>(draws));
}

TEST(SimCrowd, UnreliableWorkerFlipsCoins) {
  SimCrowd sim(line({0.0, 0.1, 1.0}), 0.05, uniform_workers(1, 0.0), 12);
  const int draws = 100000;
  int left = 0;
  for (int i = 0; i < draws; ++i) left += sim.answer({0, 1, 2}, 0).choice == Choice::Left;
  EXPECT_NEAR(left / static_cast<double>(draws), 0.5, three_sigma(0.5, draws));
}

TEST(SimCrowd, DeterministicPerCounter) {
  std::mt19937_64 rng(13);
  SimCrowd a(Embedding(gaussian(10, 2, rng)), 0.05, uniform_workers(3, 0.7), 99);
  SimCrowd b(a.truth(), 0.05, uniform_workers(3, 0.7), 99);
  for (int i = 0; i < 200; ++i) {
    const Triple t = ck_test::random_triple(10, rng);
    const std::size_t w = static_cast<std::size_t>(i % 3);
    const auto ra = a.answer(t, w);
    EXPECT_EQ(ra.choice, b.answer(t, w).choice);
    EXPECT_EQ(ra.choice, a.answer_at(t, w, a.draws(w) - 1).choice);
    EXPECT_EQ(ra.worker, "sim-" + std::to_string(w));
  }
  EXPECT_THROW(a.answer({0, 1, 2}, 3), ArgumentError);
  EXPECT_THROW(SimCrowd(a.truth(), 0.05, uniform_workers(1, 1.5), 1), ParameterError);
  EXPECT_THROW(SimCrowd(a.truth(), 0.05, {}, 1), ArgumentError);
}

TEST(SimCrowd, EqualWorkersAreExchangeable) {
  SimCrowd sim(line({0.0, 0.3, 1.0}), 0.05, uniform_workers(2, 0.8), 14);
  const Triple t{0, 1, 2};
  const int draws = 50000;
  int l0 = 0, l1 = 0;
  for (int i = 0; i < draws; ++i) {
    l0 += sim.answer(t, 0).choice == Choice::Left;
    l1 += sim.answer(t, 1).choice == Choice::Left;
  }
  const double q = sim.answer_probability(t, 0);
  const double diff = (l0 - l1) / static_cast<double>(draws);
  EXPECT_LE(std::abs(diff), 3.0 * std::sqrt(2.0 * q * (1 - q) / draws));
}

TEST(Generate, TwoLeavesSeparate) {
  SyntheticSpec spec;
  spec.leaves = 2;
  spec.n = 40;
  const SyntheticData data = generate(spec);
  double within = 0.0, across = std::numeric_limits<double>::infinity();
  for (ObjectId i = 0; i < 40; ++i)
    for (ObjectId j = i + 1; j < 40; ++j) {
      const double d = delta(data.truth, i, j);
      if (data.group[i] == data.group[j])
        within = std::max(within, d);
      else
        across = std::min(across, d);
    }
  EXPECT_LT(within * 5.0, across);
}

TEST(Generate, FourLeafTreeReproducesPathLengths) {
  const Eigen::MatrixXd c = tree_leaf_centres(4, 1.0);
  // Balanced tree ((0,1),(2,3)): siblings 2 edges apart, cousins 4.
  const double expected[4][4] = {{0, 2, 4, 4}, {2, 0, 4, 4}, {4, 4, 0, 2}, {4, 4, 2, 0}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR((c.row(i) - c.row(j)).squaredNorm(), expected[i][j], 1e-12);
  EXPECT_EQ(c.cols(), 6);
  const Eigen::MatrixXd e = tree_leaf_centres(4, 0.5);
  EXPECT_NEAR((e.row(0) - e.row(3)).squaredNorm(), 2.0, 1e-12);
  // Leaf edges 1, edges above them 3: siblings 2 apart, cousins 2 * (1 + 3).
  const Eigen::MatrixXd g = tree_leaf_centres(4, 1.0, 3.0);
  EXPECT_NEAR((g.row(0) - g.row(1)).squaredNorm(), 2.0, 1e-12);
  EXPECT_NEAR((g.row(0) - g.row(2)).squaredNorm(), 8.0, 1e-12);
  EXPECT_NEAR((g.row(1) - g.row(3)).squaredNorm(), 8.0, 1e-12);
}

TEST(Generate, DeterministicAndKinds) {
  for (SyntheticKind kind : {SyntheticKind::TreeLeaves, SyntheticKind::UniformBall, SyntheticKind::Clustered}) {
    SyntheticSpec spec;
    spec.kind = kind;
    spec.n = 25;
    spec.leaves = 3;
    spec.seed = 5;
    const SyntheticData a = generate(spec), b = generate(spec);
    EXPECT_EQ(a.truth.coords(), b.truth.coords());
    EXPECT_EQ(a.group, b.group);
    EXPECT_EQ(a.truth.size(), 25u);
    spec.seed = 6;
    EXPECT_NE(generate(spec).truth.coords(), a.truth.coords());
    EXPECT_EQ(synthetic_kind_from_string(to_string(kind)), kind);
  }
  SyntheticSpec bad;
  bad.leaves = 100;
  EXPECT_THROW(generate(bad), ParameterError);
}

TEST(Agreement, ConstructedThreeQuartersCase) {
  // With mu = 0.05, d_ab = 0.05 and d_ac = 0.25 give p = 0.3 / 0.4 = 0.75.
  const Embedding m = line({0.0, std::sqrt(0.05), -std::sqrt(0.25)});
  SimCrowd sim(m, 0.05, uniform_workers(2, 1.0), 21);
  EXPECT_NEAR(sim.model_probability({0, 1, 2}), 0.75, 1e-12);
  const double q = sim.answer_probability({0, 1, 2}, 0);
  EXPECT_NEAR(q, 0.75, 1e-12);
  EXPECT_NEAR(pair_agreement(q, q), 0.625, 1e-12);
}

TEST(Agreement, EmpiricalMatchesAnalytic) {
  std::mt19937_64 rng(22);
  SimCrowd sim(Embedding(gaussian(15, 2, rng)), 0.05, uniform_workers(4, 0.8), 23);
  const AgreementEstimate est = agreement_rate(sim, 2000, 10, 5);
  EXPECT_EQ(est.trials, 20000u);
  EXPECT_NEAR(est.empirical, est.analytic, three_sigma(est.analytic, static_cast<double>(est.trials)));
}

TEST(Agreement, DeterministicAnswersAlwaysAgree) {
  EXPECT_EQ(pair_agreement(1.0, 1.0), 1.0);
  EXPECT_EQ(pair_agreement(0.0, 0.0), 1.0);
  EXPECT_EQ(pair_agreement(1.0, 0.0), 0.0);
  EXPECT_NEAR(pair_agreement(0.75, 0.75), 0.625, 1e-15);
  EXPECT_NEAR(pair_agreement(0.5, 0.9), 0.5, 1e-15);
}

TEST(Agreement, CalibrationHitsTarget) {
  SyntheticSpec spec;
  const SyntheticData data = generate(spec);
  SimCrowd sim(data.truth, 0.05, uniform_workers(5, 1.0), 25);
  const double r = calibrate_reliability(sim, 0.65);
  EXPECT_GT(r, 0.0);
  EXPECT_LT(r, 1.0);
  EXPECT_NEAR(analytic_agreement(sim, r, 4000, 7), 0.65, 1e-9);
  EXPECT_EQ(calibrate_reliability(sim, 0.4), 0.0);
  // Equal edges cannot reach the target: the answers are too close to fair coins.
  spec.edge_growth = 1.0;
  SimCrowd flat(generate(spec).truth, 0.05, uniform_workers(5, 1.0), 25);
  EXPECT_LT(analytic_agreement(flat, 1.0, 4000, 7), 0.65);
  EXPECT_EQ(calibrate_reliability(flat, 0.65), 1.0);
}

TEST(Gold, ThresholdsAndShortage) {
  std::mt19937_64 rng(26);
  const Embedding m(gaussian(20, 2, rng));
  const GoldSet any = make_gold(m, 0.05, 30, 0.5, 1);
  EXPECT_EQ(any.triples.size(), 30u);
  EXPECT_FALSE(any.shortage);
  const GoldSet strict = make_gold(m, 0.05, 20, 0.95, 2);
  for (const auto& g : strict.triples) {
    const double p = prob_relative(m, 0.05, g.triple);
    EXPECT_GE(g.expected == Choice::Left ? p : 1.0 - p, 0.95);
  }
  const GoldSet none = make_gold(m, 0.05, 5, 1.0 + 1e-9, 3, 100);
  EXPECT_TRUE(none.shortage);
  EXPECT_TRUE(none.triples.empty());
}

TEST(Gold, TightClusterTripleQualifies) {
  const Embedding m = line({0.0, 0.01, 5.0});
  EXPECT_GE(prob_relative(m, 0.05, {0, 1, 2}), 0.95);
  const GoldSet g = make_gold(m, 0.05, 1, 0.95, 4);
  ASSERT_EQ(g.triples.size(), 1u);
}

TEST(Gold, CheatersFailAndHonestWorkersPass) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::Clustered;
  spec.n = 40;
  spec.leaves = 4;
  const SyntheticData data = generate(spec);
  const GoldSet gold = make_gold(data.truth, 0.05, 200, 0.95, 8);
  ASSERT_FALSE(gold.shortage);
  SimCrowd sim(data.truth, 0.05, {SimWorker{0.0}, SimWorker{1.0}}, 27);
  int cheat_fail = 0, honest_fail = 0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep)
    for (const auto& g : gold.triples) {
      cheat_fail += sim.answer(g.triple, 0).choice != g.expected;
      honest_fail += sim.answer(g.triple, 1).choice != g.expected;
    }
  const double total = reps * static_cast<double>(gold.triples.size());
  EXPECT_GE(cheat_fail / total, 0.40);
  EXPECT_LE(honest_fail / total, 0.05 + three_sigma(0.05, total));
}
