#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crowdkernel/fitter.hpp"
#include "support.hpp"

using namespace crowdkernel;
using namespace ck_test;

namespace {

// Majority answers of a planted embedding: the closer member always wins.
std::vector<TripleResponse> majority_responses(const Embedding& truth, std::size_t per_object, std::mt19937_64& rng) {
  std::vector<TripleResponse> out;
  const std::size_t n = truth.size();
  std::uniform_int_distribution<ObjectId> pick(0, n - 1);
  for (ObjectId a = 0; a < n; ++a)
    for (std::size_t i = 0; i < per_object; ++i) {
      ObjectId b = pick(rng), c = pick(rng);
      while (b == a) b = pick(rng);
      while (c == a || c == b) c = pick(rng);
      out.push_back(response(a, b, c, delta(truth, a, b) <= delta(truth, a, c) ? Choice::Left : Choice::Right));
    }
  return out;
}

FitConfig quick(int dims, int epochs = 300) {
  FitConfig c;
  c.dims = dims;
  c.epochs = epochs;
  return c;
}

}  // namespace

TEST(FitBatch, ReachesGeneratingModelLossOnPlantedData) {
  std::mt19937_64 rng(101);
  // Planted rows on the unit circle so the constrained model class contains the truth.
  Eigen::MatrixXd m = gaussian(20, 2, rng);
  m.rowwise().normalize();
  const Embedding truth(m);
  const auto rs = majority_responses(truth, 60, rng);
  FitConfig cfg = quick(2, 400);
  const double generating = log_loss(rs, truth, cfg.model());
  const FitResult fit = fit_batch(rs, 20, cfg);
  EXPECT_LE(fit.loss, generating + 0.05);
  EXPECT_NEAR(fit.loss, log_loss(rs, fit.embedding, cfg.model()), 1e-10);
}

TEST(FitBatch, ZeroInformationDataConvergesToLn2) {
  // Every triple answered both ways. On the unit sphere ln 2 is attained by
  // equidistant points, which exist when n <= d + 1.
  for (const auto& [n, d] : {std::pair{3, 2}, std::pair{4, 3}}) {
    std::vector<TripleResponse> rs;
    for (ObjectId a = 0; a < static_cast<ObjectId>(n); ++a)
      for (ObjectId b = 0; b < static_cast<ObjectId>(n); ++b)
        for (ObjectId c = b + 1; c < static_cast<ObjectId>(n); ++c) {
          if (a == b || a == c) continue;
          rs.push_back(response(a, b, c, Choice::Left));
          rs.push_back(response(a, b, c, Choice::Right));
        }
    const FitResult fit = fit_batch(rs, n, quick(d));
    EXPECT_NEAR(fit.loss, std::log(2.0), 0.01) << n;
  }
}

TEST(FitBatch, DeterministicAndMonotone) {
  std::mt19937_64 rng(103);
  const auto rs = random_responses(10, 120, rng);
  const FitConfig cfg = quick(3, 100);
  const FitResult a = fit_batch(rs, 10, cfg);
  const FitResult b = fit_batch(rs, 10, cfg);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(a.restart, b.restart);
  for (std::size_t i = 1; i < a.trajectory.size(); ++i) EXPECT_LE(a.trajectory[i], a.trajectory[i - 1]);
  // Unit-norm rows give a unit-diagonal kernel equal to M M^T.
  EXPECT_LE((a.kernel.entries() - a.embedding.coords() * a.embedding.coords().transpose()).norm(), 1e-12);
  EXPECT_LE((a.kernel.entries().diagonal() - Eigen::VectorXd::Ones(10)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitBatch, BestRestartWinsAndWarmStartIsUsed) {
  std::mt19937_64 rng(104);
  const auto rs = random_responses(9, 90, rng);
  FitConfig cfg = quick(2, 50);
  cfg.restarts = 4;
  const FitResult all = fit_batch(rs, 9, cfg);
  for (int r = 0; r < cfg.restarts; ++r) {
    const FitResult one = detail::descend_embedding(rs, detail::random_init(9, 2, cfg.seed, r), cfg, r);
    EXPECT_LE(all.loss, one.loss);
  }
  FitConfig single = cfg;
  single.restarts = 1;
  const FitResult warm = fit_batch(rs, 9, single, all.embedding);
  EXPECT_LE(warm.loss, all.loss);
}

TEST(FitBatch, Errors) {
  const std::vector rs{response(0, 1, 5)};
  EXPECT_THROW(fit_batch(rs, 4, quick(2)), ArgumentError);
  EXPECT_THROW(fit_batch(std::vector<TripleResponse>{}, 4, quick(2)), ArgumentError);
  FitConfig bad = quick(2);
  bad.restarts = 0;
  EXPECT_THROW(fit_batch(std::vector{response(0, 1, 2)}, 4, bad), ParameterError);
  bad = quick(2);
  bad.learn_rate = 0.0;
  EXPECT_THROW(fit_batch(std::vector{response(0, 1, 2)}, 4, bad), ParameterError);
}

TEST(FitBatch, WeakIdentifiabilityAcrossRestarts) {
  std::mt19937_64 rng(105);
  Eigen::MatrixXd m = gaussian(15, 2, rng);
  m.rowwise().normalize();
  const Embedding truth(m);
  const auto rs = majority_responses(truth, 80, rng);
  FitConfig cfg = quick(2, 1000);
  std::vector<FitResult> fits;
  for (int r = 0; r < 8; ++r)
    fits.push_back(detail::descend_embedding(rs, detail::random_init(15, 2, 7, r), cfg, r));
  int compared = 0;
  for (std::size_t i = 0; i < fits.size(); ++i)
    for (std::size_t j = i + 1; j < fits.size(); ++j) {
      if (std::abs(fits[i].loss - fits[j].loss) > 1e-3) continue;
      const Eigen::MatrixXd& k1 = fits[i].kernel.entries();
      const Eigen::MatrixXd& k2 = fits[j].kernel.entries();
      EXPECT_LE((k1 - k2).norm() / k1.norm(), 0.05);
      ++compared;
    }
  EXPECT_GT(compared, 0);
}

TEST(FitProjectedKernel, StaysInBAndDescends) {
  std::mt19937_64 rng(106);
  FitConfig cfg = quick(3, 1);
  cfg.mode = FitMode::ProjectedK;
  const FitResult one = fit_projected_kernel(std::vector{response(0, 1, 2)}, 3, cfg);
  EXPECT_TRUE(one.kernel.in_unit_psd_set(1e-8, 1e-8));
  EXPECT_LT(one.loss, std::log(2.0));

  cfg.epochs = 200;
  for (int rep = 0; rep < 5; ++rep) {
    const auto rs = random_responses(7, 60, rng);
    const FitResult fit = fit_projected_kernel(rs, 7, cfg);
    EXPECT_LE(fit.loss, fit.trajectory.front());
    for (std::size_t i = 1; i < fit.trajectory.size(); ++i) EXPECT_LE(fit.trajectory[i], fit.trajectory[i - 1]);
    EXPECT_TRUE(fit.kernel.in_unit_psd_set(1e-6, 1e-6));
    EXPECT_NEAR(fit.loss, log_loss(rs, fit.kernel, cfg.model()), 1e-10);
    EXPECT_TRUE(fit.warnings.empty());
  }
}

TEST(FitProjectedKernel, LogisticIsRestartIndependent) {
  std::mt19937_64 rng(107);
  const auto rs = random_responses(6, 50, rng);
  FitConfig cfg = quick(3, 3000);
  cfg.mode = FitMode::ProjectedK;
  cfg.head = Head::Logistic;
  cfg.learn_rate = 4.0;
  const FitResult from_identity = fit_projected_kernel(rs, 6, cfg);
  double best = from_identity.loss;
  for (int r = 0; r < 5; ++r) {
    const FitResult f = fit_projected_kernel(rs, 6, cfg, KernelMatrix(random_correlation(6, 3, rng)));
    best = std::min(best, f.loss);
  }
  EXPECT_LE(from_identity.loss, best + 1e-3);
}

TEST(FitConfig, Strings) {
  EXPECT_EQ(fit_mode_from_string(to_string(FitMode::ProjectedK)), FitMode::ProjectedK);
  EXPECT_THROW(fit_mode_from_string("sgd"), ParameterError);
}
