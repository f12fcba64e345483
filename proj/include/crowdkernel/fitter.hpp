#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crowdkernel/embedding.hpp"
#include "crowdkernel/errors.hpp"
#include "crowdkernel/model.hpp"

namespace crowdkernel {

enum class FitMode { BatchM, ProjectedK, OnlineK };

inline std::string to_string(FitMode m) {
  switch (m) {
    case FitMode::BatchM: return "batch";
    case FitMode::ProjectedK: return "projected";
    case FitMode::OnlineK: return "online";
  }
  return "batch";
}

inline FitMode fit_mode_from_string(const std::string& s) {
  if (s == "batch") return FitMode::BatchM;
  if (s == "projected") return FitMode::ProjectedK;
  if (s == "online") return FitMode::OnlineK;
  throw ParameterError("unknown fit mode '" + s + "'");
}

struct FitConfig {
  int dims = 3;
  /// Base step size. Batch modes halve it on a loss increase (at most
  /// `max_halvings` times) and restore it after every accepted step.
  double learn_rate = 16.0;
  int epochs = 300;
  int restarts = 3;
  std::uint64_t seed = 1;
  double mu = 0.05;
  Head head = Head::Relative;
  FitMode mode = FitMode::BatchM;
  /// BatchM keeps every row of M on the unit sphere (K_ii = 1).
  bool unit_norm_rows = true;
  int max_halvings = 20;
  double projection_tol = 1e-8;
  int projection_max_iter = 500;

  ModelParams model() const { return {mu, head, dims}; }

  void validate() const {
    model().validate();
    if (!(learn_rate >= 0.0)) throw ParameterError("learn_rate must be >= 0");
    if (mode != FitMode::OnlineK && !(learn_rate > 0.0)) throw ParameterError("learn_rate must be > 0");
    if (epochs < 1) throw ParameterError("epochs must be >= 1");
    if (restarts < 1) throw ParameterError("restarts must be >= 1");
  }
};

struct FitResult {
  Embedding embedding;
  KernelMatrix kernel;
  double loss = std::numeric_limits<double>::infinity();
  std::vector<double> trajectory;
  int restart = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline void check_responses(std::span<const TripleResponse> responses, std::size_t n) {
  if (responses.empty()) throw ArgumentError("fit: need at least one response");
  if (n < 3) throw ArgumentError("fit: need at least 3 objects");
  for (const auto& r : responses) {
    if (!r.triple.distinct()) throw ArgumentError("fit: response with repeated object ids");
    if (r.triple.head >= n || r.triple.left >= n || r.triple.right >= n)
      throw ArgumentError("fit: response references unknown object id");
  }
}

inline void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm > 0.0) {
      m.row(i) /= norm;
    } else {
      m.row(i).setZero();
      m(i, 0) = 1.0;
    }
  }
}

inline Eigen::MatrixXd random_init(std::size_t n, int d, std::uint64_t seed, int restart) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(restart), 0x6d31u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
  return m;
}

inline FitResult descend_embedding(std::span<const TripleResponse> responses, Eigen::MatrixXd m,
                                   const FitConfig& cfg, int restart) {
  const ModelParams params = cfg.model();
  if (cfg.unit_norm_rows) normalize_rows(m);
  Embedding current(m);
  double loss = log_loss(responses, current, params);
  std::vector<double> trajectory{loss};
  trajectory.reserve(static_cast<std::size_t>(cfg.epochs) + 1);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Eigen::MatrixXd g = grad_embedding(responses, current, params);
    if (g.squaredNorm() == 0.0) break;
    double step = cfg.learn_rate;
    bool accepted = false;
    for (int h = 0; h <= cfg.max_halvings; ++h, step *= 0.5) {
      Eigen::MatrixXd trial = current.coords() - step * g;
      if (cfg.unit_norm_rows) normalize_rows(trial);
      if (!trial.allFinite()) continue;
      Embedding candidate(std::move(trial));
      const double trial_loss = log_loss(responses, candidate, params);
      if (trial_loss <= loss) {
        current = std::move(candidate);
        loss = trial_loss;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    trajectory.push_back(loss);
  }

  FitResult out{current, kernel_from_embedding(current), loss, std::move(trajectory), restart, {}};
  return out;
}

}  // namespace detail

/// Full-batch gradient descent on M with step-halving line search.
///
/// Restart 0 starts from `warm_start` when given; every other restart from
/// rows drawn uniformly in [-0.5, 0.5]^d. The lowest final loss wins, ties
/// going to the lower restart index.
inline FitResult fit_batch(std::span<const TripleResponse> responses, std::size_t n, const FitConfig& cfg,
                           const std::optional<Embedding>& warm_start = std::nullopt) {
  cfg.validate();
  detail::check_responses(responses, n);
  if (warm_start && (warm_start->size() != n || warm_start->dims() != static_cast<std::size_t>(cfg.dims)))
    throw ArgumentError("fit_batch: warm start has wrong shape");

  std::optional<FitResult> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    Eigen::MatrixXd init = (r == 0 && warm_start) ? warm_start->coords() : detail::random_init(n, cfg.dims, cfg.seed, r);
    FitResult res = detail::descend_embedding(responses, std::move(init), cfg, r);
    if (!best || res.loss < best->loss) best = std::move(res);
  }
  return *best;
}

/// Projected gradient descent on K over the unit-diagonal PSD set, starting
/// from the identity (or `init`). Steps that raise the loss are halved.
inline FitResult fit_projected_kernel(std::span<const TripleResponse> responses, std::size_t n, const FitConfig& cfg,
                                      const std::optional<KernelMatrix>& init = std::nullopt) {
  cfg.validate();
  detail::check_responses(responses, n);
  const ModelParams params = cfg.model();
  KernelMatrix k = init ? *init : KernelMatrix::identity(n);
  if (k.size() != n) throw ArgumentError("fit_projected_kernel: init has wrong size");

  std::vector<std::string> warnings;
  auto project = [&](const Eigen::MatrixXd& m) {
    ProjectionResult pr = project_B(KernelMatrix(0.5 * (m + m.transpose())), cfg.projection_tol, cfg.projection_max_iter);
    if (!pr.converged && warnings.empty())
      warnings.push_back("projection onto unit-diagonal PSD set did not converge (change " +
                         std::to_string(pr.last_change) + ")");
    return pr.matrix;
  };
  if (init) k = project(k.entries());

  double loss = log_loss(responses, k, params);
  std::vector<double> trajectory{loss};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Eigen::MatrixXd g = grad_kernel(responses, k, params);
    if (g.squaredNorm() == 0.0) break;
    double step = cfg.learn_rate;
    bool accepted = false;
    for (int h = 0; h <= cfg.max_halvings; ++h, step *= 0.5) {
      KernelMatrix candidate = project(k.entries() - step * g);
      const double trial_loss = log_loss(responses, candidate, params);
      if (trial_loss <= loss) {
        k = std::move(candidate);
        loss = trial_loss;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    trajectory.push_back(loss);
  }
  Embedding m = embedding_from_kernel(k, n);
  return FitResult{std::move(m), std::move(k), loss, std::move(trajectory), 0, std::move(warnings)};
}

}  // namespace crowdkernel
