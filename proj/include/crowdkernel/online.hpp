#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "crowdkernel/embedding.hpp"
#include "crowdkernel/errors.hpp"
#include "crowdkernel/fitter.hpp"
#include "crowdkernel/model.hpp"

namespace crowdkernel {

// ---------------------------------------------------------------------------
// Online learning of K over the unit-diagonal PSD set.
//
// With K_ii = 1 the relative head reads
//   p = (mu + 2 - K_ac - K_ca) / (2 mu + 4 - K_ab - K_ba - K_ac - K_ca),
// which depends on off-diagonal entries only.
// ---------------------------------------------------------------------------

inline double unit_diagonal_loss(const KernelMatrix& k, const TripleResponse& r, double mu) {
  const ObjectId a = r.triple.head, w = r.winner(), l = r.loser();
  const double d_w = 2.0 - k(a, w) - k(w, a);
  const double d_l = 2.0 - k(a, l) - k(l, a);
  return detail::relative_nll(d_w, d_l, mu);
}

/// Gradient of unit_diagonal_loss with respect to the entries of K (four nonzeros).
inline Eigen::MatrixXd unit_diagonal_gradient(const KernelMatrix& k, const TripleResponse& r, double mu) {
  const auto n = static_cast<Eigen::Index>(k.size());
  const ObjectId a = r.triple.head, w = r.winner(), l = r.loser();
  const double d_w = 2.0 - k(a, w) - k(w, a);
  const double d_l = 2.0 - k(a, l) - k(l, a);
  const double denom = 2.0 * mu + d_w + d_l;
  const double dw = 1.0 / denom;
  const double dl = 1.0 / denom - 1.0 / (mu + d_l);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  const auto ia = static_cast<Eigen::Index>(a), iw = static_cast<Eigen::Index>(w), il = static_cast<Eigen::Index>(l);
  g(ia, iw) = g(iw, ia) = -dw;
  g(ia, il) = g(il, ia) = -dl;
  return g;
}

/// Per-step record of an online run: the response consumed at step t and
/// the loss the learner's K^t incurred on it.
struct OnlineLedger {
  std::vector<TripleResponse> responses;
  std::vector<double> losses;
};

/// Stochastic projected gradient descent K^{t+1} = P_B(K^t - eta grad l_t(K^t)).
class OnlineKernelLearner {
 public:
  OnlineKernelLearner(KernelMatrix start, double eta, double mu, double projection_tol = 1e-9,
                      int projection_max_iter = 500)
      : k_(std::move(start)), eta_(eta), mu_(mu), tol_(projection_tol), max_iter_(projection_max_iter) {
    detail::check_mu(mu_);
    if (!(eta_ >= 0.0)) throw ParameterError("online learner: eta must be >= 0");
  }

  const KernelMatrix& current() const { return k_; }

  /// Scores `r` against the current K, then updates. Returns l_t(K^t).
  double observe(const TripleResponse& r) {
    detail::check_triple(r.triple, k_.size());
    const double loss = unit_diagonal_loss(k_, r, mu_);
    ledger_.responses.push_back(r);
    ledger_.losses.push_back(loss);
    if (eta_ > 0.0) {
      const Eigen::MatrixXd step = k_.entries() - eta_ * unit_diagonal_gradient(k_, r, mu_);
      ProjectionResult pr = project_B(KernelMatrix(step), tol_, max_iter_);
      if (!pr.converged) ++unconverged_;
      k_ = std::move(pr.matrix);
    }
    return loss;
  }

  const OnlineLedger& ledger() const { return ledger_; }
  int unconverged_projections() const { return unconverged_; }

 private:
  KernelMatrix k_;
  double eta_;
  double mu_;
  double tol_;
  int max_iter_;
  OnlineLedger ledger_;
  int unconverged_ = 0;
};

/// Step size 1/sqrt(T) for a horizon of T responses.
inline double online_step_size(std::size_t horizon) { return 1.0 / std::sqrt(static_cast<double>(horizon)); }

struct OnlineFit {
  FitResult fit;
  OnlineLedger ledger;
};

/// Runs the online learner over `stream` from K0 = `start` (identity by
/// default) with eta = cfg.learn_rate.
inline OnlineFit fit_online(std::span<const TripleResponse> stream, std::size_t n, const FitConfig& cfg,
                            const std::optional<KernelMatrix>& start = std::nullopt) {
  cfg.validate();
  detail::check_responses(stream, n);
  OnlineKernelLearner learner(start ? *start : KernelMatrix::identity(n), cfg.learn_rate, cfg.mu, 1e-9,
                              cfg.projection_max_iter);
  std::vector<double> trajectory;
  trajectory.reserve(stream.size());
  for (const auto& r : stream) trajectory.push_back(learner.observe(r));

  FitResult fit{embedding_from_kernel(learner.current(), n), learner.current(), 0.0, std::move(trajectory), 0, {}};
  fit.loss = log_loss(stream, fit.kernel, cfg.model());
  if (learner.unconverged_projections() > 0)
    fit.warnings.push_back(std::to_string(learner.unconverged_projections()) + " projections did not converge");
  return {std::move(fit), learner.ledger()};
}

// ---------------------------------------------------------------------------
// Relative regression: p_t(w) = w.x / (w.x + w.x'), projected online gradient.
// ---------------------------------------------------------------------------

struct BallSet {
  Eigen::VectorXd center;
  double radius = 1.0;
};

struct BoxSet {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Image of the unit-diagonal PSD set under S -> w(S) = (mu + 2, vec(S)).
struct KernelImageSet {
  std::size_t n = 0;
  double mu = 0.05;
  double tol = 1e-10;
  int max_iter = 1000;
};

using FeasibleSet = std::variant<BallSet, BoxSet, KernelImageSet>;

/// Column-major flattening of S behind the leading constant mu + 2.
inline Eigen::VectorXd kernel_image(const KernelMatrix& s, double mu) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::VectorXd w(1 + n * n);
  w(0) = mu + 2.0;
  w.tail(n * n) = Eigen::Map<const Eigen::VectorXd>(s.entries().data(), n * n);
  return w;
}

inline Eigen::MatrixXd matrix_from_image(const Eigen::VectorXd& w, std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  if (w.size() != 1 + m * m) throw ArgumentError("matrix_from_image: size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(w.data() + 1, m, m);
}

/// Feature pair (x, x') for triple t: x carries -1 at the (a,c)/(c,a) slots
/// and x' at (a,b)/(b,a), each with a leading 1, so that w(S).x = mu + d_ac.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> kernel_image_features(const Triple& t, std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  auto slot = [m](ObjectId i, ObjectId j) {
    return 1 + static_cast<Eigen::Index>(j) * m + static_cast<Eigen::Index>(i);
  };
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1 + m * m);
  Eigen::VectorXd xp = Eigen::VectorXd::Zero(1 + m * m);
  x(0) = xp(0) = 1.0;
  x(slot(t.head, t.right)) = x(slot(t.right, t.head)) = -1.0;
  xp(slot(t.head, t.left)) = xp(slot(t.left, t.head)) = -1.0;
  return {x, xp};
}

/// Norm bound of w(S) over the unit-diagonal PSD set.
inline double kernel_image_radius(std::size_t n, double mu) {
  const double nn = static_cast<double>(n);
  return std::sqrt(nn * nn + (2.0 + mu) * (2.0 + mu));
}

inline Eigen::VectorXd project(const FeasibleSet& set, const Eigen::VectorXd& v) {
  return std::visit(
      [&](const auto& s) -> Eigen::VectorXd {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, BallSet>) {
          const Eigen::VectorXd off = v - s.center;
          const double norm = off.norm();
          if (norm <= s.radius) return v;
          return s.center + off * (s.radius / norm);
        } else if constexpr (std::is_same_v<S, BoxSet>) {
          return v.cwiseMax(s.lower).cwiseMin(s.upper);
        } else {
          // B is symmetric, so the skew part of S is orthogonal to it.
          Eigen::MatrixXd m = matrix_from_image(v, s.n);
          m = 0.5 * (m + m.transpose());
          const ProjectionResult pr = project_B(KernelMatrix(m), s.tol, s.max_iter);
          return kernel_image(pr.matrix, s.mu);
        }
      },
      set);
}

inline double relative_regression_probability(const Eigen::VectorXd& w, const Eigen::VectorXd& x,
                                              const Eigen::VectorXd& xp) {
  const double wx = w.dot(x), wxp = w.dot(xp);
  if (!(wx > 0.0) || !(wxp > 0.0))
    throw DomainError("relative regression: w.x and w.x' must be strictly positive");
  return wx / (wx + wxp);
}

/// l_t(w) = log 1/p_t(w) if y, log 1/(1 - p_t(w)) otherwise.
inline double relative_regression_loss(const Eigen::VectorXd& w, const Eigen::VectorXd& x, const Eigen::VectorXd& xp,
                                       bool y) {
  const double wx = w.dot(x), wxp = w.dot(xp);
  if (!(wx > 0.0) || !(wxp > 0.0))
    throw DomainError("relative regression: w.x and w.x' must be strictly positive");
  return std::log(wx + wxp) - std::log(y ? wx : wxp);
}

inline Eigen::VectorXd relative_regression_gradient(const Eigen::VectorXd& w, const Eigen::VectorXd& x,
                                                    const Eigen::VectorXd& xp, bool y) {
  const double wx = w.dot(x), wxp = w.dot(xp);
  if (!(wx > 0.0) || !(wxp > 0.0))
    throw DomainError("relative regression: w.x and w.x' must be strictly positive");
  Eigen::VectorXd g = (x + xp) / (wx + wxp);
  if (y)
    g -= x / wx;
  else
    g -= xp / wxp;
  return g;
}

inline Eigen::VectorXd relative_regression_step(const Eigen::VectorXd& w, const Eigen::VectorXd& x,
                                                const Eigen::VectorXd& xp, bool y, double eta,
                                                const FeasibleSet& feasible) {
  return project(feasible, w - eta * relative_regression_gradient(w, x, xp, y));
}

/// eta = sqrt(2 alpha / T), the step that balances the two regret terms.
inline double relative_regression_step_size(double alpha, std::size_t horizon) {
  return std::sqrt(2.0 * alpha / static_cast<double>(horizon));
}

/// sqrt(8 / (T alpha^3)): average-regret bound at the balanced step size.
inline double relative_regression_regret_bound(double alpha, std::size_t horizon) {
  return std::sqrt(8.0 / (static_cast<double>(horizon) * alpha * alpha * alpha));
}

/// (p - p*)^2 / (p q) - KL(p* || p): the chi-square-style bound minus the
/// Bernoulli KL divergence it dominates.
inline double kl_bound_gap(double p, double p_star) {
  if (!(p > 0.0 && p < 1.0) || !(p_star > 0.0 && p_star < 1.0))
    throw DomainError("kl_bound_gap: probabilities must lie in (0,1)");
  const double q = 1.0 - p, q_star = 1.0 - p_star;
  const double kl = p_star * std::log(p_star / p) + q_star * std::log(q_star / q);
  const double chi = (p - p_star) * (p - p_star) / (p * q);
  return chi - kl;
}

}  // namespace crowdkernel
