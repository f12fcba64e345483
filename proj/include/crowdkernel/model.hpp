#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "crowdkernel/embedding.hpp"
#include "crowdkernel/errors.hpp"
#include "crowdkernel/types.hpp"

namespace crowdkernel {

/// Probability heads for triple responses.
///  Relative: p = (mu + d_ac) / (2 mu + d_ab + d_ac), scale-aware distance ratio.
///  Logistic: p = 1 / (1 + exp(K_ac - K_ab)), convex in K.
enum class Head { Relative, Logistic };

inline std::string to_string(Head h) { return h == Head::Relative ? "relative" : "logistic"; }

inline Head head_from_string(const std::string& s) {
  if (s == "relative") return Head::Relative;
  if (s == "logistic") return Head::Logistic;
  throw ParameterError("unknown model head '" + s + "'");
}

struct ModelParams {
  double mu = 0.05;
  Head head = Head::Relative;
  int dims = 3;

  void validate() const {
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ParameterError("mu must be a finite nonnegative number");
    if (head == Head::Relative && mu <= 0.0) throw ParameterError("relative head requires mu > 0");
    if (dims < 1) throw ParameterError("dims must be >= 1");
  }
};

namespace detail {

/// Relative head from precomputed distances; mu is unchecked so tests can probe mu = 0.
inline double relative_from_deltas(double d_ab, double d_ac, double mu) {
  return (mu + d_ac) / (2.0 * mu + d_ab + d_ac);
}

inline double logistic_from_kernel(double k_ab, double k_ac) {
  return 1.0 / (1.0 + std::exp(k_ac - k_ab));
}

inline void check_triple(const Triple& t, std::size_t n) {
  t.validate();
  if (t.head >= n || t.left >= n || t.right >= n)
    throw std::out_of_range("triple references object outside [0," + std::to_string(n) + ")");
}

inline void check_mu(double mu) {
  if (!(mu > 0.0)) throw ParameterError("relative head requires mu > 0");
}

}  // namespace detail

inline double delta(const Embedding& m, ObjectId a, ObjectId b) {
  m.check_index(a);
  m.check_index(b);
  return (m.row(a) - m.row(b)).squaredNorm();
}

/// Probability that the crowd rates t.head more similar to t.left than to t.right.
inline double prob_relative(const Embedding& m, double mu, const Triple& t) {
  detail::check_mu(mu);
  detail::check_triple(t, m.size());
  return detail::relative_from_deltas(delta(m, t.head, t.left), delta(m, t.head, t.right), mu);
}

inline double prob_relative(const KernelMatrix& k, double mu, const Triple& t) {
  detail::check_mu(mu);
  detail::check_triple(t, k.size());
  return detail::relative_from_deltas(k.distance2(t.head, t.left), k.distance2(t.head, t.right), mu);
}

inline double prob_logistic(const KernelMatrix& k, const Triple& t) {
  detail::check_triple(t, k.size());
  return detail::logistic_from_kernel(k(t.head, t.left), k(t.head, t.right));
}

inline double prob_logistic(const Embedding& m, const Triple& t) {
  detail::check_triple(t, m.size());
  return detail::logistic_from_kernel(m.row(t.head).dot(m.row(t.left)), m.row(t.head).dot(m.row(t.right)));
}

/// Model probability of the choice actually observed in `r`.
inline double prob_observed(const TripleResponse& r, const Embedding& m, const ModelParams& params) {
  const double p_left = params.head == Head::Relative ? prob_relative(m, params.mu, r.triple)
                                                      : prob_logistic(m, r.triple);
  return r.choice == Choice::Left ? p_left : 1.0 - p_left;
}

inline double prob_observed(const TripleResponse& r, const KernelMatrix& k, const ModelParams& params) {
  const double p_left = params.head == Head::Relative ? prob_relative(k, params.mu, r.triple)
                                                      : prob_logistic(k, r.triple);
  return r.choice == Choice::Left ? p_left : 1.0 - p_left;
}

namespace detail {

// -log p of the observed choice, evaluated directly in winner/loser form
// rather than as log(1 - p).
inline double relative_nll(double d_win, double d_lose, double mu) {
  return std::log(2.0 * mu + d_win + d_lose) - std::log(mu + d_lose);
}

inline double logistic_nll(double k_win, double k_lose) {
  // log(1 + exp(k_lose - k_win)), overflow-safe
  const double z = k_lose - k_win;
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

template <class Model>
double mean_nll(std::span<const TripleResponse> responses, const Model& model, const ModelParams& params) {
  if (responses.empty()) throw ArgumentError("log_loss: empty response list");
  params.validate();
  double total = 0.0;
  for (const auto& r : responses) {
    detail::check_triple(r.triple, model.size());
    const ObjectId a = r.triple.head, w = r.winner(), l = r.loser();
    if (params.head == Head::Relative) {
      if constexpr (std::is_same_v<Model, Embedding>)
        total += relative_nll(delta(model, a, w), delta(model, a, l), params.mu);
      else
        total += relative_nll(model.distance2(a, w), model.distance2(a, l), params.mu);
    } else {
      if constexpr (std::is_same_v<Model, Embedding>)
        total += logistic_nll(model.row(a).dot(model.row(w)), model.row(a).dot(model.row(l)));
      else
        total += logistic_nll(model(a, w), model(a, l));
    }
  }
  return total / static_cast<double>(responses.size());
}

}  // namespace detail

/// Empirical log-loss (1/m) sum log 1/p_i, natural log.
inline double log_loss(std::span<const TripleResponse> responses, const Embedding& m, const ModelParams& params) {
  return detail::mean_nll(responses, m, params);
}

inline double log_loss(std::span<const TripleResponse> responses, const KernelMatrix& k, const ModelParams& params) {
  return detail::mean_nll(responses, k, params);
}

/// Gradient of log_loss with respect to every entry of M (relative head), or
/// with respect to M through K = M M^T (logistic head).
inline Eigen::MatrixXd grad_embedding(std::span<const TripleResponse> responses, const Embedding& m,
                                      const ModelParams& params) {
  params.validate();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m.coords().rows(), m.coords().cols());
  if (responses.empty()) return g;
  const double inv_m = 1.0 / static_cast<double>(responses.size());
  for (const auto& r : responses) {
    detail::check_triple(r.triple, m.size());
    const auto a = static_cast<Eigen::Index>(r.triple.head);
    const auto w = static_cast<Eigen::Index>(r.winner());
    const auto l = static_cast<Eigen::Index>(r.loser());
    const auto& x = m.coords();
    if (params.head == Head::Relative) {
      const Eigen::RowVectorXd diff_w = x.row(a) - x.row(w);
      const Eigen::RowVectorXd diff_l = x.row(a) - x.row(l);
      const double d_w = diff_w.squaredNorm();
      const double d_l = diff_l.squaredNorm();
      const double denom = 2.0 * params.mu + d_w + d_l;
      const double dw = 1.0 / denom;                          // d loss / d delta_aw
      const double dl = 1.0 / denom - 1.0 / (params.mu + d_l); // d loss / d delta_al
      g.row(a) += inv_m * 2.0 * (dw * diff_w + dl * diff_l);
      g.row(w) -= inv_m * 2.0 * dw * diff_w;
      g.row(l) -= inv_m * 2.0 * dl * diff_l;
    } else {
      const double z = x.row(a).dot(x.row(l)) - x.row(a).dot(x.row(w));
      const double s = detail::sigmoid(z);  // d loss / d z
      g.row(a) += inv_m * s * (x.row(l) - x.row(w));
      g.row(l) += inv_m * s * x.row(a);
      g.row(w) -= inv_m * s * x.row(a);
    }
  }
  return g;
}

/// Gradient of log_loss with respect to the entries of K.
///
/// The loss is read as a function of all n^2 entries through the symmetric
/// forms d_ab = K_aa + K_bb - K_ab - K_ba and (K_ab + K_ba) / 2, so the
/// result is exactly symmetric; a perturbation of the symmetric pair
/// (ij, ji) changes the loss by G_ij + G_ji.
inline Eigen::MatrixXd grad_kernel(std::span<const TripleResponse> responses, const KernelMatrix& k,
                                   const ModelParams& params) {
  params.validate();
  const auto n = static_cast<Eigen::Index>(k.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  if (responses.empty()) return g;
  const double inv_m = 1.0 / static_cast<double>(responses.size());
  for (const auto& r : responses) {
    detail::check_triple(r.triple, k.size());
    const auto a = static_cast<Eigen::Index>(r.triple.head);
    const auto w = static_cast<Eigen::Index>(r.winner());
    const auto l = static_cast<Eigen::Index>(r.loser());
    if (params.head == Head::Relative) {
      const double d_w = k.distance2(r.triple.head, r.winner());
      const double d_l = k.distance2(r.triple.head, r.loser());
      const double denom = 2.0 * params.mu + d_w + d_l;
      const double dw = inv_m / denom;
      const double dl = inv_m * (1.0 / denom - 1.0 / (params.mu + d_l));
      g(a, a) += dw + dl;
      g(w, w) += dw;
      g(l, l) += dl;
      g(a, w) -= dw;
      g(w, a) -= dw;
      g(a, l) -= dl;
      g(l, a) -= dl;
    } else {
      const double s = inv_m * detail::sigmoid(k.entries()(a, l) - k.entries()(a, w));
      g(a, l) += 0.5 * s;
      g(l, a) += 0.5 * s;
      g(a, w) -= 0.5 * s;
      g(w, a) -= 0.5 * s;
    }
  }
  return g;
}

}  // namespace crowdkernel
