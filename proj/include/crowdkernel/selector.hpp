#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <unordered_set>
#include <vector>

#include "crowdkernel/embedding.hpp"
#include "crowdkernel/errors.hpp"
#include "crowdkernel/model.hpp"
#include "crowdkernel/types.hpp"

namespace crowdkernel {

/// Belief over which row of M an object sits at. The prior is uniform over
/// all rows; `head` is the object being located, absent when it is not part
/// of the database (a search target).
struct Posterior {
  std::optional<ObjectId> head;
  std::vector<double> weights;
};

struct CandidateQuery {
  std::vector<ObjectId> members;
  double expected_gain = 0.0;
};

inline double entropy(std::span<const double> weights) {
  double h = 0.0;
  for (double w : weights)
    if (w > 0.0) h -= w * std::log(w);
  return h;
}

inline Posterior uniform_posterior(std::size_t n, std::optional<ObjectId> head = std::nullopt) {
  return {head, std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

/// Probability that an object located at prior point x is rated closer to b than c.
inline double point_choice_probability(const Embedding& m, const ModelParams& params, ObjectId x, ObjectId b,
                                       ObjectId c) {
  const auto xr = m.row(x);
  if (params.head == Head::Relative) {
    const double d_b = (xr - m.row(b)).squaredNorm();
    const double d_c = (xr - m.row(c)).squaredNorm();
    return detail::relative_from_deltas(d_b, d_c, params.mu);
  }
  return detail::logistic_from_kernel(xr.dot(m.row(b)), xr.dot(m.row(c)));
}

namespace detail {

inline void normalize_log_weights(std::vector<double>& logw) {
  const double top = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(top)) throw DomainError("posterior: all weights vanished");
  double sum = 0.0;
  for (double& v : logw) {
    v = std::exp(v - top);
    sum += v;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) throw DomainError("posterior: all weights vanished");
  for (double& v : logw) v /= sum;
}

inline std::vector<double> log_of(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    out[i] = w[i] > 0.0 ? std::log(w[i]) : -std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace detail

/// tau(x) proportional to prod_i p^x(observed choice i), normalised in log space.
inline Posterior posterior(ObjectId head, std::span<const TripleResponse> responses, const Embedding& m,
                           const ModelParams& params) {
  params.validate();
  m.check_index(head);
  const std::size_t n = m.size();
  std::vector<double> logw(n, 0.0);
  for (const auto& r : responses) {
    if (r.triple.head != head) throw ArgumentError("posterior: response head differs from requested head");
    m.check_index(r.triple.left);
    m.check_index(r.triple.right);
    for (std::size_t x = 0; x < n; ++x)
      logw[x] += std::log(point_choice_probability(m, params, x, r.winner(), r.loser()));
  }
  detail::normalize_log_weights(logw);
  return {head, std::move(logw)};
}

/// One Bayes step: multiply by the likelihood of `r` and renormalise.
inline Posterior bayes_update(const Posterior& pos, const TripleResponse& r, const Embedding& m,
                              const ModelParams& params) {
  std::vector<double> logw = detail::log_of(pos.weights);
  for (std::size_t x = 0; x < logw.size(); ++x)
    logw[x] += std::log(point_choice_probability(m, params, x, r.winner(), r.loser()));
  detail::normalize_log_weights(logw);
  return {pos.head, std::move(logw)};
}

/// H(tau) - p H(tau_b) - (1 - p) H(tau_c): mutual information between the
/// answer to (b, c) and the location of the head, in nats.
inline double info_gain(const Posterior& pos, ObjectId b, ObjectId c, const Embedding& m, const ModelParams& params) {
  const std::size_t n = pos.weights.size();
  std::vector<double> tau_b(n), tau_c(n);
  double p = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    const double px = point_choice_probability(m, params, x, b, c);
    tau_b[x] = pos.weights[x] * px;
    tau_c[x] = pos.weights[x] * (1.0 - px);
    p += tau_b[x];
  }
  auto normalized_entropy = [](std::vector<double>& v, double mass) {
    if (mass <= 0.0) return 0.0;
    for (double& e : v) e /= mass;
    return entropy(v);
  };
  const double h = entropy(pos.weights);
  const double hb = normalized_entropy(tau_b, p);
  const double hc = normalized_entropy(tau_c, 1.0 - p);
  return h - p * hb - (1.0 - p) * hc;
}

namespace detail {

inline std::pair<ObjectId, ObjectId> pair_at(std::size_t index, std::span<const ObjectId> pool) {
  // Unrank index into the k-th unordered pair (i < j) of pool, row by row.
  const std::size_t m = pool.size();
  std::size_t i = 0;
  std::size_t row = m - 1;
  while (index >= row) {
    index -= row;
    ++i;
    --row;
  }
  return {pool[i], pool[i + 1 + index]};
}

inline std::vector<ObjectId> candidate_pool(std::size_t n, std::optional<ObjectId> head) {
  std::vector<ObjectId> pool;
  pool.reserve(n);
  for (ObjectId i = 0; i < n; ++i)
    if (!head || *head != i) pool.push_back(i);
  return pool;
}

}  // namespace detail

/// Best pair, by info_gain, among `sample_size` distinct random pairs drawn
/// without replacement (all pairs when sample_size covers them). Ties go to
/// the lexicographically smallest (b, c) with b < c.
inline CandidateQuery select_pair(const Posterior& pos, const Embedding& m, const ModelParams& params,
                                  std::size_t sample_size, std::uint64_t seed) {
  const std::size_t n = m.size();
  if (n < 3) throw ArgumentError("select_pair: need at least 3 objects");
  if (pos.weights.size() != n) throw ArgumentError("select_pair: posterior size differs from embedding");
  const std::vector<ObjectId> pool = detail::candidate_pool(n, pos.head);
  const std::size_t total = pool.size() * (pool.size() - 1) / 2;

  std::vector<std::size_t> picks;
  if (sample_size >= total) {
    picks.resize(total);
    for (std::size_t i = 0; i < total; ++i) picks[i] = i;
  } else {
    // Floyd's algorithm: sample_size distinct indices from [0, total).
    std::mt19937_64 rng(seed);
    std::unordered_set<std::size_t> chosen;
    for (std::size_t j = total - sample_size; j < total; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      const std::size_t t = pick(rng);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    picks.assign(chosen.begin(), chosen.end());
    std::sort(picks.begin(), picks.end());
  }

  CandidateQuery best;
  best.expected_gain = -std::numeric_limits<double>::infinity();
  for (std::size_t idx : picks) {
    const auto [b, c] = detail::pair_at(idx, pool);
    const double g = info_gain(pos, b, c, m, params);
    const bool better = g > best.expected_gain ||
                        (g == best.expected_gain && std::pair{b, c} < std::pair{best.members[0], best.members[1]});
    if (better) best = {{b, c}, g};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Multiway queries
//
// Choice among k members follows a Luce rule with weight 1/(mu + d(x, j))
// (relative head) or exp(K_xj) (logistic head). Members sitting at the same
// point share that point's weight equally. For k = 2 this is exactly the
// pairwise head.
// ---------------------------------------------------------------------------

inline std::vector<double> tuple_choice_probabilities(const Embedding& m, const ModelParams& params, ObjectId x,
                                                      std::span<const ObjectId> members) {
  const std::size_t k = members.size();
  std::vector<double> weight(k);
  const auto xr = m.row(x);
  for (std::size_t j = 0; j < k; ++j) {
    const auto mj = m.row(members[j]);
    weight[j] = params.head == Head::Relative ? 1.0 / (params.mu + (xr - mj).squaredNorm()) : xr.dot(mj);
  }
  if (params.head == Head::Logistic) {
    const double top = *std::max_element(weight.begin(), weight.end());
    for (double& w : weight) w = std::exp(w - top);
  }
  std::vector<double> prob(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t copies = 0;
    bool first = true;
    for (std::size_t l = 0; l < k; ++l) {
      if (m.row(members[l]) == m.row(members[j])) {
        ++copies;
        if (l < j) first = false;
      }
    }
    if (first) total += weight[j];
    prob[j] = weight[j] / static_cast<double>(copies);
  }
  for (double& p : prob) p /= total;
  return prob;
}

/// Mutual information between the chosen member and the head's location.
inline double tuple_info_gain(const Posterior& pos, std::span<const ObjectId> members, const Embedding& m,
                              const ModelParams& params) {
  const std::size_t n = pos.weights.size(), k = members.size();
  std::vector<std::vector<double>> joint(k, std::vector<double>(n));
  std::vector<double> marginal(k, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    if (pos.weights[x] <= 0.0) continue;
    const auto probs = tuple_choice_probabilities(m, params, x, members);
    for (std::size_t j = 0; j < k; ++j) {
      joint[j][x] = pos.weights[x] * probs[j];
      marginal[j] += joint[j][x];
    }
  }
  double gain = entropy(pos.weights);
  for (std::size_t j = 0; j < k; ++j) {
    if (marginal[j] <= 0.0) continue;
    for (double& v : joint[j]) v /= marginal[j];
    gain -= marginal[j] * entropy(joint[j]);
  }
  return gain;
}

/// Greedy k-tuple: the best sampled pair, then repeatedly the member whose
/// addition gives the highest k-way gain (ties to the smaller id).
inline CandidateQuery select_tuple(const Posterior& pos, const Embedding& m, const ModelParams& params, std::size_t k,
                                   std::size_t sample_size, std::uint64_t seed) {
  const std::size_t n = m.size();
  const std::size_t available = pos.head ? n - 1 : n;
  if (k < 2 || k > available) throw ArgumentError("select_tuple: need 2 <= k <= number of candidates");
  CandidateQuery q = select_pair(pos, m, params, sample_size, seed);
  while (q.members.size() < k) {
    std::optional<ObjectId> best;
    double best_gain = -std::numeric_limits<double>::infinity();
    std::vector<ObjectId> trial = q.members;
    trial.push_back(0);
    for (ObjectId cand = 0; cand < n; ++cand) {
      if (pos.head && *pos.head == cand) continue;
      if (std::find(q.members.begin(), q.members.end(), cand) != q.members.end()) continue;
      trial.back() = cand;
      const double g = tuple_info_gain(pos, trial, m, params);
      if (g > best_gain) {
        best_gain = g;
        best = cand;
      }
    }
    q.members.push_back(*best);
    q.expected_gain = best_gain;
  }
  return q;
}

/// Bayes step after member `chosen` of `members` was picked.
inline Posterior update_posterior_tuple(const Posterior& pos, std::span<const ObjectId> members, std::size_t chosen,
                                        const Embedding& m, const ModelParams& params) {
  if (chosen >= members.size()) throw ArgumentError("update_posterior_tuple: chosen index out of range");
  std::vector<double> logw = detail::log_of(pos.weights);
  for (std::size_t x = 0; x < logw.size(); ++x)
    logw[x] += std::log(tuple_choice_probabilities(m, params, x, members)[chosen]);
  detail::normalize_log_weights(logw);
  return {pos.head, std::move(logw)};
}

/// Object ids ordered by decreasing posterior weight, ties by id.
inline std::vector<ObjectId> ranking(const Posterior& pos) {
  std::vector<ObjectId> order(pos.weights.size());
  for (ObjectId i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](ObjectId a, ObjectId b) { return pos.weights[a] > pos.weights[b]; });
  return order;
}

}  // namespace crowdkernel
