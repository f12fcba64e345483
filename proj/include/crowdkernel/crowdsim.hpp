#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "crowdkernel/embedding.hpp"
#include "crowdkernel/errors.hpp"
#include "crowdkernel/model.hpp"
#include "crowdkernel/types.hpp"

namespace crowdkernel {

struct SimWorker {
  /// Probability of answering from the ground-truth model; otherwise a fair coin.
  double reliability = 1.0;
};

/// Simulated crowd answering triples from a planted embedding.
///
/// Answers are a pure function of (seed, worker, per-worker draw counter);
/// the counters are the only mutable state and are guarded by a mutex.
class SimCrowd {
 public:
  SimCrowd(Embedding truth, double mu_star, std::vector<SimWorker> workers, std::uint64_t seed)
      : truth_(std::move(truth)), mu_star_(mu_star), workers_(std::move(workers)), seed_(seed),
        counters_(workers_.size(), 0), mutex_(std::make_unique<std::mutex>()) {
    detail::check_mu(mu_star_);
    if (workers_.empty()) throw ArgumentError("SimCrowd: need at least one worker");
    for (const auto& w : workers_)
      if (!(w.reliability >= 0.0 && w.reliability <= 1.0))
        throw ParameterError("SimCrowd: reliability must lie in [0,1]");
  }

  const Embedding& truth() const { return truth_; }
  double mu_star() const { return mu_star_; }
  std::size_t size() const { return truth_.size(); }
  const std::vector<SimWorker>& workers() const { return workers_; }
  std::uint64_t seed() const { return seed_; }

  void set_reliability(double r) {
    for (auto& w : workers_) w.reliability = r;
  }

  /// Ground-truth probability of a Left answer.
  double model_probability(const Triple& t) const { return prob_relative(truth_, mu_star_, t); }

  /// Probability of a Left answer for a worker, after mixing in coin flips.
  double answer_probability(const Triple& t, std::size_t worker) const {
    const double r = workers_.at(worker).reliability;
    return r * model_probability(t) + (1.0 - r) * 0.5;
  }

  /// Draws one answer. Identical (seed, worker, counter) give identical draws.
  TripleResponse answer(const Triple& t, std::size_t worker) {
    if (worker >= workers_.size()) throw ArgumentError("SimCrowd: unknown worker index");
    const double p = model_probability(t);
    std::uint64_t counter = 0;
    {
      std::lock_guard lock(*mutex_);
      counter = counters_[worker]++;
    }
    return draw(t, worker, counter, p);
  }

  /// Replays the draw for a specific counter value without advancing state.
  TripleResponse answer_at(const Triple& t, std::size_t worker, std::uint64_t counter) const {
    if (worker >= workers_.size()) throw ArgumentError("SimCrowd: unknown worker index");
    return draw(t, worker, counter, model_probability(t));
  }

  std::uint64_t draws(std::size_t worker) const {
    std::lock_guard lock(*mutex_);
    return counters_.at(worker);
  }

 private:
  TripleResponse draw(const Triple& t, std::size_t worker, std::uint64_t counter, double p) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(worker), static_cast<std::uint32_t>(counter),
                      static_cast<std::uint32_t>(counter >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const bool from_model = u(rng) < workers_[worker].reliability;
    const double p_left = from_model ? p : 0.5;
    TripleResponse r;
    r.triple = t;
    r.choice = u(rng) < p_left ? Choice::Left : Choice::Right;
    r.worker = "sim-" + std::to_string(worker);
    return r;
  }

  Embedding truth_;
  double mu_star_;
  std::vector<SimWorker> workers_;
  std::uint64_t seed_;
  std::vector<std::uint64_t> counters_;
  std::unique_ptr<std::mutex> mutex_;
};

// ---------------------------------------------------------------------------
// Synthetic ground truth
// ---------------------------------------------------------------------------

enum class SyntheticKind { TreeLeaves, UniformBall, Clustered };

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::TreeLeaves: return "tree";
    case SyntheticKind::UniformBall: return "ball";
    case SyntheticKind::Clustered: return "clusters";
  }
  return "tree";
}

inline SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "tree") return SyntheticKind::TreeLeaves;
  if (s == "ball") return SyntheticKind::UniformBall;
  if (s == "clusters") return SyntheticKind::Clustered;
  throw ParameterError("unknown synthetic kind '" + s + "'");
}

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::TreeLeaves;
  std::size_t n = 64;
  /// Leaf count for TreeLeaves, cluster count for Clustered.
  std::size_t leaves = 8;
  /// Dimension for UniformBall and Clustered (TreeLeaves uses one axis per edge).
  std::size_t dims = 3;
  /// Length of the tree edges into leaves (a squared distance), or
  /// cluster-centre box half-width.
  double scale = 1.0;
  /// Tree edge length multiplier per level toward the root.
  double edge_growth = 2.0;
  /// Standard deviation of the per-object Gaussian jitter.
  double spread = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 3) throw ParameterError("SyntheticSpec: n must be >= 3");
    if (kind != SyntheticKind::UniformBall && (leaves < 1 || leaves > n))
      throw ParameterError("SyntheticSpec: need 1 <= leaves <= n");
    if (dims < 1) throw ParameterError("SyntheticSpec: dims must be >= 1");
    if (!(scale > 0.0) || !(spread >= 0.0)) throw ParameterError("SyntheticSpec: bad scale/spread");
    if (!(edge_growth > 0.0)) throw ParameterError("SyntheticSpec: edge_growth must be > 0");
  }
};

struct SyntheticData {
  Embedding truth;
  /// Leaf or cluster index per object (0 for UniformBall).
  std::vector<int> group;
  /// Leaf / cluster centres, one row each (empty for UniformBall).
  Eigen::MatrixXd centres;
};

/// Leaf centres of a balanced binary tree with `leaves` leaves: one coordinate
/// per edge, sqrt(length) on the edges of the root path, so squared Euclidean
/// distance equals tree path length. Edges into leaves have length `edge`; each
/// level closer to the root multiplies the length by `growth`.
inline Eigen::MatrixXd tree_leaf_centres(std::size_t leaves, double edge, double growth = 1.0) {
  if (leaves < 1) throw ParameterError("tree_leaf_centres: need at least one leaf");
  // Split [lo, hi) recursively; every child subtree gets a fresh edge axis.
  std::vector<std::vector<int>> paths(leaves);
  std::vector<double> length;
  int next_edge = 0;
  auto build = [&](auto&& self, std::size_t lo, std::size_t hi, std::vector<int>& path) -> void {
    if (hi - lo == 1) {
      paths[lo] = path;
      return;
    }
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    for (auto [a, b] : {std::pair{lo, mid}, std::pair{mid, hi}}) {
      // Subtree height: 0 for a leaf, ceil(log2(size)) otherwise.
      int height = 0;
      while ((std::size_t{1} << height) < b - a) ++height;
      length.push_back(edge * std::pow(growth, height));
      path.push_back(next_edge++);
      self(self, a, b, path);
      path.pop_back();
    }
  };
  std::vector<int> path;
  build(build, 0, leaves, path);
  const Eigen::Index dims = std::max(1, next_edge);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(leaves), dims);
  for (std::size_t l = 0; l < leaves; ++l)
    for (int e : paths[l]) c(static_cast<Eigen::Index>(l), e) = std::sqrt(length[static_cast<std::size_t>(e)]);
  return c;
}

inline SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 0x5e11u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(spec.n);

  SyntheticData out;
  out.group.assign(spec.n, 0);
  Eigen::MatrixXd coords;

  switch (spec.kind) {
    case SyntheticKind::TreeLeaves: {
      out.centres = tree_leaf_centres(spec.leaves, spec.scale, spec.edge_growth);
      std::uniform_int_distribution<std::size_t> leaf(0, spec.leaves - 1);
      coords.resize(n, out.centres.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t l = leaf(rng);
        out.group[static_cast<std::size_t>(i)] = static_cast<int>(l);
        coords.row(i) = out.centres.row(static_cast<Eigen::Index>(l));
        for (Eigen::Index j = 0; j < coords.cols(); ++j) coords(i, j) += spec.spread * gauss(rng);
      }
      break;
    }
    case SyntheticKind::UniformBall: {
      const auto d = static_cast<Eigen::Index>(spec.dims);
      coords.resize(n, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd v(d);
        for (Eigen::Index j = 0; j < d; ++j) v(j) = gauss(rng);
        const double radius = spec.scale * std::pow(unit(rng), 1.0 / static_cast<double>(d));
        coords.row(i) = (v.normalized() * radius).transpose();
      }
      break;
    }
    case SyntheticKind::Clustered: {
      const auto d = static_cast<Eigen::Index>(spec.dims);
      std::uniform_real_distribution<double> box(-spec.scale, spec.scale);
      out.centres.resize(static_cast<Eigen::Index>(spec.leaves), d);
      for (Eigen::Index c = 0; c < out.centres.rows(); ++c)
        for (Eigen::Index j = 0; j < d; ++j) out.centres(c, j) = box(rng);
      coords.resize(n, d);
      // Round-robin assignment keeps clusters balanced.
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(static_cast<std::size_t>(i) % spec.leaves);
        out.group[static_cast<std::size_t>(i)] = static_cast<int>(c);
        for (Eigen::Index j = 0; j < d; ++j) coords(i, j) = out.centres(c, j) + spec.spread * gauss(rng);
      }
      break;
    }
  }
  out.truth = Embedding(std::move(coords));
  return out;
}

inline std::vector<SimWorker> uniform_workers(std::size_t count, double reliability) {
  return std::vector<SimWorker>(count, SimWorker{reliability});
}

inline Triple random_triple(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  Triple t;
  t.head = pick(rng);
  do t.left = pick(rng); while (t.left == t.head);
  do t.right = pick(rng); while (t.right == t.head || t.right == t.left);
  return t;
}

inline Triple random_triple_with_head(ObjectId head, std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  Triple t{head, 0, 0};
  do t.left = pick(rng); while (t.left == head);
  do t.right = pick(rng); while (t.right == head || t.right == t.left);
  return t;
}

// ---------------------------------------------------------------------------
// Agreement
// ---------------------------------------------------------------------------

/// Probability that two independent answers with Left-probabilities q1 and q2 agree.
inline double pair_agreement(double q1, double q2) { return q1 * q2 + (1.0 - q1) * (1.0 - q2); }

struct AgreementEstimate {
  double empirical = 0.0;
  double analytic = 0.0;
  std::size_t trials = 0;
};

/// Two independent answers from random workers per draw; `analytic` averages
/// q^2 + (1-q)^2 of the per-worker answer probabilities over the same triples.
inline AgreementEstimate agreement_rate(SimCrowd& sim, std::size_t num_triples, std::size_t draws_per_triple,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_worker(0, sim.workers().size() - 1);
  std::size_t agree = 0, trials = 0;
  double analytic = 0.0;
  for (std::size_t i = 0; i < num_triples; ++i) {
    const Triple t = random_triple(sim.size(), rng);
    for (std::size_t k = 0; k < draws_per_triple; ++k) {
      const std::size_t w1 = pick_worker(rng), w2 = pick_worker(rng);
      const double q1 = sim.answer_probability(t, w1), q2 = sim.answer_probability(t, w2);
      analytic += pair_agreement(q1, q2);
      agree += sim.answer(t, w1).choice == sim.answer(t, w2).choice ? 1 : 0;
      ++trials;
    }
  }
  if (trials == 0) return {};
  return {static_cast<double>(agree) / static_cast<double>(trials), analytic / static_cast<double>(trials), trials};
}

/// Analytic agreement of a homogeneous crowd averaged over `num_triples`
/// random triples (the triples depend only on `seed`).
inline double analytic_agreement(const SimCrowd& sim, double reliability, std::size_t num_triples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < num_triples; ++i) {
    const Triple t = random_triple(sim.size(), rng);
    const double q = reliability * sim.model_probability(t) + (1.0 - reliability) * 0.5;
    total += pair_agreement(q, q);
  }
  return total / static_cast<double>(num_triples);
}

/// Bisection on the shared reliability so the analytic agreement hits `target`.
/// Returns the reliability (clamped to [0,1] when the target is unreachable).
inline double calibrate_reliability(const SimCrowd& sim, double target, std::size_t num_triples = 4000,
                                    std::uint64_t seed = 7) {
  double lo = 0.0, hi = 1.0;
  if (analytic_agreement(sim, hi, num_triples, seed) <= target) return 1.0;
  if (analytic_agreement(sim, lo, num_triples, seed) >= target) return 0.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (analytic_agreement(sim, mid, num_triples, seed) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Gold-standard triples
// ---------------------------------------------------------------------------

struct GoldTriple {
  Triple triple;
  Choice expected = Choice::Left;
};

struct GoldSet {
  std::vector<GoldTriple> triples;
  bool shortage = false;
};

/// Random distinct triples whose model probability for one answer is at
/// least `threshold`. Scans up to `max_attempts` candidates (default
/// 500 * count) and flags a shortage when fewer qualify.
inline GoldSet make_gold(const Embedding& model, double mu, std::size_t count, double threshold, std::uint64_t seed,
                         std::size_t max_attempts = 0) {
  detail::check_mu(mu);
  if (model.size() < 3) throw ArgumentError("make_gold: need at least 3 objects");
  if (max_attempts == 0) max_attempts = 500 * std::max<std::size_t>(count, 1);
  std::mt19937_64 rng(seed);
  std::set<std::tuple<ObjectId, ObjectId, ObjectId>> seen;
  GoldSet out;
  for (std::size_t attempt = 0; attempt < max_attempts && out.triples.size() < count; ++attempt) {
    Triple t = random_triple(model.size(), rng);
    const auto key = std::tuple{t.head, std::min(t.left, t.right), std::max(t.left, t.right)};
    if (seen.contains(key)) continue;
    const double p = prob_relative(model, mu, t);
    if (p >= threshold) {
      seen.insert(key);
      out.triples.push_back({t, Choice::Left});
    } else if (1.0 - p >= threshold) {
      seen.insert(key);
      out.triples.push_back({t, Choice::Right});
    }
  }
  out.shortage = out.triples.size() < count;
  return out;
}

}  // namespace crowdkernel
