#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "crowdkernel/crowdsim.hpp"
#include "crowdkernel/embedding.hpp"
#include "crowdkernel/online.hpp"
#include "crowdkernel/pipeline.hpp"
#include "crowdkernel/selector.hpp"

namespace crowdkernel {

// ---------------------------------------------------------------------------
// 20 Questions
// ---------------------------------------------------------------------------

enum class QuestionMode { Random, Adaptive };

inline std::string to_string(QuestionMode q) { return q == QuestionMode::Adaptive ? "adaptive" : "random"; }

inline QuestionMode question_mode_from_string(const std::string& s) {
  if (s == "adaptive") return QuestionMode::Adaptive;
  if (s == "random") return QuestionMode::Random;
  throw ParameterError("unknown question mode '" + s + "'");
}

/// Evaluator side of the game: answers "is `target` more like b or c?".
using TargetOracle = std::function<Choice(ObjectId target, ObjectId b, ObjectId c)>;

/// Answers from a simulated crowd. A member equal to the target always wins.
inline TargetOracle crowd_target_oracle(SimCrowd& sim) {
  auto next = std::make_shared<std::size_t>(0);
  return [&sim, next](ObjectId target, ObjectId b, ObjectId c) {
    if (b == target) return Choice::Left;
    if (c == target) return Choice::Right;
    const std::size_t w = (*next)++ % sim.workers().size();
    return sim.answer(Triple{target, b, c}, w).choice;
  };
}

/// Always picks the strictly closer member under `truth` (ties: Left).
inline TargetOracle noiseless_target_oracle(Embedding truth) {
  return [truth = std::move(truth)](ObjectId target, ObjectId b, ObjectId c) {
    const double d_b = (truth.row(target) - truth.row(b)).squaredNorm();
    const double d_c = (truth.row(target) - truth.row(c)).squaredNorm();
    return d_b <= d_c ? Choice::Left : Choice::Right;
  };
}

struct TwentyQResult {
  std::vector<std::size_t> ranks;
  double mean_log2_rank = 0.0;
  QuestionMode mode = QuestionMode::Adaptive;
  int questions = 20;
};

/// Mean of log2(R) for R uniform on {1..n}: the no-information baseline.
inline double uniform_log2_rank(std::size_t n) {
  double s = 0.0;
  for (std::size_t r = 1; r <= n; ++r) s += std::log2(static_cast<double>(r));
  return s / static_cast<double>(n);
}

/// Plays one game per entry of `targets`: `questions` triples with the
/// hidden target as head, answered by `oracle`; the guesser keeps a
/// posterior over the rows of `model` and finally ranks every object by the
/// weight of its own row (ties by id). Reports ranks and mean log2 rank.
inline TwentyQResult twenty_questions(const Embedding& model, const ModelParams& params, const TargetOracle& oracle,
                                      std::span<const ObjectId> targets, QuestionMode mode, int questions,
                                      std::size_t sample_size, std::uint64_t seed) {
  params.validate();
  const std::size_t n = model.size();
  if (n < 3) throw ArgumentError("twenty_questions: need at least 3 objects");
  if (questions < 0) throw ArgumentError("twenty_questions: negative question count");
  TwentyQResult out;
  out.mode = mode;
  out.questions = questions;
  double total = 0.0;
  for (std::size_t g = 0; g < targets.size(); ++g) {
    const ObjectId target = targets[g];
    if (target >= n) throw ArgumentError("twenty_questions: target " + std::to_string(target) + " not in object set");
    const std::uint64_t game_seed = derive_seed(seed, {g, target});
    std::mt19937_64 rng(game_seed);
    std::uniform_int_distribution<ObjectId> pick(0, n - 1);
    Posterior pos = uniform_posterior(n);
    for (int q = 0; q < questions; ++q) {
      ObjectId b = 0, c = 0;
      if (mode == QuestionMode::Random) {
        b = pick(rng);
        do c = pick(rng); while (c == b);
      } else {
        const CandidateQuery cq = select_pair(pos, model, params, sample_size, derive_seed(game_seed, {static_cast<std::uint64_t>(q)}));
        b = cq.members[0];
        c = cq.members[1];
      }
      TripleResponse r;
      r.triple = Triple{target, b, c};
      r.choice = oracle(target, b, c);
      pos = bayes_update(pos, r, model, params);
    }
    const std::vector<ObjectId> order = ranking(pos);
    const auto where = std::find(order.begin(), order.end(), target);
    const std::size_t rank = static_cast<std::size_t>(where - order.begin()) + 1;
    out.ranks.push_back(rank);
    total += std::log2(static_cast<double>(rank));
  }
  out.mean_log2_rank = targets.empty() ? 0.0 : total / static_cast<double>(targets.size());
  return out;
}

// ---------------------------------------------------------------------------
// Acquisition curves
// ---------------------------------------------------------------------------

struct CurveConfig {
  SyntheticSpec synthetic;
  double mu_star = 0.05;
  /// Crowd noise: shared reliability is calibrated to this analytic
  /// agreement rate. Values <= 0 mean fully reliable workers.
  double target_agreement = 0.65;
  std::size_t workers = 5;
  PipelineConfig pipeline;
  /// Triples per object at which to evaluate; each must be >= seed_triples.
  std::vector<std::size_t> budgets{10, 16, 22, 28, 35};
  std::vector<Acquisition> acquisitions{Acquisition::Adaptive, Acquisition::Random};
  std::vector<QuestionMode> question_modes{QuestionMode::Random, QuestionMode::Adaptive};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int questions = 20;
  /// Games per object in each evaluation.
  std::size_t games_per_target = 16;
};

struct CurvePoint {
  std::size_t budget = 0;
  Acquisition acquisition = Acquisition::Adaptive;
  QuestionMode questions = QuestionMode::Adaptive;
  std::uint64_t seed = 0;
  double mean_log2_rank = 0.0;
};

/// Simulated crowd for one curve seed, with reliability calibrated to the
/// configured agreement.
inline SimCrowd make_curve_crowd(const CurveConfig& cfg, const Embedding& truth, std::uint64_t seed) {
  SimCrowd sim(truth, cfg.mu_star, uniform_workers(cfg.workers, 1.0), seed);
  if (cfg.target_agreement > 0.0) sim.set_reliability(calibrate_reliability(sim, cfg.target_agreement));
  return sim;
}

/// Runs the acquisition loop per (seed, acquisition mode) and scores the fit
/// at every budget with 20 Questions in each question mode. Seed rounds,
/// fit seeds and evaluation draws depend only on (seed, budget), so all
/// acquisition modes coincide at budget = seed_triples.
inline std::vector<CurvePoint> acquisition_curve(const CurveConfig& cfg) {
  std::vector<std::size_t> budgets = cfg.budgets;
  std::sort(budgets.begin(), budgets.end());
  const std::size_t r0 = cfg.pipeline.seed_triples;
  if (budgets.empty() || budgets.front() < r0) throw ArgumentError("acquisition_curve: budgets must be >= seed_triples");

  std::vector<CurvePoint> out;
  for (const std::uint64_t seed : cfg.seeds) {
    SyntheticSpec spec = cfg.synthetic;
    spec.seed = derive_seed(seed, {0x7ee5u});
    const SyntheticData data = generate(spec);
    const std::size_t n = data.truth.size();
    std::vector<ObjectId> targets;
    for (std::size_t g = 0; g < cfg.games_per_target; ++g)
      for (ObjectId i = 0; i < n; ++i) targets.push_back(i);

    for (const Acquisition acq : cfg.acquisitions) {
      SimCrowd crowd = make_curve_crowd(cfg, data.truth, derive_seed(seed, {0xc40du}));
      SimOracle oracle(crowd);
      PipelineConfig pc = cfg.pipeline;
      pc.seed = derive_seed(seed, {0x919eu});
      pc.acquisition = acq;
      pc.rounds = budgets.back() - r0;
      Pipeline pipe(n, pc);

      auto evaluate = [&](std::size_t budget) {
        const FitResult& fit = *pipe.current_fit();
        for (const QuestionMode qm : cfg.question_modes) {
          SimCrowd evaluator = make_curve_crowd(cfg, data.truth, derive_seed(seed, {0xe7a1u, budget}));
          const TargetOracle answer = crowd_target_oracle(evaluator);
          const auto res = twenty_questions(fit.embedding, pc.fit.model(), answer, targets, qm, cfg.questions,
                                            pc.sample_size, derive_seed(seed, {0x20u, budget, static_cast<std::uint64_t>(qm)}));
          out.push_back({budget, acq, qm, seed, res.mean_log2_rank});
        }
      };

      pipe.start();
      std::size_t next_budget = 0;
      while (!pipe.done()) {
        for (const Triple& t : std::vector<Triple>(pipe.outstanding())) {
          auto r = oracle.ask(t);
          pipe.record(std::move(*r));
        }
        pipe.finish_round();
        const std::size_t have = r0 + static_cast<std::size_t>(pipe.done() ? pipe.round() : pipe.round() - 1);
        while (next_budget < budgets.size() && budgets[next_budget] == have) evaluate(budgets[next_budget++]);
      }
    }
  }
  return out;
}

/// Mean over seeds of one (budget, acquisition, question-mode) cell.
inline double curve_mean(std::span<const CurvePoint> points, std::size_t budget, Acquisition acq, QuestionMode qm) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& p : points)
    if (p.budget == budget && p.acquisition == acq && p.questions == qm) {
      s += p.mean_log2_rank;
      ++k;
    }
  return k ? s / static_cast<double>(k) : std::nan("");
}

inline std::string curve_csv(std::span<const CurvePoint> points) {
  std::ostringstream os;
  os << "budget,mode,questions,seed,mean_log2_rank\n";
  os.precision(17);
  for (const auto& p : points)
    os << p.budget << ',' << to_string(p.acquisition) << ',' << to_string(p.questions) << ',' << p.seed << ','
       << p.mean_log2_rank << '\n';
  return os.str();
}

/// Static SVG line chart, one panel per question mode, one line per
/// acquisition mode (seed means).
inline std::string curve_svg(std::span<const CurvePoint> points) {
  std::vector<std::size_t> budgets;
  double ymax = 0.0;
  for (const auto& p : points) {
    if (std::find(budgets.begin(), budgets.end(), p.budget) == budgets.end()) budgets.push_back(p.budget);
    ymax = std::max(ymax, p.mean_log2_rank);
  }
  std::sort(budgets.begin(), budgets.end());
  ymax = std::max(1.0, std::ceil(ymax));
  const double w = 360, h = 260, pad = 40;
  const double xmin = budgets.empty() ? 0.0 : static_cast<double>(budgets.front());
  const double xmax = budgets.empty() ? 1.0 : std::max(xmin + 1.0, static_cast<double>(budgets.back()));
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * w << "\" height=\"" << h << "\">\n";
  const QuestionMode panels[] = {QuestionMode::Random, QuestionMode::Adaptive};
  for (int panel = 0; panel < 2; ++panel) {
    const double ox = panel * w;
    auto px = [&](double x) { return ox + pad + (x - xmin) / (xmax - xmin) * (w - 2 * pad); };
    auto py = [&](double y) { return h - pad - y / ymax * (h - 2 * pad); };
    os << "<g><text x=\"" << ox + w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">20 "
       << (panels[panel] == QuestionMode::Random ? "Random" : "Adaptive") << " Questions</text>\n";
    os << "<line x1=\"" << px(xmin) << "\" y1=\"" << py(0) << "\" x2=\"" << px(xmax) << "\" y2=\"" << py(0)
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(xmin) << "\" y1=\"" << py(0) << "\" x2=\"" << px(xmin) << "\" y2=\"" << py(ymax)
       << "\" stroke=\"black\"/>\n";
    for (auto b : budgets)
      os << "<text x=\"" << px(static_cast<double>(b)) << "\" y=\"" << h - pad + 14
         << "\" text-anchor=\"middle\" font-size=\"10\">" << b << "</text>\n";
    for (int y = 0; y <= static_cast<int>(ymax); ++y)
      os << "<text x=\"" << ox + pad - 6 << "\" y=\"" << py(y) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << y
         << "</text>\n";
    for (const Acquisition acq : {Acquisition::Adaptive, Acquisition::Random}) {
      std::ostringstream pts;
      bool any = false;
      for (auto b : budgets) {
        const double m = curve_mean(points, b, acq, panels[panel]);
        if (std::isnan(m)) continue;
        pts << px(static_cast<double>(b)) << ',' << py(m) << ' ';
        any = true;
      }
      if (!any) continue;
      os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\""
         << (acq == Acquisition::Adaptive ? "#c0392b" : "#2c7fb8") << "\" points=\"" << pts.str() << "\"/>\n";
    }
    os << "</g>\n";
  }
  os << "<text x=\"" << pad << "\" y=\"" << h - 6 << "\" font-size=\"10\" fill=\"#c0392b\">adaptive</text>\n";
  os << "<text x=\"" << pad + 60 << "\" y=\"" << h - 6 << "\" font-size=\"10\" fill=\"#2c7fb8\">random</text>\n";
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Leave-one-out nearest-neighbour classification
// ---------------------------------------------------------------------------

/// labels[i] in {-1, 0, +1}; 0 marks an unlabelled object. Each labelled
/// object is predicted by its nearest other labelled object under
/// d^2(a,b) = K_aa - 2 K_ab + K_bb (ties to the smaller id).
inline double loo_knn(const KernelMatrix& k, std::span<const int> labels) {
  if (labels.size() != k.size()) throw ArgumentError("loo_knn: one label per object required");
  std::vector<ObjectId> labelled;
  std::size_t pos = 0, neg = 0;
  for (ObjectId i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) ++pos;
    else if (labels[i] == -1) ++neg;
    else if (labels[i] != 0) throw ArgumentError("loo_knn: labels must be -1, 0 or +1");
    if (labels[i] != 0) labelled.push_back(i);
  }
  if (pos < 2 || neg < 2) throw ArgumentError("loo_knn: need at least 2 labelled objects per class");
  std::size_t errors = 0;
  for (ObjectId a : labelled) {
    ObjectId best = a;
    double best_d = std::numeric_limits<double>::infinity();
    for (ObjectId b : labelled) {
      if (b == a) continue;
      const double d = k.distance2(a, b);
      if (d < best_d) {
        best_d = d;
        best = b;
      }
    }
    if (labels[best] != labels[a]) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(labelled.size());
}

// ---------------------------------------------------------------------------
// Regret of the online learner
// ---------------------------------------------------------------------------

struct RegretPoint {
  std::size_t steps = 0;
  double average_regret = 0.0;
};

/// Running average of l_t(K^t) - l_t(K*) evaluated at each checkpoint
/// (checkpoints beyond the ledger are skipped).
inline std::vector<RegretPoint> regret_curve(const OnlineLedger& ledger, const KernelMatrix& k_star, double mu,
                                             std::span<const std::size_t> checkpoints) {
  std::vector<std::size_t> cps(checkpoints.begin(), checkpoints.end());
  std::sort(cps.begin(), cps.end());
  std::vector<RegretPoint> out;
  double cumulative = 0.0;
  std::size_t next = 0;
  for (std::size_t t = 0; t < ledger.losses.size() && next < cps.size(); ++t) {
    cumulative += ledger.losses[t] - unit_diagonal_loss(k_star, ledger.responses[t], mu);
    while (next < cps.size() && cps[next] == t + 1) {
      out.push_back({t + 1, cumulative / static_cast<double>(t + 1)});
      ++next;
    }
  }
  return out;
}

}  // namespace crowdkernel
