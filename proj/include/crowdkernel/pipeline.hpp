#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "crowdkernel/crowdsim.hpp"
#include "crowdkernel/fitter.hpp"
#include "crowdkernel/selector.hpp"
#include "crowdkernel/types.hpp"

namespace crowdkernel {

/// Deterministic 64-bit seed derived from a base seed and a tag path.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum class Acquisition { Adaptive, Random };

inline std::string to_string(Acquisition a) { return a == Acquisition::Adaptive ? "adaptive" : "random"; }

inline Acquisition acquisition_from_string(const std::string& s) {
  if (s == "adaptive") return Acquisition::Adaptive;
  if (s == "random") return Acquisition::Random;
  throw ParameterError("unknown acquisition mode '" + s + "'");
}

struct PipelineConfig {
  /// R: random triples per object in the seed round.
  std::size_t seed_triples = 10;
  /// T: adaptive rounds, one new triple per object each.
  std::size_t rounds = 25;
  /// Model and optimiser; fit.dims is d.
  FitConfig fit;
  /// Random pairs scored per adaptive selection.
  std::size_t sample_size = 100;
  /// Start each refit from the previous embedding (plus fit.restarts - 1
  /// random starts) instead of fit.restarts random starts.
  bool warm_start = false;
  Acquisition acquisition = Acquisition::Adaptive;
  std::uint64_t seed = 1;

  void validate() const {
    fit.validate();
    if (seed_triples < 1) throw ParameterError("seed_triples must be >= 1");
    if (sample_size < 1) throw ParameterError("sample_size must be >= 1");
  }
};

/// Enough to recompute a fit from the response log.
struct FitRecord {
  int round = 0;
  std::uint64_t seed = 0;
  std::size_t responses = 0;
  double loss = 0.0;
  int restart = 0;
  bool warm = false;

  friend bool operator==(const FitRecord&, const FitRecord&) = default;
};

/// Source of crowd answers. Returning nullopt means "not available yet":
/// the pipeline pauses with the triple still outstanding.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::optional<TripleResponse> ask(const Triple& t) = 0;
};

/// Answers from a simulated crowd, workers assigned round-robin.
class SimOracle : public Oracle {
 public:
  explicit SimOracle(SimCrowd& sim) : sim_(sim) {}

  std::optional<TripleResponse> ask(const Triple& t) override {
    const std::size_t w = next_++ % sim_.workers().size();
    return sim_.answer(t, w);
  }

 private:
  SimCrowd& sim_;
  std::size_t next_ = 0;
};

enum class PipelineStatus { Paused, Done };

/// The acquisition loop: R random triples per object, then T rounds of
/// {fit K^t on everything so far, one new triple per object}. A final fit
/// after the last round makes T + 1 fits in total.
class Pipeline {
 public:
  Pipeline(std::size_t n, PipelineConfig cfg) : n_(n), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (n_ < 3) throw ArgumentError("Pipeline: need at least 3 objects");
  }

  std::size_t size() const { return n_; }
  const PipelineConfig& config() const { return cfg_; }
  bool started() const { return started_; }
  bool done() const { return done_; }
  int round() const { return round_; }
  const std::vector<Triple>& outstanding() const { return outstanding_; }
  const std::vector<TripleResponse>& responses() const { return responses_; }
  const std::optional<FitResult>& current_fit() const { return fit_; }
  const std::vector<FitRecord>& fits() const { return fits_; }
  const std::vector<std::string>& errors() const { return errors_; }

  /// Plans the seed round.
  void start() {
    if (started_) return;
    started_ = true;
    round_ = 0;
    std::mt19937_64 rng(derive_seed(cfg_.seed, {0x5eedu}));
    for (ObjectId a = 0; a < n_; ++a)
      for (std::size_t i = 0; i < cfg_.seed_triples; ++i) outstanding_.push_back(random_triple_with_head(a, n_, rng));
  }

  /// Appends a response tagged with the current round. Returns true when it
  /// answered an outstanding triple (which is then removed).
  bool record(TripleResponse r) {
    if (!r.triple.distinct() || r.triple.head >= n_ || r.triple.left >= n_ || r.triple.right >= n_)
      throw ArgumentError("Pipeline::record: invalid triple");
    r.round = round_;
    responses_.push_back(std::move(r));
    const Triple& t = responses_.back().triple;
    auto it = std::find(outstanding_.begin(), outstanding_.end(), t);
    if (it == outstanding_.end()) return false;
    outstanding_.erase(it);
    return true;
  }

  /// Refits on all data and plans the next round (or finishes).
  void finish_round() {
    if (!started_ || done_) throw ArgumentError("Pipeline::finish_round: not running");
    if (!outstanding_.empty()) throw ArgumentError("Pipeline::finish_round: round has unanswered triples");
    refit();
    if (static_cast<std::size_t>(round_) >= cfg_.rounds) {
      done_ = true;
      return;
    }
    ++round_;
    plan_round();
  }

  /// Drives the loop against `oracle` until it stalls or the study is complete.
  PipelineStatus run(Oracle& oracle) {
    start();
    while (!done_) {
      const std::vector<Triple> queue = outstanding_;
      for (const Triple& t : queue) {
        std::optional<TripleResponse> r = oracle.ask(t);
        if (!r) return PipelineStatus::Paused;
        r->triple = t;
        record(std::move(*r));
      }
      finish_round();
    }
    return PipelineStatus::Done;
  }

  /// Restores persisted state (the caller supplies a consistent snapshot).
  void restore(int round, bool done, std::vector<Triple> outstanding, std::vector<TripleResponse> responses,
               std::optional<FitResult> fit, std::vector<FitRecord> fits) {
    started_ = true;
    round_ = round;
    done_ = done;
    outstanding_ = std::move(outstanding);
    responses_ = std::move(responses);
    fit_ = std::move(fit);
    fits_ = std::move(fits);
  }

  /// Responses whose head is `a`.
  std::vector<TripleResponse> responses_for(ObjectId a) const {
    std::vector<TripleResponse> out;
    for (const auto& r : responses_)
      if (r.triple.head == a) out.push_back(r);
    return out;
  }

 private:
  void refit() {
    FitConfig fc = cfg_.fit;
    fc.seed = derive_seed(cfg_.seed, {0xf17u, static_cast<std::uint64_t>(round_)});
    const bool warm = cfg_.warm_start && fit_.has_value();
    try {
      FitResult res = fit_batch(responses_, n_, fc, warm ? std::optional<Embedding>(fit_->embedding) : std::nullopt);
      fits_.push_back({round_, fc.seed, responses_.size(), res.loss, res.restart, warm});
      fit_ = std::move(res);
    } catch (const std::exception& e) {
      errors_.push_back("round " + std::to_string(round_) + ": fit failed: " + e.what());
      std::cerr << "crowdkernel: " << errors_.back() << "\n";
    }
  }

  void plan_round() {
    const std::uint64_t round_seed = derive_seed(cfg_.seed, {0xacu, static_cast<std::uint64_t>(round_)});
    std::mt19937_64 rng(round_seed);
    if (cfg_.acquisition == Acquisition::Random || !fit_) {
      for (ObjectId a = 0; a < n_; ++a) outstanding_.push_back(random_triple_with_head(a, n_, rng));
      return;
    }
    const ModelParams params = cfg_.fit.model();
    std::bernoulli_distribution coin(0.5);
    for (ObjectId a = 0; a < n_; ++a) {
      const auto mine = responses_for(a);
      const Posterior pos = posterior(a, mine, fit_->embedding, params);
      const CandidateQuery q = select_pair(pos, fit_->embedding, params, cfg_.sample_size,
                                           derive_seed(round_seed, {a}));
      const bool swap = coin(rng);
      outstanding_.push_back(Triple{a, q.members[swap ? 1 : 0], q.members[swap ? 0 : 1]});
    }
  }

  std::size_t n_;
  PipelineConfig cfg_;
  bool started_ = false;
  bool done_ = false;
  int round_ = 0;
  std::vector<Triple> outstanding_;
  std::vector<TripleResponse> responses_;
  std::optional<FitResult> fit_;
  std::vector<FitRecord> fits_;
  std::vector<std::string> errors_;
};

/// Recomputes every recorded fit from the response log, chaining warm starts
/// exactly as the pipeline did. Returns the recomputed losses.
inline std::vector<double> replay_fit_losses(std::size_t n, const PipelineConfig& cfg,
                                             std::span<const TripleResponse> responses,
                                             std::span<const FitRecord> records) {
  std::vector<double> losses;
  std::optional<Embedding> previous;
  for (const auto& rec : records) {
    if (rec.responses > responses.size()) throw ArgumentError("replay: fit record beyond end of log");
    FitConfig fc = cfg.fit;
    fc.seed = rec.seed;
    const auto prefix = responses.first(rec.responses);
    FitResult res = fit_batch(prefix, n, fc, rec.warm ? previous : std::nullopt);
    losses.push_back(res.loss);
    previous = res.embedding;
  }
  return losses;
}

}  // namespace crowdkernel
