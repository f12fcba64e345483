#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crowdkernel/crowdsim.hpp"
#include "crowdkernel/io.hpp"
#include "crowdkernel/pipeline.hpp"
#include "crowdkernel/selector.hpp"

namespace crowdkernel {

/// Client-facing failure with an HTTP status and a stable machine code.
class ServiceError : public ProtocolError {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : ProtocolError(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

struct StudyConfig {
  PipelineConfig pipeline;
  std::size_t task_size = 50;
  std::size_t gold_per_task = 10;
  /// A task is accepted when at least this many gold triples are answered as expected.
  std::size_t gold_pass = 8;
  std::size_t tasks_per_day = 10;
  double gold_threshold = 0.95;
  /// Gold triples generated from the current fit whenever the pool runs short.
  std::size_t gold_pool_size = 100;
  /// Top up a short final batch with random triples instead of waiting.
  bool pad_tasks = true;
  std::size_t search_k = 9;
  std::size_t search_top = 9;
  std::size_t search_sample_size = 100;

  void validate() const {
    pipeline.validate();
    if (gold_per_task >= task_size) throw ParameterError("gold_per_task must be < task_size");
    if (gold_pass > gold_per_task) throw ParameterError("gold_pass must be <= gold_per_task");
    if (!(gold_threshold > 0.5 && gold_threshold < 1.0)) throw ParameterError("gold_threshold must lie in (0.5,1)");
    if (search_k < 2) throw ParameterError("search_k must be >= 2");
  }
};

namespace io {

inline json to_json(const StudyConfig& c) {
  return {{"pipeline", to_json(c.pipeline)},  {"task_size", c.task_size},
          {"gold_per_task", c.gold_per_task}, {"gold_pass", c.gold_pass},
          {"tasks_per_day", c.tasks_per_day}, {"gold_threshold", c.gold_threshold},
          {"gold_pool_size", c.gold_pool_size}, {"pad_tasks", c.pad_tasks},
          {"search_k", c.search_k},           {"search_top", c.search_top},
          {"search_sample_size", c.search_sample_size}};
}

inline void update_from_json(StudyConfig& c, const json& j) {
  detail::check_keys(j, {"pipeline", "task_size", "gold_per_task", "gold_pass", "tasks_per_day", "gold_threshold",
                         "gold_pool_size", "pad_tasks", "search_k", "search_top", "search_sample_size"},
                     "study");
  if (j.contains("pipeline")) update_from_json(c.pipeline, j["pipeline"]);
  detail::read(j, "task_size", c.task_size);
  detail::read(j, "gold_per_task", c.gold_per_task);
  detail::read(j, "gold_pass", c.gold_pass);
  detail::read(j, "tasks_per_day", c.tasks_per_day);
  detail::read(j, "gold_threshold", c.gold_threshold);
  detail::read(j, "gold_pool_size", c.gold_pool_size);
  detail::read(j, "pad_tasks", c.pad_tasks);
  detail::read(j, "search_k", c.search_k);
  detail::read(j, "search_top", c.search_top);
  detail::read(j, "search_sample_size", c.search_sample_size);
}

inline json to_json(const GoldTriple& g) {
  json j = to_json(g.triple);
  j["choice"] = std::string(to_string(g.expected));
  return j;
}

inline GoldTriple gold_from_json(const json& j) {
  return {triple_from_json(j), choice_from_string(j.at("choice").get<std::string>())};
}

inline std::vector<GoldTriple> parse_gold_jsonl(const std::string& text) {
  std::vector<GoldTriple> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(gold_from_json(json::parse(line)));
  return out;
}

}  // namespace io

struct TaskEntry {
  Triple triple;
  bool gold = false;
  /// Expected answer; meaningful for gold entries only.
  Choice expected = Choice::Left;

  friend bool operator==(const TaskEntry&, const TaskEntry&) = default;
};

enum class TaskStatus { Open, Accepted, Rejected };

inline std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Open: return "open";
    case TaskStatus::Accepted: return "accepted";
    case TaskStatus::Rejected: return "rejected";
  }
  return "open";
}

inline TaskStatus task_status_from_string(const std::string& s) {
  if (s == "open") return TaskStatus::Open;
  if (s == "accepted") return TaskStatus::Accepted;
  if (s == "rejected") return TaskStatus::Rejected;
  throw io::IoError("unknown task status '" + s + "'");
}

struct Task {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  std::string worker;
  std::vector<TaskEntry> entries;
  TaskStatus status = TaskStatus::Open;

  std::size_t gold_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.gold; }));
  }
};

enum class Verdict { Accepted, Rejected, Refused };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Accepted: return "accepted";
    case Verdict::Rejected: return "rejected";
    case Verdict::Refused: return "refused";
  }
  return "refused";
}

struct IngestResult {
  Verdict verdict = Verdict::Refused;
  std::size_t gold_correct = 0;
  std::size_t gold_total = 0;
  std::size_t responses_added = 0;
};

struct WorkerStats {
  std::size_t tasks_accepted = 0;
  std::size_t tasks_rejected = 0;
  std::size_t tasks_refused = 0;
  std::size_t gold_correct = 0;
  std::size_t gold_seen = 0;
  std::map<std::string, std::size_t> tasks_by_day;

  double gold_accuracy() const {
    return gold_seen ? static_cast<double>(gold_correct) / static_cast<double>(gold_seen) : 0.0;
  }
};

/// One visual-search game against the current fit.
struct SearchSession {
  std::uint64_t id = 0;
  Posterior posterior;
  std::vector<ObjectId> tuple;
  std::vector<std::size_t> clicks;
};

struct SearchView {
  std::uint64_t session_id = 0;
  std::vector<ObjectId> tuple;
  std::vector<ObjectId> top;
  std::size_t step = 0;
};

namespace io {

inline json to_json(const TaskEntry& e) {
  json j = to_json(e.triple);
  j["gold"] = e.gold;
  if (e.gold) j["expected"] = std::string(to_string(e.expected));
  return j;
}

inline TaskEntry task_entry_from_json(const json& j) {
  TaskEntry e;
  e.triple = triple_from_json(j);
  e.gold = j.value("gold", false);
  if (e.gold) e.expected = choice_from_string(j.at("expected").get<std::string>());
  return e;
}

inline json to_json(const Task& t) {
  json entries = json::array();
  for (const auto& e : t.entries) entries.push_back(to_json(e));
  return {{"id", t.id}, {"seed", t.seed}, {"worker", t.worker}, {"status", to_string(t.status)}, {"entries", entries}};
}

inline Task task_from_json(const json& j) {
  Task t;
  t.id = j.at("id").get<std::uint64_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.worker = j.at("worker").get<std::string>();
  t.status = task_status_from_string(j.at("status").get<std::string>());
  for (const auto& e : j.at("entries")) t.entries.push_back(task_entry_from_json(e));
  return t;
}

/// What an annotator sees: no gold flags, no expected answers.
inline json task_view(const Task& t) {
  json triples = json::array();
  for (const auto& e : t.entries) triples.push_back(to_json(e.triple));
  return {{"task_id", t.id}, {"worker", t.worker}, {"triples", triples}};
}

inline json to_json(const WorkerStats& w) {
  return {{"tasks_accepted", w.tasks_accepted}, {"tasks_rejected", w.tasks_rejected},
          {"tasks_refused", w.tasks_refused},   {"gold_correct", w.gold_correct},
          {"gold_seen", w.gold_seen},           {"gold_accuracy", w.gold_accuracy()},
          {"tasks_by_day", w.tasks_by_day}};
}

inline WorkerStats worker_stats_from_json(const json& j) {
  WorkerStats w;
  w.tasks_accepted = j.at("tasks_accepted").get<std::size_t>();
  w.tasks_rejected = j.at("tasks_rejected").get<std::size_t>();
  w.tasks_refused = j.at("tasks_refused").get<std::size_t>();
  w.gold_correct = j.at("gold_correct").get<std::size_t>();
  w.gold_seen = j.at("gold_seen").get<std::size_t>();
  w.tasks_by_day = j.at("tasks_by_day").get<std::map<std::string, std::size_t>>();
  return w;
}

inline json to_json(const SearchView& v) {
  return {{"session_id", v.session_id}, {"tuple", v.tuple}, {"top", v.top}, {"step", v.step}};
}

}  // namespace io

/// Append-only JSON-lines event log; an empty path keeps events in memory.
class EventLog {
 public:
  explicit EventLog(std::string path = {}) : path_(std::move(path)) {}

  const std::string& path() const { return path_; }

  void append(const io::json& event) {
    std::string line = event.dump();
    line += '\n';
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      if (!out) throw io::IoError("cannot append to '" + path_ + "'");
      out << line;
      out.flush();
      if (!out) throw io::IoError("append failed for '" + path_ + "'");
    }
    lines_.push_back(std::move(line));
  }

  /// Events appended through this instance.
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::string path_;
  std::vector<std::string> lines_;
};

/// The study state owner: object registry, pipeline, annotation tasks, gold
/// pool, worker statistics and search sessions. Not thread-safe; the HTTP
/// layer serialises every call through one writer.
///
/// With a data directory, every accepted response, planned round, fit, task
/// and verdict is appended to events.jsonl and the full state is mirrored to
/// snapshot.json after each mutation batch.
class Study {
 public:
  static constexpr const char* kEvents = "events.jsonl";
  static constexpr const char* kSnapshot = "snapshot.json";

  Study(std::vector<io::ObjectInfo> objects, StudyConfig cfg, std::string data_dir = {},
        std::vector<GoldTriple> gold_pool = {})
      : objects_(std::move(objects)),
        cfg_(std::move(cfg)),
        data_dir_(std::move(data_dir)),
        pipeline_(checked_size(objects_), cfg_.pipeline),
        gold_pool_(std::move(gold_pool)) {
    cfg_.validate();
    for (std::size_t i = 0; i < objects_.size(); ++i)
      if (objects_[i].id != i) throw ArgumentError("Study: object ids must be 0..n-1 in order");
    for (const auto& g : gold_pool_) detail::check_triple(g.triple, objects_.size());
    if (!data_dir_.empty()) {
      std::filesystem::create_directories(data_dir_);
      if (std::filesystem::exists(events_path())) throw ArgumentError("Study: '" + data_dir_ + "' already holds a study");
      log_ = EventLog(events_path());
    }
    io::json head{{"type", "study"}, {"config", io::to_json(cfg_)}};
    head["objects"] = io::json::array();
    for (const auto& o : objects_) head["objects"].push_back(io::to_json(o));
    log_.append(head);
    if (!gold_pool_.empty()) log_gold(gold_pool_);
    pipeline_.start();
    log_round();
    pending_ = pipeline_.outstanding();
    save_snapshot();
  }

  /// Reopens a persisted study: snapshot.json for state, events.jsonl for the
  /// response log.
  static Study load(const std::string& data_dir) {
    const auto snap = io::json::parse(io::read_file((std::filesystem::path(data_dir) / kSnapshot).string()));
    const std::string events = io::read_file((std::filesystem::path(data_dir) / kEvents).string());
    std::vector<TripleResponse> responses;
    std::istringstream in(events);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto ev = io::json::parse(line);
      if (ev.at("type") == "response") responses.push_back(io::response_from_json(ev));
    }
    if (responses.size() != snap.at("responses").get<std::size_t>())
      throw io::IoError("snapshot and event log disagree on the response count");
    return Study(snap, std::move(responses), data_dir);
  }

  std::size_t size() const { return objects_.size(); }
  const std::vector<io::ObjectInfo>& objects() const { return objects_; }
  const StudyConfig& config() const { return cfg_; }
  const Pipeline& pipeline() const { return pipeline_; }
  const std::vector<Triple>& pending() const { return pending_; }
  const std::map<std::uint64_t, Task>& tasks() const { return tasks_; }
  const std::map<std::string, WorkerStats>& workers() const { return workers_; }
  const std::vector<GoldTriple>& gold_pool() const { return gold_pool_; }
  const EventLog& log() const { return log_; }
  const std::string& data_dir() const { return data_dir_; }
  std::string events_path() const { return (std::filesystem::path(data_dir_) / kEvents).string(); }

  // -------------------------------------------------------------------------
  // Automated acquisition
  // -------------------------------------------------------------------------

  /// Runs the pipeline against `oracle` until it stalls or completes.
  PipelineStatus simulate(Oracle& oracle) {
    while (!pipeline_.done()) {
      const std::vector<Triple> queue = pipeline_.outstanding();
      for (const Triple& t : queue) {
        std::optional<TripleResponse> r = oracle.ask(t);
        if (!r) {
          save_snapshot();
          return PipelineStatus::Paused;
        }
        r->triple = t;
        r->gold = false;
        record(std::move(*r));
      }
      close_round();
    }
    save_snapshot();
    return PipelineStatus::Done;
  }

  // -------------------------------------------------------------------------
  // Annotation tasks
  // -------------------------------------------------------------------------

  /// Packs pending triples into tasks of (task_size - gold_per_task) ordinary
  /// plus gold_per_task gold triples, shuffled by the task seed. Leftovers
  /// stay pending; with `pad` a short batch is topped up with random triples.
  std::vector<std::uint64_t> build_tasks(bool pad = false) {
    const std::size_t ordinary = cfg_.task_size - cfg_.gold_per_task;
    std::vector<std::uint64_t> made;
    while (pending_.size() >= ordinary || (pad && !pending_.empty())) {
      ensure_gold();
      Task t;
      t.id = next_task_id_++;
      t.seed = derive_seed(cfg_.pipeline.seed, {0x7a5cu, t.id});
      std::mt19937_64 rng(t.seed);
      const std::size_t take = std::min(ordinary, pending_.size());
      for (std::size_t i = 0; i < take; ++i) t.entries.push_back({pending_[i], false, Choice::Left});
      pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(take));
      for (std::size_t i = take; i < ordinary; ++i) {
        const ObjectId head = static_cast<ObjectId>((t.id * ordinary + i) % size());
        t.entries.push_back({random_triple_with_head(head, size(), rng), false, Choice::Left});
      }
      std::vector<std::size_t> idx(gold_pool_.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t i = 0; i < cfg_.gold_per_task; ++i) {
        const GoldTriple& g = gold_pool_[idx[i]];
        t.entries.push_back({g.triple, true, g.expected});
      }
      std::shuffle(t.entries.begin(), t.entries.end(), rng);
      validate_task(t);
      log_.append({{"type", "task"}, {"task", io::to_json(t)}});
      made.push_back(t.id);
      tasks_.emplace(t.id, std::move(t));
      if (!pad && pending_.size() < ordinary) break;
    }
    if (!made.empty()) save_snapshot();
    return made;
  }

  /// The worker's open task, else an unassigned one, else a freshly built one.
  const Task& task_for(const std::string& worker) {
    if (worker.empty()) throw ServiceError(400, "bad_request", "worker id required");
    for (auto& [id, t] : tasks_)
      if (t.status == TaskStatus::Open && t.worker == worker) return t;
    auto claim = [&](Task& t) -> const Task& {
      t.worker = worker;
      log_.append({{"type", "assign"}, {"task_id", t.id}, {"worker", worker}});
      save_snapshot();
      return t;
    };
    for (auto& [id, t] : tasks_)
      if (t.status == TaskStatus::Open && t.worker.empty()) return claim(t);
    if (pipeline_.done()) throw ServiceError(404, "no_task", "the study is complete");
    const auto made = build_tasks(cfg_.pad_tasks);
    if (made.empty()) throw ServiceError(404, "no_task", "no task available yet");
    return claim(tasks_.at(made.front()));
  }

  /// Scores a submitted task. Accepted tasks add their ordinary answers to
  /// the response log; rejected ones requeue their ordinary triples; a worker
  /// over the daily limit is refused before scoring and the task stays open.
  IngestResult ingest(std::uint64_t task_id, const std::string& worker, std::span<const Choice> choices,
                      const std::string& day) {
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw ServiceError(404, "not_found", "unknown task " + std::to_string(task_id));
    Task& task = it->second;
    if (task.status != TaskStatus::Open) throw ServiceError(409, "task_closed", "task already consumed");
    if (worker.empty()) throw ServiceError(400, "bad_request", "worker id required");
    if (!task.worker.empty() && task.worker != worker)
      throw ServiceError(403, "wrong_worker", "task is assigned to another worker");
    if (choices.size() != task.entries.size())
      throw ServiceError(400, "bad_request", "expected " + std::to_string(task.entries.size()) + " choices, got " +
                                                 std::to_string(choices.size()));
    WorkerStats& stats = workers_[worker];
    IngestResult res;
    res.gold_total = task.gold_count();
    auto& today = stats.tasks_by_day[day];
    if (today >= cfg_.tasks_per_day) {
      ++stats.tasks_refused;
      res.verdict = Verdict::Refused;
      log_.append({{"type", "verdict"}, {"task_id", task_id}, {"worker", worker}, {"day", day}, {"verdict", "refused"}});
      save_snapshot();
      return res;
    }
    for (std::size_t i = 0; i < task.entries.size(); ++i)
      if (task.entries[i].gold && choices[i] == task.entries[i].expected) ++res.gold_correct;
    ++today;
    stats.gold_seen += res.gold_total;
    stats.gold_correct += res.gold_correct;
    task.worker = worker;
    if (res.gold_correct >= cfg_.gold_pass) {
      res.verdict = Verdict::Accepted;
      task.status = TaskStatus::Accepted;
      ++stats.tasks_accepted;
    } else {
      res.verdict = Verdict::Rejected;
      task.status = TaskStatus::Rejected;
      ++stats.tasks_rejected;
    }
    log_.append({{"type", "verdict"},
                 {"task_id", task_id},
                 {"worker", worker},
                 {"day", day},
                 {"verdict", to_string(res.verdict)},
                 {"gold_correct", res.gold_correct}});
    if (res.verdict == Verdict::Accepted) {
      for (std::size_t i = 0; i < task.entries.size(); ++i) {
        if (task.entries[i].gold) continue;
        TripleResponse r;
        r.triple = task.entries[i].triple;
        r.choice = choices[i];
        r.worker = worker;
        record(std::move(r));
        ++res.responses_added;
      }
      if (pipeline_.outstanding().empty() && !pipeline_.done()) close_round();
    } else {
      std::vector<Triple> back;
      for (const auto& e : task.entries)
        if (!e.gold && contains_outstanding(e.triple)) back.push_back(e.triple);
      pending_.insert(pending_.begin(), back.begin(), back.end());
    }
    save_snapshot();
    return res;
  }

  // -------------------------------------------------------------------------
  // Visual search
  // -------------------------------------------------------------------------

  SearchView search_start() {
    const FitResult& fit = require_fit();
    SearchSession s;
    s.id = next_session_id_++;
    s.posterior = uniform_posterior(size());
    s.tuple = next_tuple(s, fit);
    auto [it, _] = sessions_.emplace(s.id, std::move(s));
    return view(it->second);
  }

  SearchView search_choose(std::uint64_t session_id, std::size_t index) {
    const FitResult& fit = require_fit();
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown search session");
    SearchSession& s = it->second;
    if (index >= s.tuple.size()) throw ServiceError(400, "bad_request", "index out of range");
    s.posterior = update_posterior_tuple(s.posterior, s.tuple, index, fit.embedding, cfg_.pipeline.fit.model());
    s.clicks.push_back(index);
    s.tuple = next_tuple(s, fit);
    return view(s);
  }

  // -------------------------------------------------------------------------
  // Status and persistence
  // -------------------------------------------------------------------------

  io::json status() const {
    io::json w = io::json::object();
    for (const auto& [id, st] : workers_) w[id] = io::to_json(st);
    std::size_t open = 0;
    for (const auto& [id, t] : tasks_) open += t.status == TaskStatus::Open;
    const auto& fit = pipeline_.current_fit();
    return {{"objects", size()},
            {"round", pipeline_.round()},
            {"rounds", cfg_.pipeline.rounds},
            {"done", pipeline_.done()},
            {"responses", pipeline_.responses().size()},
            {"outstanding", pipeline_.outstanding().size()},
            {"pending", pending_.size()},
            {"open_tasks", open},
            {"fits", pipeline_.fits().size()},
            {"loss", fit ? io::json(fit->loss) : io::json(nullptr)},
            {"errors", pipeline_.errors()},
            {"workers", w}};
  }

  io::json snapshot() const {
    io::json j;
    j["config"] = io::to_json(cfg_);
    j["objects"] = io::json::array();
    for (const auto& o : objects_) j["objects"].push_back(io::to_json(o));
    j["responses"] = pipeline_.responses().size();
    j["round"] = pipeline_.round();
    j["done"] = pipeline_.done();
    j["outstanding"] = io::json::array();
    for (const auto& t : pipeline_.outstanding()) j["outstanding"].push_back(io::to_json(t));
    j["pending"] = io::json::array();
    for (const auto& t : pending_) j["pending"].push_back(io::to_json(t));
    j["fits"] = io::json::array();
    for (const auto& f : pipeline_.fits()) j["fits"].push_back(io::to_json(f));
    if (const auto& fit = pipeline_.current_fit())
      j["fit"] = {{"embedding", io::to_json(fit->embedding.coords())}, {"loss", fit->loss}, {"restart", fit->restart}};
    j["tasks"] = io::json::array();
    for (const auto& [id, t] : tasks_) j["tasks"].push_back(io::to_json(t));
    j["next_task_id"] = next_task_id_;
    j["gold_pool"] = io::json::array();
    for (const auto& g : gold_pool_) j["gold_pool"].push_back(io::to_json(g));
    j["workers"] = io::json::object();
    for (const auto& [id, st] : workers_) j["workers"][id] = io::to_json(st);
    return j;
  }

  void save_snapshot() const {
    if (data_dir_.empty()) return;
    const auto path = std::filesystem::path(data_dir_) / kSnapshot;
    const auto tmp = path.string() + ".tmp";
    io::write_file(tmp, snapshot().dump(1) + "\n");
    std::filesystem::rename(tmp, path);
  }

 private:
  static std::size_t checked_size(const std::vector<io::ObjectInfo>& objects) {
    if (objects.size() < 3) throw ArgumentError("Study: need at least 3 objects");
    return objects.size();
  }

  Study(const io::json& snap, std::vector<TripleResponse> responses, std::string data_dir)
      : objects_(parse_objects(snap)),
        cfg_(parse_config(snap)),
        data_dir_(std::move(data_dir)),
        pipeline_(checked_size(objects_), cfg_.pipeline),
        log_((std::filesystem::path(data_dir_) / kEvents).string()) {
    std::vector<Triple> outstanding;
    for (const auto& t : snap.at("outstanding")) outstanding.push_back(io::triple_from_json(t));
    for (const auto& t : snap.at("pending")) pending_.push_back(io::triple_from_json(t));
    std::vector<FitRecord> fits;
    for (const auto& f : snap.at("fits")) fits.push_back(io::fit_record_from_json(f));
    std::optional<FitResult> fit;
    if (snap.contains("fit")) {
      Embedding m(io::matrix_from_json(snap["fit"].at("embedding")));
      KernelMatrix k = kernel_from_embedding(m);
      fit = FitResult{std::move(m), std::move(k), snap["fit"].at("loss").get<double>(), {},
                      snap["fit"].at("restart").get<int>(), {}};
    }
    pipeline_.restore(snap.at("round").get<int>(), snap.at("done").get<bool>(), std::move(outstanding),
                      std::move(responses), std::move(fit), std::move(fits));
    for (const auto& t : snap.at("tasks")) {
      Task task = io::task_from_json(t);
      tasks_.emplace(task.id, std::move(task));
    }
    next_task_id_ = snap.at("next_task_id").get<std::uint64_t>();
    for (const auto& g : snap.at("gold_pool")) gold_pool_.push_back(io::gold_from_json(g));
    for (auto it = snap.at("workers").begin(); it != snap.at("workers").end(); ++it)
      workers_[it.key()] = io::worker_stats_from_json(it.value());
  }

  static std::vector<io::ObjectInfo> parse_objects(const io::json& snap) {
    std::vector<io::ObjectInfo> out;
    for (const auto& o : snap.at("objects")) out.push_back(io::object_from_json(o));
    return out;
  }

  static StudyConfig parse_config(const io::json& snap) {
    StudyConfig c;
    io::update_from_json(c, snap.at("config"));
    return c;
  }

  void record(TripleResponse r) {
    pipeline_.record(std::move(r));
    io::json ev{{"type", "response"}};
    ev.update(io::to_json(pipeline_.responses().back()));
    log_.append(ev);
  }

  void close_round() {
    const std::size_t fits_before = pipeline_.fits().size();
    const std::size_t errors_before = pipeline_.errors().size();
    pipeline_.finish_round();
    if (pipeline_.fits().size() > fits_before) {
      io::json ev{{"type", "fit"}};
      ev.update(io::to_json(pipeline_.fits().back()));
      log_.append(ev);
    }
    for (std::size_t i = errors_before; i < pipeline_.errors().size(); ++i)
      log_.append({{"type", "error"}, {"message", pipeline_.errors()[i]}});
    if (!pipeline_.done()) log_round();
    pending_ = pipeline_.outstanding();
  }

  void log_round() {
    io::json triples = io::json::array();
    for (const auto& t : pipeline_.outstanding()) triples.push_back(io::to_json(t));
    log_.append({{"type", "round"}, {"round", pipeline_.round()}, {"triples", triples}});
  }

  void log_gold(std::span<const GoldTriple> gold) {
    io::json triples = io::json::array();
    for (const auto& g : gold) triples.push_back(io::to_json(g));
    log_.append({{"type", "gold"}, {"triples", triples}});
  }

  bool contains_outstanding(const Triple& t) const {
    const auto& o = pipeline_.outstanding();
    return std::find(o.begin(), o.end(), t) != o.end();
  }

  /// Gold comes from the operator's pool, topped up from the current fit.
  void ensure_gold() {
    if (gold_pool_.size() >= cfg_.gold_per_task) return;
    const auto& fit = pipeline_.current_fit();
    if (!fit)
      throw ServiceError(409, "no_gold", "gold pool too small and no fit to generate gold from; supply a gold file");
    GoldSet gs = make_gold(fit->embedding, cfg_.pipeline.fit.mu, cfg_.gold_pool_size, cfg_.gold_threshold,
                           derive_seed(cfg_.pipeline.seed, {0x901du, pipeline_.fits().size()}));
    if (gold_pool_.size() + gs.triples.size() < cfg_.gold_per_task)
      throw ServiceError(409, "no_gold", "current fit yields too few gold triples");
    log_gold(gs.triples);
    gold_pool_.insert(gold_pool_.end(), gs.triples.begin(), gs.triples.end());
  }

  void validate_task(const Task& t) const {
    if (t.entries.size() != cfg_.task_size || t.gold_count() != cfg_.gold_per_task)
      throw std::logic_error("task layout violated");
    for (const auto& e : t.entries)
      if (!e.triple.distinct()) throw std::logic_error("task holds a triple with repeated ids");
  }

  const FitResult& require_fit() const {
    const auto& fit = pipeline_.current_fit();
    if (!fit) throw ServiceError(409, "no_fit", "no fitted kernel yet");
    return *fit;
  }

  std::vector<ObjectId> next_tuple(const SearchSession& s, const FitResult& fit) const {
    const std::size_t k = std::min(cfg_.search_k, size());
    const std::uint64_t seed = derive_seed(cfg_.pipeline.seed, {0x5ea7u, s.id, s.clicks.size()});
    return select_tuple(s.posterior, fit.embedding, cfg_.pipeline.fit.model(), k, cfg_.search_sample_size, seed)
        .members;
  }

  SearchView view(const SearchSession& s) const {
    auto order = ranking(s.posterior);
    order.resize(std::min(cfg_.search_top, order.size()));
    return {s.id, s.tuple, std::move(order), s.clicks.size()};
  }

  std::vector<io::ObjectInfo> objects_;
  StudyConfig cfg_;
  std::string data_dir_;
  Pipeline pipeline_;
  EventLog log_;
  std::vector<Triple> pending_;
  std::map<std::uint64_t, Task> tasks_;
  std::uint64_t next_task_id_ = 1;
  std::vector<GoldTriple> gold_pool_;
  std::map<std::string, WorkerStats> workers_;
  std::map<std::uint64_t, SearchSession> sessions_;
  std::uint64_t next_session_id_ = 1;
};

/// Largest |stored - recomputed| over every fit of the study's log.
inline double verify_replay(const Study& study) {
  const auto& p = study.pipeline();
  const auto losses = replay_fit_losses(study.size(), study.config().pipeline, p.responses(), p.fits());
  double worst = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) worst = std::max(worst, std::abs(losses[i] - p.fits()[i].loss));
  return worst;
}

/// Objects named "object-i" with no image, for simulated studies.
inline std::vector<io::ObjectInfo> anonymous_objects(std::size_t n) {
  std::vector<io::ObjectInfo> out;
  for (ObjectId i = 0; i < n; ++i) out.push_back({i, "", "object-" + std::to_string(i)});
  return out;
}

}  // namespace crowdkernel
