#pragma once

// Eigen must be parsed before httplib: <resolv.h> defines a `_res` macro.
#include "crowdkernel/study.hpp"

#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <functional>
#include <future>
#include <mutex>
#include <string>
#include <thread>
#include <type_traits>

namespace crowdkernel {

/// Runs submitted jobs one at a time on a dedicated thread.
class SerialExecutor {
 public:
  SerialExecutor() : thread_([this] { loop(); }) {}

  ~SerialExecutor() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_one();
    thread_.join();
  }

  SerialExecutor(const SerialExecutor&) = delete;
  SerialExecutor& operator=(const SerialExecutor&) = delete;

  /// Runs `f` on the executor thread and returns its result (or rethrows).
  template <class F>
  auto call(F f) -> std::invoke_result_t<F> {
    using R = std::invoke_result_t<F>;
    auto job = std::make_shared<std::packaged_task<R()>>(std::move(f));
    std::future<R> done = job->get_future();
    {
      std::lock_guard lock(mutex_);
      jobs_.emplace_back([job] { (*job)(); });
    }
    cv_.notify_one();
    return done.get();
  }

 private:
  void loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::thread thread_;
};

/// UTC calendar date, YYYY-MM-DD.
inline std::string utc_today() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

/// JSON-over-HTTP front end. Handlers parse requests concurrently and hand
/// every study access to a single executor thread, which owns the Study.
class StudyServer {
 public:
  using Clock = std::function<std::string()>;

  StudyServer(Study& study, Clock today = utc_today, std::string static_dir = {})
      : study_(study), today_(std::move(today)) {
    if (!static_dir.empty() && !server_.set_mount_point("/", static_dir))
      throw ArgumentError("StudyServer: cannot serve static files from '" + static_dir + "'");
    routes();
  }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  bool is_running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  using json = io::json;

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send(res, status, {{"code", code}, {"message", message}});
  }

  /// Maps library exceptions onto {code, message} bodies.
  template <class F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "bad_json", e.what());
    } catch (const ProtocolError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const ArgumentError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  }

  static std::uint64_t parse_id(const std::string& s) {
    if (s.empty() || s.size() > 19 || s.find_first_not_of("0123456789") != std::string::npos)
      throw ServiceError(400, "bad_request", "ids must be nonnegative integers");
    return std::stoull(s);
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get("/objects", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        json out = exec_.call([this] {
          json a = json::array();
          for (const auto& o : study_.objects()) a.push_back(io::to_json(o));
          return a;
        });
        send(res, 200, out);
      });
    });

    server_.Get("/task", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string worker = req.get_param_value("worker");
        if (worker.empty()) throw ServiceError(400, "bad_request", "query parameter 'worker' is required");
        send(res, 200, exec_.call([&] { return io::task_view(study_.task_for(worker)); }));
      });
    });

    server_.Post(R"(/task/(\d+)/responses)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::uint64_t id = parse_id(req.matches[1]);
        const json body = json::parse(req.body);
        if (!body.is_object()) throw ServiceError(400, "bad_request", "body must be a JSON object");
        std::string worker = req.get_param_value("worker");
        if (body.contains("worker")) {
          if (!body["worker"].is_string()) throw ServiceError(400, "bad_request", "'worker' must be a string");
          worker = body["worker"].get<std::string>();
        }
        if (!body.contains("choices") || !body["choices"].is_array())
          throw ServiceError(400, "bad_request", "'choices' must be an array");
        std::vector<Choice> choices;
        for (const auto& c : body["choices"]) {
          if (!c.is_string()) throw ServiceError(400, "bad_request", "each choice must be \"left\" or \"right\"");
          try {
            choices.push_back(choice_from_string(c.get<std::string>()));
          } catch (const ProtocolError&) {
            throw ServiceError(400, "bad_request", "each choice must be \"left\" or \"right\"");
          }
        }
        const std::string day = today_();
        const IngestResult r = exec_.call([&] { return study_.ingest(id, worker, choices, day); });
        json out{{"task_id", id},
                 {"verdict", to_string(r.verdict)},
                 {"gold_correct", r.gold_correct},
                 {"gold_total", r.gold_total},
                 {"responses_added", r.responses_added}};
        if (r.verdict == Verdict::Refused) {
          out["code"] = "rate_limited";
          out["message"] = "daily task limit reached";
          send(res, 429, out);
        } else {
          send(res, 200, out);
        }
      });
    });

    server_.Get("/search/start", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send(res, 200, io::to_json(exec_.call([&] { return study_.search_start(); }))); });
    });

    server_.Post(R"(/search/(\d+)/choose)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::uint64_t sid = parse_id(req.matches[1]);
        const json body = json::parse(req.body);
        if (!body.is_object() || !body.contains("index") || !body["index"].is_number_unsigned())
          throw ServiceError(400, "bad_request", "body must be {\"index\": nonnegative integer}");
        const std::size_t index = body["index"].get<std::size_t>();
        send(res, 200, io::to_json(exec_.call([&] { return study_.search_choose(sid, index); })));
      });
    });

    server_.Get("/study/status", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send(res, 200, exec_.call([&] { return study_.status(); })); });
    });

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such endpoint");
    });
  }

  Study& study_;
  Clock today_;
  SerialExecutor exec_;
  httplib::Server server_;
};

}  // namespace crowdkernel
