#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "crowdkernel/crowdsim.hpp"
#include "crowdkernel/embedding.hpp"
#include "crowdkernel/errors.hpp"
#include "crowdkernel/pipeline.hpp"
#include "crowdkernel/types.hpp"

namespace crowdkernel::io {

using json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Headerless numeric CSV, one matrix row per line.
inline std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
  if (b == std::string::npos) throw IoError("empty numeric field");
  double v = 0.0;
  const auto res = std::from_chars(s.data() + b, s.data() + e + 1, v);
  if (res.ec != std::errc() || res.ptr != s.data() + e + 1) throw IoError("bad number '" + s + "'");
  return v;
}

inline Eigen::MatrixXd parse_matrix_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    for (const auto& f : split(line, ',')) row.push_back(parse_double(f));
    if (!rows.empty() && row.size() != rows.front().size()) throw IoError("ragged CSV matrix");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("empty CSV matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

/// object_id,x,y
inline std::string pca_csv(const Eigen::MatrixXd& coords) {
  std::string out = "object_id,x,y\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    out += std::to_string(i) + ',' + format_double(coords(i, 0)) + ',' + format_double(coords(i, 1)) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Object manifest: id,image_url,label
// ---------------------------------------------------------------------------

struct ObjectInfo {
  ObjectId id = 0;
  std::string image_url;
  std::string label;

  friend bool operator==(const ObjectInfo&, const ObjectInfo&) = default;
};

/// Ids must be 0..n-1 in order; a header line starting with "id" is skipped.
inline std::vector<ObjectInfo> parse_manifest(const std::string& text) {
  std::vector<ObjectInfo> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split(line, ',');
    if (first && !f.empty() && f[0].rfind("id", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    if (f.size() < 2 || f.size() > 3) throw IoError("manifest: expected id,image_url,label");
    ObjectInfo o;
    o.id = static_cast<ObjectId>(parse_double(f[0]));
    if (o.id != out.size()) throw IoError("manifest: ids must be 0..n-1 in order");
    o.image_url = f[1];
    if (f.size() == 3) o.label = f[2];
    out.push_back(std::move(o));
  }
  return out;
}

inline json to_json(const ObjectInfo& o) { return {{"id", o.id}, {"image_url", o.image_url}, {"label", o.label}}; }

inline ObjectInfo object_from_json(const json& j) {
  return {j.at("id").get<ObjectId>(), j.value("image_url", std::string()), j.value("label", std::string())};
}

// ---------------------------------------------------------------------------
// Responses as JSON lines
// ---------------------------------------------------------------------------

inline json to_json(const Triple& t) { return {{"head", t.head}, {"left", t.left}, {"right", t.right}}; }

inline Triple triple_from_json(const json& j) {
  if (!j.is_object()) throw ProtocolError("triple must be an object");
  for (const char* k : {"head", "left", "right"})
    if (!j.contains(k) || !j[k].is_number_unsigned()) throw ProtocolError(std::string("triple field '") + k + "' must be a nonnegative integer");
  return {j["head"].get<ObjectId>(), j["left"].get<ObjectId>(), j["right"].get<ObjectId>()};
}

inline json to_json(const TripleResponse& r) {
  json j = to_json(r.triple);
  j["choice"] = std::string(to_string(r.choice));
  if (!r.worker.empty()) j["worker"] = r.worker;
  j["gold"] = r.gold;
  j["round"] = r.round;
  return j;
}

inline TripleResponse response_from_json(const json& j) {
  TripleResponse r;
  r.triple = triple_from_json(j);
  if (!j.contains("choice") || !j["choice"].is_string()) throw ProtocolError("response needs a string 'choice'");
  r.choice = choice_from_string(j["choice"].get<std::string>());
  if (j.contains("worker") && !j["worker"].is_null()) r.worker = j["worker"].get<std::string>();
  r.gold = j.value("gold", false);
  r.round = j.value("round", 0);
  return r;
}

inline std::string responses_jsonl(std::span<const TripleResponse> rs) {
  std::string out;
  for (const auto& r : rs) out += to_json(r).dump() + '\n';
  return out;
}

inline std::vector<TripleResponse> parse_responses_jsonl(const std::string& text) {
  std::vector<TripleResponse> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(response_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError("responses line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration documents. Every key is optional; unknown keys are errors.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ParameterError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ParameterError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline json to_json(const FitConfig& c) {
  return {{"dims", c.dims},
          {"learn_rate", c.learn_rate},
          {"epochs", c.epochs},
          {"restarts", c.restarts},
          {"seed", c.seed},
          {"mu", c.mu},
          {"head", to_string(c.head)},
          {"mode", to_string(c.mode)},
          {"unit_norm_rows", c.unit_norm_rows},
          {"max_halvings", c.max_halvings},
          {"projection_tol", c.projection_tol},
          {"projection_max_iter", c.projection_max_iter}};
}

inline void update_from_json(FitConfig& c, const json& j) {
  detail::check_keys(j, {"dims", "learn_rate", "epochs", "restarts", "seed", "mu", "head", "mode", "unit_norm_rows",
                         "max_halvings", "projection_tol", "projection_max_iter"},
                     "fit");
  detail::read(j, "dims", c.dims);
  detail::read(j, "learn_rate", c.learn_rate);
  detail::read(j, "epochs", c.epochs);
  detail::read(j, "restarts", c.restarts);
  detail::read(j, "seed", c.seed);
  detail::read(j, "mu", c.mu);
  if (j.contains("head")) c.head = head_from_string(j["head"].get<std::string>());
  if (j.contains("mode")) c.mode = fit_mode_from_string(j["mode"].get<std::string>());
  detail::read(j, "unit_norm_rows", c.unit_norm_rows);
  detail::read(j, "max_halvings", c.max_halvings);
  detail::read(j, "projection_tol", c.projection_tol);
  detail::read(j, "projection_max_iter", c.projection_max_iter);
}

inline json to_json(const PipelineConfig& c) {
  return {{"seed_triples", c.seed_triples}, {"rounds", c.rounds},
          {"fit", to_json(c.fit)},          {"sample_size", c.sample_size},
          {"warm_start", c.warm_start},     {"acquisition", to_string(c.acquisition)},
          {"seed", c.seed}};
}

inline void update_from_json(PipelineConfig& c, const json& j) {
  detail::check_keys(j, {"seed_triples", "rounds", "fit", "sample_size", "warm_start", "acquisition", "seed"},
                     "pipeline");
  detail::read(j, "seed_triples", c.seed_triples);
  detail::read(j, "rounds", c.rounds);
  if (j.contains("fit")) update_from_json(c.fit, j["fit"]);
  detail::read(j, "sample_size", c.sample_size);
  detail::read(j, "warm_start", c.warm_start);
  if (j.contains("acquisition")) c.acquisition = acquisition_from_string(j["acquisition"].get<std::string>());
  detail::read(j, "seed", c.seed);
}

inline json to_json(const SyntheticSpec& s) {
  return {{"kind", to_string(s.kind)}, {"n", s.n},         {"leaves", s.leaves}, {"dims", s.dims},
          {"scale", s.scale},          {"edge_growth", s.edge_growth}, {"spread", s.spread}, {"seed", s.seed}};
}

inline void update_from_json(SyntheticSpec& s, const json& j) {
  detail::check_keys(j, {"kind", "n", "leaves", "dims", "scale", "edge_growth", "spread", "seed"},
                     "synthetic");
  if (j.contains("kind")) s.kind = synthetic_kind_from_string(j["kind"].get<std::string>());
  detail::read(j, "n", s.n);
  detail::read(j, "leaves", s.leaves);
  detail::read(j, "dims", s.dims);
  detail::read(j, "scale", s.scale);
  detail::read(j, "edge_growth", s.edge_growth);
  detail::read(j, "spread", s.spread);
  detail::read(j, "seed", s.seed);
}

// Persisted fits carry the embedding at full precision so that restored
// state scores exactly like the original.
inline json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw IoError("matrix must be a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw IoError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline json to_json(const FitRecord& f) {
  return {{"round", f.round},     {"seed", f.seed},       {"responses", f.responses},
          {"loss", f.loss},       {"restart", f.restart}, {"warm", f.warm}};
}

inline FitRecord fit_record_from_json(const json& j) {
  return {j.at("round").get<int>(),    j.at("seed").get<std::uint64_t>(), j.at("responses").get<std::size_t>(),
          j.at("loss").get<double>(), j.at("restart").get<int>(),         j.at("warm").get<bool>()};
}

}  // namespace crowdkernel::io
