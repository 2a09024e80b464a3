#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "binary_io.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "formats.hpp"
#include "kmeans.hpp"
#include "labels.hpp"
#include "patches.hpp"
#include "prototypes.hpp"

namespace protoseg {

namespace fs = std::filesystem;

/// Error surfaced to HTTP clients as {code, message} with `status`.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

struct SessionRequest {
  fs::path clustering;  // ClusteringResult JSON
  fs::path patches;     // ESF whose rows match the clustering
  TissueLabelMap label_map;
  std::size_t t = 10;
  SamplingStrategy strategy = SamplingStrategy::central;
  std::uint64_t seed = 0;
};

/// Human labeling sessions. Each session is persisted as an append-only
/// JSON-lines event log `<dir>/<id>.jsonl` (one "created" event, then
/// "verdict" events) and rebuilt by replaying that log on startup.
/// Verdict writes on one session are serialized by that session's mutex.
class LabelingSessionStore {
 public:
  explicit LabelingSessionStore(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    for (const auto& e : fs::directory_iterator(dir_)) {
      if (e.path().extension() == ".jsonl") replay(e.path());
    }
  }

  std::string start_session(const SessionRequest& req) {
    std::string id = new_id();
    auto s = std::make_shared<Session>();
    s->id = id;
    s->request = req;
    s->created = now();
    s->updated = s->created;
    load_artifacts(*s);
    const nlohmann::json event = {{"event", "created"},
                                  {"session_id", id},
                                  {"clustering", req.clustering.string()},
                                  {"patches", req.patches.string()},
                                  {"label_map", to_json_value(req.label_map)},
                                  {"t", req.t},
                                  {"strategy", to_string(req.strategy)},
                                  {"seed", req.seed},
                                  {"at", s->created}};
    append_event(*s, event);
    std::unique_lock lock(sessions_mutex_);
    sessions_[id] = s;
    return id;
  }

  std::vector<std::string> session_ids() const {
    std::shared_lock lock(sessions_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
  }

  nlohmann::json summary(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return summary_locked(*s);
  }

  nlohmann::json clusters(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t j = 0; j < s->clustering.k; ++j) arr.push_back(cluster_brief(*s, j));
    return {{"session_id", id}, {"clusters", arr}};
  }

  nlohmann::json cluster_card(const std::string& id, std::size_t cluster_index) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    check_cluster(*s, cluster_index);
    auto card = cluster_brief(*s, cluster_index);
    nlohmann::json reps = nlohmann::json::array();
    const auto& ids = s->representatives[cluster_index];
    for (std::size_t j = 0; j < ids.size(); ++j) {
      reps.push_back({{"index", j},
                      {"patch_id", ids[j]},
                      {"thumbnail_url", "/sessions/" + id + "/clusters/" + std::to_string(cluster_index) + "/patches/" +
                                            std::to_string(j) + "/thumbnail"}});
    }
    card["representatives"] = std::move(reps);
    card["strategy"] = to_string(s->request.strategy);
    card["label_map"] = to_json_value(s->request.label_map);
    return card;
  }

  /// Thumbnail file of the j-th representative of a cluster.
  fs::path thumbnail_path(const std::string& id, std::size_t cluster_index, std::size_t j) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    check_cluster(*s, cluster_index);
    const auto& ids = s->representatives[cluster_index];
    if (j >= ids.size()) throw ServiceError(404, "not_found", "no representative " + std::to_string(j));
    const auto& rec = s->patches.records[s->row_of.at(ids[j])];
    if (!rec.thumbnail) throw ServiceError(404, "not_found", "patch has no thumbnail");
    fs::path p(*rec.thumbnail);
    if (p.is_relative()) p = s->request.patches.parent_path() / p;
    return p;
  }

  /// Records a verdict. A decided cluster is only overwritten with `revise`.
  nlohmann::json post_verdict(const std::string& id, std::size_t cluster_index, Decision decision, bool revise) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    check_cluster(*s, cluster_index);
    if (s->finalized) throw ServiceError(409, "finalized", "session already finalized");
    if (decision && !s->request.label_map.contains(*decision)) {
      throw ServiceError(400, "unknown_class", "class id " + std::to_string(*decision) + " is not in the label map");
    }
    if (s->verdicts[cluster_index] && !revise) {
      throw ServiceError(409, "already_decided", "cluster " + std::to_string(cluster_index) + " already has a verdict");
    }
    const std::string at = now();
    nlohmann::json event = {{"event", "verdict"},
                            {"cluster", cluster_index},
                            {"decision", decision ? "tissue" : "drop"},
                            {"revision", revise},
                            {"at", at}};
    if (decision) event["class_id"] = *decision;
    append_event(*s, event);
    apply_verdict(*s, cluster_index, decision, at);
    return {{"cluster", cluster_index},
            {"status", "decided"},
            {"remaining_pending", pending_count(*s)},
            {"complete", pending_count(*s) == 0}};
  }

  /// Builds the dictionary from the recorded verdicts, writes it to
  /// `<dir>/<id>.dictionary.json` and returns the file contents.
  std::string finalize(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (pending_count(*s) != 0) {
      throw ServiceError(409, "incomplete", std::to_string(pending_count(*s)) + " clusters are still pending");
    }
    std::vector<ClusterVerdict> verdicts;
    for (const auto& v : s->verdicts) verdicts.push_back(*v);
    PrototypeDictionary dict;
    try {
      dict = build_dictionary(s->clustering, verdicts, s->request.label_map);
    } catch (const NumericError& e) {
      throw ServiceError(422, "empty_dictionary", e.what());
    }
    const std::string text = encode_dictionary(dict);
    write_file_bytes(dir_ / (id + ".dictionary.json"), text);
    if (!s->finalized) {
      append_event(*s, {{"event", "finalized"}, {"at", now()}});
      s->finalized = true;
    }
    return text;
  }

  /// SHA-256 over the session's logical state (request, verdicts, flags).
  std::string state_digest(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    nlohmann::json state = summary_locked(*s);
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : s->verdicts) verdicts.push_back(v ? to_json_value(*v) : nlohmann::json(nullptr));
    state["verdicts"] = std::move(verdicts);
    state["representatives"] = s->representatives;
    return sha256_hex(state.dump());
  }

  const fs::path& directory() const { return dir_; }

 private:
  struct Session {
    std::string id;
    SessionRequest request;
    std::string created;
    std::string updated;
    ClusteringResult clustering;
    PatchEmbeddingSet patches;
    std::unordered_map<std::uint64_t, std::size_t> row_of;
    std::vector<std::vector<std::uint64_t>> representatives;
    std::vector<std::optional<ClusterVerdict>> verdicts;
    bool finalized = false;
    mutable std::mutex mutex;
  };

  static std::string now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&t, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
  }

  static std::string new_id() {
    std::random_device rd;
    const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session " + id);
    return it->second;
  }

  static void check_cluster(const Session& s, std::size_t j) {
    if (j >= s.clustering.k) throw ServiceError(404, "not_found", "unknown cluster " + std::to_string(j));
  }

  static std::size_t pending_count(const Session& s) {
    std::size_t n = 0;
    for (const auto& v : s.verdicts) n += v ? 0 : 1;
    return n;
  }

  static nlohmann::json cluster_brief(const Session& s, std::size_t j) {
    nlohmann::json c = {{"cluster", j},
                        {"size", s.clustering.cluster_sizes[j]},
                        {"representative_count", s.representatives[j].size()},
                        {"status", s.verdicts[j] ? "decided" : "pending"}};
    if (s.verdicts[j]) c["verdict"] = to_json_value(*s.verdicts[j]);
    return c;
  }

  static nlohmann::json summary_locked(const Session& s) {
    const std::size_t pending = pending_count(s);
    return {{"session_id", s.id},
            {"k", s.clustering.k},
            {"t", s.request.t},
            {"strategy", to_string(s.request.strategy)},
            {"label_map", to_json_value(s.request.label_map)},
            {"pending", pending},
            {"decided", s.clustering.k - pending},
            {"state", pending == 0 ? "complete" : "in_progress"},
            {"finalized", s.finalized},
            {"created", s.created},
            {"updated", s.updated}};
  }

  static void load_artifacts(Session& s) {
    try {
      s.clustering = clustering_from_json(nlohmann::json::parse(read_file_text(s.request.clustering)));
      s.patches = read_esf(s.request.patches);
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError(400, "bad_artifact", e.what());
    } catch (const Error& e) {
      throw ServiceError(400, "bad_artifact", e.what());
    }
    if (s.patches.size() != s.clustering.point_count() || s.patches.dim != s.clustering.dim) {
      throw ServiceError(400, "bad_artifact", "patch set does not match the clustering");
    }
    if (s.request.t < 1) throw ServiceError(400, "bad_request", "t must be >= 1");
    s.request.label_map.validate();
    for (std::size_t i = 0; i < s.patches.size(); ++i) s.row_of[s.patches.records[i].patch_id] = i;
    s.representatives =
        sample_all_representatives(s.patches, s.clustering, s.request.t, s.request.strategy, s.request.seed);
    s.verdicts.assign(s.clustering.k, std::nullopt);
  }

  static void apply_verdict(Session& s, std::size_t j, Decision decision, const std::string& at) {
    ClusterVerdict v;
    v.cluster_index = j;
    v.decision = decision;
    v.decided_by = "human";
    v.inspected_patch_ids = s.representatives[j];
    s.verdicts[j] = std::move(v);
    s.updated = at;
  }

  void append_event(const Session& s, const nlohmann::json& event) const {
    const auto path = dir_ / (s.id + ".jsonl");
    std::ofstream out(path, std::ios::app | std::ios::binary);
    const std::string line = event.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) throw ServiceError(500, "io_error", "cannot append to " + path.string());
  }

  void replay(const fs::path& log) {
    std::istringstream lines(read_file_text(log));
    std::string line;
    std::shared_ptr<Session> s;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      nlohmann::json e;
      try {
        e = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        break;  // torn final line after a crash
      }
      const auto kind = e.value("event", std::string());
      if (kind == "created") {
        s = std::make_shared<Session>();
        s->id = e.at("session_id").get<std::string>();
        s->request.clustering = e.at("clustering").get<std::string>();
        s->request.patches = e.at("patches").get<std::string>();
        s->request.label_map = label_map_from_json(e.at("label_map"));
        s->request.t = e.at("t").get<std::size_t>();
        s->request.strategy = parse_sampling_strategy(e.at("strategy").get<std::string>());
        s->request.seed = e.at("seed").get<std::uint64_t>();
        s->created = s->updated = e.at("at").get<std::string>();
        load_artifacts(*s);
      } else if (kind == "verdict" && s) {
        Decision d;
        if (e.at("decision").get<std::string>() == "tissue") d = e.at("class_id").get<ClassId>();
        apply_verdict(*s, e.at("cluster").get<std::size_t>(), d, e.at("at").get<std::string>());
      } else if (kind == "finalized" && s) {
        s->finalized = true;
      }
    }
    if (s) sessions_[s->id] = s;
  }

  fs::path dir_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    send_error(res, e.status(), e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const Error& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

inline std::size_t index_param(const httplib::Request& req, std::size_t i) {
  return static_cast<std::size_t>(std::stoull(req.matches[i].str()));
}

}  // namespace detail

/// Request body for POST /sessions. "label_map" may be an inline array or a
/// path to a label-map JSON file.
inline SessionRequest session_request_from_json(const nlohmann::json& j) {
  SessionRequest r;
  r.clustering = j.at("clustering").get<std::string>();
  r.patches = j.at("patches").get<std::string>();
  const auto& lm = j.at("label_map");
  r.label_map = lm.is_string() ? label_map_from_json(nlohmann::json::parse(read_file_text(lm.get<std::string>())))
                               : label_map_from_json(lm);
  r.t = j.value("t", std::size_t{10});
  r.strategy = parse_sampling_strategy(j.value("strategy", std::string("central")));
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

/// Registers the labeling API on `server`.
inline void install_labeling_routes(httplib::Server& server, LabelingSessionStore& store,
                                    const std::string& cors_origin = "*") {
  server.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/sessions", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const auto id = store.start_session(session_request_from_json(nlohmann::json::parse(req.body)));
      detail::send_json(res, 201, store.summary(id));
    });
  });
  server.Get(R"(/sessions/([0-9a-f]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, store.summary(req.matches[1].str())); });
  });
  server.Get(R"(/sessions/([0-9a-f]+)/clusters)", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, store.clusters(req.matches[1].str())); });
  });
  server.Get(R"(/sessions/([0-9a-f]+)/clusters/(\d+))", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      detail::send_json(res, 200, store.cluster_card(req.matches[1].str(), detail::index_param(req, 2)));
    });
  });
  server.Get(R"(/sessions/([0-9a-f]+)/clusters/(\d+)/patches/(\d+)/thumbnail)",
             [&store](const httplib::Request& req, httplib::Response& res) {
               detail::guarded(res, [&] {
                 const auto path =
                     store.thumbnail_path(req.matches[1].str(), detail::index_param(req, 2), detail::index_param(req, 3));
                 std::string bytes;
                 try {
                   bytes = read_file_text(path);
                 } catch (const IoError&) {
                   throw ServiceError(404, "not_found", "thumbnail file missing: " + path.string());
                 }
                 res.status = 200;
                 res.set_content(bytes, path.extension() == ".png" ? "image/png" : "image/x-portable-pixmap");
               });
             });
  server.Post(R"(/sessions/([0-9a-f]+)/clusters/(\d+)/verdict)",
              [&store](const httplib::Request& req, httplib::Response& res) {
                detail::guarded(res, [&] {
                  const auto body = nlohmann::json::parse(req.body);
                  const auto kind = body.at("decision").get<std::string>();
                  Decision d;
                  if (kind == "tissue") {
                    d = body.at("class_id").get<ClassId>();
                  } else if (kind != "drop") {
                    throw ServiceError(400, "bad_request", "decision must be 'tissue' or 'drop'");
                  }
                  detail::send_json(res, 200,
                                    store.post_verdict(req.matches[1].str(), detail::index_param(req, 2), d,
                                                       body.value("revise", false)));
                });
              });
  server.Post(R"(/sessions/([0-9a-f]+)/finalize)", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      res.status = 200;
      res.set_content(store.finalize(req.matches[1].str()), "application/json");
    });
  });
}

}  // namespace protoseg
