#pragma once

// Live human-in-the-loop sessions: lifecycle, pending-pair exposure,
// preference submission, best-so-far reporting and durable snapshots.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "apohf/domain.hpp"
#include "apohf/loop.hpp"
#include "apohf/policy.hpp"

namespace apohf {

// Error carrying the HTTP status it maps to.
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

struct SessionConfig {
  PolicySpec policy;
  std::uint64_t seed = 0;
  // 0 means unbounded.
  std::uint64_t horizon = 0;

  static SessionConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

class Session {
 public:
  Session(std::string id, std::shared_ptr<const Problem> problem, SessionConfig config);

  const std::string& id() const { return id_; }
  std::uint64_t iterations_completed() const { return loop_.next_iteration() - 1; }
  const History& history() const { return loop_.history(); }
  const PreferenceLoop& loop() const { return loop_; }
  bool has_pending() const;

  // {iteration, first:{id,text}, second:{id,text}[, context:{id,text}]} or null.
  nlohmann::json pending_json();
  // Completes the pending pair. Retries carrying the last accepted token get
  // the original response back without touching the history.
  nlohmann::json submit(const std::string& chosen, const std::optional<std::string>& token,
                        std::optional<std::uint64_t> iteration);
  nlohmann::json best_json();
  nlohmann::json public_state();

  nlohmann::json snapshot();
  // Rebuilds from a snapshot and checks the recomputed pending pair and
  // uncertainty digest against the stored ones.
  static Session from_snapshot(const nlohmann::json& j);

 private:
  Session(std::string id, std::shared_ptr<const Problem> problem, SessionConfig config,
          PreferenceLoop loop);
  nlohmann::json arm_json(std::size_t round, std::size_t arm) const;

  std::string id_;
  std::shared_ptr<const Problem> problem_;
  SessionConfig config_;
  PreferenceLoop loop_;
  std::string created_at_;
  std::string updated_at_;
  std::optional<std::string> last_token_;
  nlohmann::json last_response_;
  std::string last_chosen_;
};

// Parses the domain part of a create request: "domain" (array of arms or
// JSONL text) or "contextual" (array of rounds or JSONL text).
std::shared_ptr<const Problem> problem_from_request(const nlohmann::json& body,
                                                    const std::filesystem::path& domains_dir);

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "apohf-data";

  // APOHF_BIND, APOHF_PORT and APOHF_DATA_DIR override the defaults.
  static ServiceConfig from_env();
};

// Sessions keyed by id, persisted as one JSON snapshot per session written
// by write-temp-then-rename. One writer per session at a time.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path data_dir);

  // Returns {session_id, pair}.
  nlohmann::json create(const nlohmann::json& body);
  nlohmann::json submit(const std::string& id, const nlohmann::json& body);
  nlohmann::json best(const std::string& id);
  nlohmann::json state(const std::string& id);

  std::filesystem::path snapshot_path(const std::string& id) const;
  const std::filesystem::path& data_dir() const { return data_dir_; }

 private:
  struct Slot {
    std::mutex mu;
    std::optional<Session> session;
  };

  std::shared_ptr<Slot> slot(const std::string& id);
  Session& load(Slot& slot, const std::string& id);
  void persist(Session& session);

  std::filesystem::path data_dir_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

// Builds the HTTP routes over `store` and serves until stopped.
class HttpService {
 public:
  HttpService(SessionStore& store);
  ~HttpService();

  // Binds and serves on the calling thread.
  bool listen(const std::string& host, int port);
  // Binds to an ephemeral port; returns it.
  int bind_any(const std::string& host);
  void serve_bound();
  // Blocks until serve_bound has started accepting.
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EmbeddingClientConfig {
  // Endpoint URL, e.g. http://127.0.0.1:9000/embed
  std::string url;
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{100};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_backoff{5000};
  std::chrono::seconds timeout{30};
};

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// POST {"texts": [...]} -> {"embeddings": [[...], ...]}. Transport failures
// and 5xx responses are retried with exponential backoff.
std::vector<Vector> fetch_embeddings(const EmbeddingClientConfig& config,
                                     const std::vector<std::string>& texts);

}  // namespace apohf
