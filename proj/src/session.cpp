#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <regex>
#include <sstream>

#include "apohf/json_io.hpp"
#include "apohf/service.hpp"

namespace apohf {

namespace {

constexpr int kSnapshotVersion = 1;

std::string now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

[[noreturn]] void unprocessable(const std::string& code, const std::string& message) {
  throw ServiceError(422, code, message);
}

bool valid_name(const std::string& s) {
  static const std::regex pattern("[A-Za-z0-9_.-]{1,128}");
  return std::regex_match(s, pattern) && s != "." && s != "..";
}

}  // namespace

SessionConfig SessionConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) unprocessable("invalid_config", "config must be an object");
  SessionConfig c;
  try {
    PolicySpec& p = c.policy;
    if (j.contains("policy")) p.kind = policy_kind_from_string(j["policy"].get<std::string>());
    if (j.contains("nu")) p.config.exploration_nu = j["nu"].get<double>();
    if (j.contains("lambda")) p.config.lambda = j["lambda"].get<double>();
    if (j.contains("uncertainty")) {
      const std::string mode = j["uncertainty"].get<std::string>();
      if (mode == "auto") {
        p.config.uncertainty_mode.reset();
      } else {
        p.config.uncertainty_mode = uncertainty_mode_from_string(mode);
      }
    }
    if (j.contains("exclude_first")) {
      p.config.exclude_first_from_second = j["exclude_first"].get<bool>();
    }
    if (j.contains("epochs")) p.train.epochs = j["epochs"].get<int>();
    if (j.contains("learning_rate")) p.train.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("widths")) p.widths = j["widths"].get<std::vector<int>>();
    if (j.contains("ensemble_members")) {
      p.ensemble.members = j["ensemble_members"].get<std::size_t>();
    }
    if (j.contains("ensemble_bootstrap")) {
      p.ensemble.bootstrap = j["ensemble_bootstrap"].get<bool>();
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("horizon")) c.horizon = j["horizon"].get<std::uint64_t>();
    p.validate();
    for (int w : p.widths) {
      if (w < 1) throw std::invalid_argument("hidden widths must be >= 1");
    }
  } catch (const ServiceError&) {
    throw;
  } catch (const std::exception& e) {
    unprocessable("invalid_config", e.what());
  }
  return c;
}

nlohmann::json SessionConfig::to_json() const {
  const PolicySpec& p = policy;
  json j{{"policy", apohf::to_string(p.kind)},
         {"nu", p.config.exploration_nu},
         {"lambda", p.config.lambda},
         {"exclude_first", p.config.exclude_first_from_second},
         {"epochs", p.train.epochs},
         {"learning_rate", p.train.learning_rate},
         {"widths", p.widths},
         {"ensemble_members", p.ensemble.members},
         {"ensemble_bootstrap", p.ensemble.bootstrap},
         {"seed", seed},
         {"horizon", horizon}};
  j["uncertainty"] =
      p.config.uncertainty_mode ? json(apohf::to_string(*p.config.uncertainty_mode)) : json("auto");
  return j;
}

Session::Session(std::string id, std::shared_ptr<const Problem> problem, SessionConfig config)
    : id_(std::move(id)),
      problem_(problem),
      config_(config),
      loop_(problem, config.policy, config.seed),
      created_at_(now_iso8601()),
      updated_at_(created_at_) {}

bool Session::has_pending() const {
  return config_.horizon == 0 || loop_.next_iteration() <= config_.horizon;
}

nlohmann::json Session::arm_json(std::size_t round, std::size_t arm) const {
  const Arm& a = problem_->round(round).arms.arm(arm);
  return json{{"id", a.id}, {"text", a.text}};
}

nlohmann::json Session::pending_json() {
  if (!has_pending()) return nullptr;
  const PendingPair& p = loop_.pending();
  json j{{"iteration", p.iteration},
         {"first", arm_json(p.round, p.first)},
         {"second", arm_json(p.round, p.second)}};
  if (problem_->contextual()) {
    const ContextRound& r = problem_->round(p.round);
    j["context"] = json{{"id", r.context_id}, {"text", r.context_text}};
  }
  return j;
}

nlohmann::json Session::submit(const std::string& chosen, const std::optional<std::string>& token,
                               std::optional<std::uint64_t> iteration) {
  if (token && last_token_ && *token == *last_token_) {
    if (chosen != last_chosen_) {
      throw ServiceError(409, "token_conflict",
                         "token was already used with a different choice");
    }
    return last_response_;
  }
  if (chosen != "first" && chosen != "second") {
    unprocessable("invalid_choice", "chosen must be \"first\" or \"second\"");
  }
  if (!has_pending()) {
    throw ServiceError(409, "no_pending_pair", "the session has no pending pair");
  }
  const PendingPair p = loop_.pending();
  if (iteration && *iteration != p.iteration) {
    throw ServiceError(409, "stale_pair",
                       "pair " + std::to_string(*iteration) + " is no longer pending");
  }
  loop_.complete(chosen == "first" ? 1 : 0);
  json response{{"pair", pending_json()},
                {"best", best_json()},
                {"iteration", iterations_completed()}};
  last_token_ = token;
  last_chosen_ = chosen;
  last_response_ = response;
  updated_at_ = now_iso8601();
  return response;
}

nlohmann::json Session::best_json() {
  if (iterations_completed() == 0) {
    throw ServiceError(409, "no_completed_iterations", "no preference has been recorded yet");
  }
  const std::size_t round = problem_->round_for_iteration(iterations_completed());
  const std::size_t best = loop_.report(round);
  json j = arm_json(round, best);
  j["iteration"] = iterations_completed();
  if (problem_->contextual()) j["context_id"] = problem_->round(round).context_id;
  return j;
}

nlohmann::json Session::public_state() {
  json history = json::array();
  for (const PreferenceRecord& r : loop_.history().records()) {
    const std::size_t round = problem_->round_of(r);
    const ArmDomain& arms = problem_->round(round).arms;
    json h{{"iteration", r.iteration},
           {"first", arms.arm(r.first).id},
           {"second", arms.arm(r.second).id},
           {"outcome", r.outcome}};
    if (r.context_id) h["context_id"] = *r.context_id;
    history.push_back(std::move(h));
  }
  json j{{"session_id", id_},
         {"config", config_.to_json()},
         {"iteration", iterations_completed()},
         {"pair", pending_json()},
         {"history", history},
         {"contextual", problem_->contextual()},
         {"created_at", created_at_},
         {"updated_at", updated_at_}};
  j["best"] = iterations_completed() > 0 ? best_json() : json(nullptr);
  if (problem_->contextual()) {
    j["contexts"] = problem_->num_rounds();
  } else {
    j["domain_size"] = problem_->round(0).arms.size();
  }
  return j;
}

nlohmann::json Session::snapshot() {
  json problem{{"contextual", problem_->contextual()}};
  if (problem_->contextual()) {
    json rounds = json::array();
    for (const ContextRound& r : problem_->rounds()) rounds.push_back(round_to_json(r));
    problem["rounds"] = rounds;
  } else {
    problem["domain"] = domain_to_json(problem_->round(0).arms);
  }
  json records = json::array();
  for (const PreferenceRecord& r : loop_.history().records()) records.push_back(record_to_json(r));
  json pending = nullptr;
  if (has_pending()) {
    const PendingPair& p = loop_.pending();
    pending = json{{"iteration", p.iteration}, {"first", p.first}, {"second", p.second}};
  }
  const UncertaintyState* state = loop_.policy().uncertainty_state();
  return json{{"version", kSnapshotVersion},
              {"id", id_},
              {"created_at", created_at_},
              {"updated_at", updated_at_},
              {"config", config_.to_json()},
              {"problem", problem},
              {"domain_hash", hex64(problem_->hash())},
              {"records", records},
              {"next_iteration", loop_.next_iteration()},
              {"pending", pending},
              {"uncertainty_digest", state ? json(state->digest()) : json(nullptr)},
              {"last_token", last_token_ ? json(*last_token_) : json(nullptr)},
              {"last_chosen", last_chosen_},
              {"last_response", last_response_}};
}

Session Session::from_snapshot(const nlohmann::json& j) {
  if (j.value("version", 0) != kSnapshotVersion) {
    throw std::runtime_error("unsupported snapshot version");
  }
  const json& pj = j.at("problem");
  std::shared_ptr<const Problem> problem;
  if (pj.at("contextual").get<bool>()) {
    std::vector<ContextRound> rounds;
    for (const json& r : pj.at("rounds")) rounds.push_back(round_from_json(r, "snapshot"));
    problem = std::make_shared<const Problem>(std::move(rounds));
  } else {
    problem = std::make_shared<const Problem>(domain_from_json(pj.at("domain")));
  }
  if (hex64(problem->hash()) != j.at("domain_hash").get<std::string>()) {
    throw std::runtime_error("snapshot domain does not match its hash");
  }
  SessionConfig config = SessionConfig::from_json(j.at("config"));
  History history;
  for (const json& r : j.at("records")) history.append(record_from_json(r));

  Session s(j.at("id").get<std::string>(), problem, config, PreferenceLoop::restore(
      problem, config.policy, config.seed, history, j.at("next_iteration").get<std::uint64_t>()));
  s.created_at_ = j.value("created_at", std::string());
  s.updated_at_ = j.value("updated_at", std::string());
  if (!j.at("last_token").is_null()) s.last_token_ = j["last_token"].get<std::string>();
  s.last_chosen_ = j.value("last_chosen", std::string());
  s.last_response_ = j.value("last_response", json());

  const json& pending = j.at("pending");
  if (!pending.is_null()) {
    const PendingPair& p = s.loop_.pending();
    if (p.iteration != pending.at("iteration").get<std::uint64_t>() ||
        p.first != pending.at("first").get<std::size_t>() ||
        p.second != pending.at("second").get<std::size_t>()) {
      throw std::runtime_error("replay check failed: pending pair differs from snapshot");
    }
  }
  const UncertaintyState* state = s.loop_.policy().uncertainty_state();
  const json& digest = j.at("uncertainty_digest");
  if (state && !digest.is_null() && state->digest() != digest.get<double>()) {
    throw std::runtime_error("replay check failed: uncertainty state differs from snapshot");
  }
  return s;
}

Session::Session(std::string id, std::shared_ptr<const Problem> problem, SessionConfig config,
                 PreferenceLoop loop)
    : id_(std::move(id)),
      problem_(std::move(problem)),
      config_(std::move(config)),
      loop_(std::move(loop)) {}

std::shared_ptr<const Problem> problem_from_request(const nlohmann::json& body,
                                                    const std::filesystem::path& domains_dir) {
  if (!body.is_object()) unprocessable("invalid_request", "body must be a JSON object");
  try {
    if (body.contains("contextual")) {
      const json& c = body["contextual"];
      if (c.is_string()) return std::make_shared<const Problem>(rounds_from_jsonl(c.get<std::string>()));
      if (!c.is_array()) unprocessable("invalid_domain", "contextual must be an array or JSONL text");
      std::vector<ContextRound> rounds;
      for (std::size_t i = 0; i < c.size(); ++i) {
        rounds.push_back(round_from_json(c[i], "context " + std::to_string(i)));
      }
      return std::make_shared<const Problem>(std::move(rounds));
    }
    if (body.contains("domain")) {
      const json& d = body["domain"];
      if (d.is_string()) return std::make_shared<const Problem>(domain_from_jsonl(d.get<std::string>()));
      return std::make_shared<const Problem>(domain_from_json(d));
    }
    if (body.contains("domain_ref")) {
      const std::string name = body["domain_ref"].get<std::string>();
      if (!valid_name(name)) unprocessable("invalid_domain", "invalid domain_ref");
      const std::filesystem::path path = domains_dir / name;
      if (!std::filesystem::exists(path)) {
        unprocessable("invalid_domain", "domain_ref '" + name + "' not found");
      }
      return std::make_shared<const Problem>(load_domain_file(path.string()));
    }
  } catch (const DomainError& e) {
    unprocessable("invalid_domain", e.what());
  } catch (const json::exception& e) {
    unprocessable("invalid_domain", e.what());
  }
  unprocessable("invalid_domain", "request needs one of domain, contextual or domain_ref");
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  if (const char* v = std::getenv("APOHF_BIND")) c.bind_address = v;
  if (const char* v = std::getenv("APOHF_PORT")) c.port = std::atoi(v);
  if (const char* v = std::getenv("APOHF_DATA_DIR")) c.data_dir = v;
  return c;
}

SessionStore::SessionStore(std::filesystem::path data_dir) : data_dir_(std::move(data_dir)) {
  std::filesystem::create_directories(data_dir_ / "sessions");
}

std::filesystem::path SessionStore::snapshot_path(const std::string& id) const {
  return data_dir_ / "sessions" / (id + ".json");
}

std::shared_ptr<SessionStore::Slot> SessionStore::slot(const std::string& id) {
  if (!valid_name(id)) throw ServiceError(404, "unknown_session", "unknown session '" + id + "'");
  std::lock_guard lock(mu_);
  auto& s = slots_[id];
  if (!s) s = std::make_shared<Slot>();
  return s;
}

Session& SessionStore::load(Slot& slot, const std::string& id) {
  if (slot.session) return *slot.session;
  const auto path = snapshot_path(id);
  std::ifstream in(path);
  if (!in) throw ServiceError(404, "unknown_session", "unknown session '" + id + "'");
  json j;
  try {
    j = json::parse(in);
    slot.session.emplace(Session::from_snapshot(j));
  } catch (const std::exception& e) {
    throw ServiceError(500, "corrupt_session", "session '" + id + "': " + e.what());
  }
  return *slot.session;
}

void SessionStore::persist(Session& session) {
  const auto path = snapshot_path(session.id());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << session.snapshot().dump();
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json SessionStore::create(const nlohmann::json& body) {
  auto problem = problem_from_request(body, data_dir_ / "domains");
  SessionConfig config = SessionConfig::from_json(body.value("config", json::object()));
  if (problem->contextual() || problem->round(0).arms.size() < 2) {
    bool too_small = false;
    for (const ContextRound& r : problem->rounds()) too_small |= r.arms.size() < 2;
    if (too_small) unprocessable("invalid_domain", "every domain needs at least 2 arms");
  }
  std::random_device rd;
  std::string id;
  std::shared_ptr<Slot> s;
  for (;;) {
    id = hex64((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    s = slot(id);
    if (!std::filesystem::exists(snapshot_path(id))) break;
  }
  std::lock_guard lock(s->mu);
  s->session.emplace(id, problem, config);
  try {
    persist(*s->session);
  } catch (const std::exception& e) {
    s->session.reset();
    throw ServiceError(500, "storage_failure", e.what());
  }
  return json{{"session_id", id}, {"pair", s->session->pending_json()}};
}

nlohmann::json SessionStore::submit(const std::string& id, const nlohmann::json& body) {
  auto s = slot(id);
  std::lock_guard lock(s->mu);
  Session& session = load(*s, id);
  if (!body.is_object() || !body.contains("chosen") || !body["chosen"].is_string()) {
    unprocessable("invalid_choice", "body needs chosen: \"first\" | \"second\"");
  }
  std::optional<std::string> token;
  if (body.contains("token") && body["token"].is_string()) token = body["token"].get<std::string>();
  std::optional<std::uint64_t> iteration;
  if (body.contains("iteration") && !body["iteration"].is_null()) {
    const json& it = body["iteration"];
    if (!it.is_number_integer() || it.get<std::int64_t>() < 0) {
      unprocessable("invalid_iteration", "iteration must be a non-negative integer");
    }
    iteration = it.get<std::uint64_t>();
  }
  json response = session.submit(body["chosen"].get<std::string>(), token, iteration);
  try {
    persist(session);
  } catch (const std::exception& e) {
    // Fall back to the last durable state on the next access.
    s->session.reset();
    throw ServiceError(500, "storage_failure", e.what());
  }
  return response;
}

nlohmann::json SessionStore::best(const std::string& id) {
  auto s = slot(id);
  std::lock_guard lock(s->mu);
  return load(*s, id).best_json();
}

nlohmann::json SessionStore::state(const std::string& id) {
  auto s = slot(id);
  std::lock_guard lock(s->mu);
  return load(*s, id).public_state();
}

}  // namespace apohf
