#include "apohf/json_io.hpp"

#include <cmath>
#include <sstream>

namespace apohf {

namespace {

[[noreturn]] void malformed(const std::string& where, const std::string& what) {
  throw DomainError(DomainErrorKind::kMalformedRecord, where + ": " + what);
}

std::string required_string(const json& j, const char* key,
                            const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    malformed(where, std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

Arm arm_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) malformed(where, "expected a JSON object");
  Arm arm;
  arm.id = required_string(j, "id", where);
  arm.text = j.contains("text") && j["text"].is_string()
                 ? j["text"].get<std::string>()
                 : std::string();
  auto it = j.find("embedding");
  if (it == j.end() || !it->is_array()) {
    malformed(where, "missing array field 'embedding'");
  }
  arm.embedding.resize(static_cast<Eigen::Index>(it->size()));
  Eigen::Index k = 0;
  for (const json& v : *it) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw DomainError(DomainErrorKind::kNonFiniteEmbedding,
                        where + ": arm '" + arm.id + "' entry " +
                            std::to_string(k));
    }
    arm.embedding[k++] = v.get<double>();
  }
  return arm;
}

json arm_to_json(const Arm& arm) {
  return json{{"id", arm.id},
              {"text", arm.text},
              {"embedding", vector_to_json(arm.embedding)}};
}

ArmDomain domain_from_json(const json& array) {
  if (!array.is_array()) {
    malformed("domain", "expected an array of arm objects");
  }
  std::vector<Arm> arms;
  arms.reserve(array.size());
  for (std::size_t i = 0; i < array.size(); ++i) {
    arms.push_back(arm_from_json(array[i], "arm " + std::to_string(i)));
  }
  return ArmDomain(std::move(arms));
}

json domain_to_json(const ArmDomain& domain) {
  json out = json::array();
  for (const Arm& arm : domain.arms()) out.push_back(arm_to_json(arm));
  return out;
}

ContextRound round_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) malformed(where, "expected a JSON object");
  std::string context_id = required_string(j, "context_id", where);
  std::string context_text = j.contains("context_text") &&
                                     j["context_text"].is_string()
                                 ? j["context_text"].get<std::string>()
                                 : std::string();
  auto it = j.find("candidates");
  if (it == j.end() || !it->is_array()) {
    malformed(where, "missing array field 'candidates'");
  }
  std::vector<Arm> arms;
  for (std::size_t i = 0; i < it->size(); ++i) {
    arms.push_back(arm_from_json((*it)[i], where + " candidate " +
                                               std::to_string(i)));
  }
  if (arms.empty()) {
    throw DomainError(DomainErrorKind::kEmpty,
                      where + ": context '" + context_id + "'");
  }
  return ContextRound{std::move(context_id), std::move(context_text),
                      ArmDomain(std::move(arms))};
}

json round_to_json(const ContextRound& round) {
  return json{{"context_id", round.context_id},
              {"context_text", round.context_text},
              {"candidates", domain_to_json(round.arms)}};
}

ArmDomain domain_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  return load_domain(in);
}

std::vector<ContextRound> rounds_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  return load_contextual(in);
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (double x : v) out.push_back(x);
  return out;
}

Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw std::runtime_error("expected a numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw std::runtime_error("expected a numeric array");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json record_to_json(const PreferenceRecord& record) {
  json j{{"iteration", record.iteration},
         {"first", record.first},
         {"second", record.second},
         {"outcome", record.outcome}};
  if (record.phi) j["phi"] = vector_to_json(*record.phi);
  if (record.context_id) j["context_id"] = *record.context_id;
  return j;
}

PreferenceRecord record_from_json(const json& j) {
  PreferenceRecord r;
  r.iteration = j.at("iteration").get<std::uint64_t>();
  r.first = j.at("first").get<std::size_t>();
  r.second = j.at("second").get<std::size_t>();
  r.outcome = j.at("outcome").get<int>();
  if (j.contains("phi")) r.phi = vector_from_json(j["phi"]);
  if (j.contains("context_id")) r.context_id = j["context_id"].get<std::string>();
  return r;
}

}  // namespace apohf
