#pragma once

// JSON conversions shared by the file readers, the results writer and the
// session snapshot.

#include <string>
#include <vector>

#include <json.hpp>

#include "apohf/domain.hpp"

namespace apohf {

using json = nlohmann::json;

// Parses one {"id","text","embedding"} object. `where` prefixes error text.
Arm arm_from_json(const json& j, const std::string& where);
json arm_to_json(const Arm& arm);

// Builds a validated domain from a JSON array of arm objects.
ArmDomain domain_from_json(const json& array);
json domain_to_json(const ArmDomain& domain);

ContextRound round_from_json(const json& j, const std::string& where);
json round_to_json(const ContextRound& round);

// Parses JSONL text (one arm per line, or one context round per line).
ArmDomain domain_from_jsonl(const std::string& text);
std::vector<ContextRound> rounds_from_jsonl(const std::string& text);

json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j);

json record_to_json(const PreferenceRecord& record);
PreferenceRecord record_from_json(const json& j);

}  // namespace apohf
