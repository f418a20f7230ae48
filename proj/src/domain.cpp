#include "apohf/domain.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "apohf/json_io.hpp"

namespace apohf {

const char* to_string(DomainErrorKind kind) {
  switch (kind) {
    case DomainErrorKind::kMalformedRecord:
      return "malformed record";
    case DomainErrorKind::kDimensionMismatch:
      return "dimension mismatch";
    case DomainErrorKind::kNonFiniteEmbedding:
      return "non-finite embedding";
    case DomainErrorKind::kDuplicateId:
      return "duplicate id";
    case DomainErrorKind::kEmpty:
      return "empty domain";
  }
  return "unknown";
}

DomainError::DomainError(DomainErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) +
                         (detail.empty() ? "" : ": " + detail)),
      kind_(kind) {}

ArmDomain::ArmDomain(std::vector<Arm> arms) : arms_(std::move(arms)) {
  if (arms_.empty()) throw DomainError(DomainErrorKind::kEmpty, "no arms");
  const Eigen::Index d = arms_.front().embedding.size();
  if (d < 1) {
    throw DomainError(DomainErrorKind::kDimensionMismatch,
                      "arm '" + arms_.front().id + "' has an empty embedding");
  }
  embeddings_.resize(static_cast<Eigen::Index>(arms_.size()), d);
  index_.reserve(arms_.size());
  for (std::size_t i = 0; i < arms_.size(); ++i) {
    const Arm& arm = arms_[i];
    if (arm.embedding.size() != d) {
      throw DomainError(DomainErrorKind::kDimensionMismatch,
                        "arm '" + arm.id + "' has dimension " +
                            std::to_string(arm.embedding.size()) +
                            ", expected " + std::to_string(d));
    }
    if (!arm.embedding.allFinite()) {
      throw DomainError(DomainErrorKind::kNonFiniteEmbedding,
                        "arm '" + arm.id + "'");
    }
    if (!index_.emplace(arm.id, i).second) {
      throw DomainError(DomainErrorKind::kDuplicateId, "'" + arm.id + "'");
    }
    embeddings_.row(static_cast<Eigen::Index>(i)) = arm.embedding.transpose();
  }
}

std::optional<std::size_t> ArmDomain::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void History::append(PreferenceRecord record) {
  if (record.iteration <= last_iteration()) {
    throw HistoryError("iteration " + std::to_string(record.iteration) +
                       " does not exceed last stored iteration " +
                       std::to_string(last_iteration()));
  }
  if (record.outcome != 0 && record.outcome != 1) {
    throw HistoryError("outcome must be 0 or 1");
  }
  if (record.first == record.second) {
    throw HistoryError("a record must compare two distinct arms");
  }
  if (record.phi && !record.phi->allFinite()) {
    throw HistoryError("phi has non-finite entries");
  }
  records_.push_back(std::move(record));
}

History History::prefix(std::size_t count) const {
  History out;
  out.records_.assign(records_.begin(),
                      records_.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(count, records_.size())));
  return out;
}

namespace {

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DomainError(DomainErrorKind::kMalformedRecord,
                        "line " + std::to_string(line_no) + ": " + e.what());
    }
    fn(j, "line " + std::to_string(line_no));
  }
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return in;
}

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void string(const std::string& s) {
    const std::uint64_t n = s.size();
    bytes(&n, sizeof n);
    bytes(s.data(), s.size());
  }
  void domain(const ArmDomain& domain) {
    const std::uint64_t n = domain.size();
    bytes(&n, sizeof n);
    for (const Arm& arm : domain.arms()) {
      string(arm.id);
      string(arm.text);
      for (double v : arm.embedding) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        bytes(&bits, sizeof bits);
      }
    }
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace

ArmDomain load_domain(std::istream& in) {
  std::vector<Arm> arms;
  for_each_line(in, [&](const json& j, const std::string& where) {
    arms.push_back(arm_from_json(j, where));
  });
  return ArmDomain(std::move(arms));
}

ArmDomain load_domain_file(const std::string& path) {
  auto in = open_or_throw(path);
  return load_domain(in);
}

std::vector<ContextRound> load_contextual(std::istream& in) {
  std::vector<ContextRound> rounds;
  std::unordered_set<std::string> seen;
  for_each_line(in, [&](const json& j, const std::string& where) {
    ContextRound round = round_from_json(j, where);
    if (!rounds.empty() && round.arms.dim() != rounds.front().arms.dim()) {
      throw DomainError(DomainErrorKind::kDimensionMismatch,
                        where + ": context '" + round.context_id +
                            "' differs in dimension from earlier contexts");
    }
    if (!seen.insert(round.context_id).second) {
      throw DomainError(DomainErrorKind::kDuplicateId,
                        where + ": context '" + round.context_id + "'");
    }
    rounds.push_back(std::move(round));
  });
  if (rounds.empty()) throw DomainError(DomainErrorKind::kEmpty, "no contexts");
  return rounds;
}

std::vector<ContextRound> load_contextual_file(const std::string& path) {
  auto in = open_or_throw(path);
  return load_contextual(in);
}

void write_domain(std::ostream& out, const ArmDomain& domain) {
  for (const Arm& arm : domain.arms()) out << arm_to_json(arm).dump() << '\n';
}

void write_contextual(std::ostream& out, std::span<const ContextRound> rounds) {
  for (const ContextRound& round : rounds) {
    out << round_to_json(round).dump() << '\n';
  }
}

std::uint64_t domain_hash(const ArmDomain& domain) {
  Fnv1a h;
  h.domain(domain);
  return h.value();
}

std::uint64_t domain_hash(std::span<const ContextRound> rounds) {
  Fnv1a h;
  for (const ContextRound& round : rounds) {
    h.string(round.context_id);
    h.string(round.context_text);
    h.domain(round.arms);
  }
  return h.value();
}

ArmDomain unit_normalized(const ArmDomain& domain) {
  std::vector<Arm> arms = domain.arms();
  for (Arm& arm : arms) {
    const double norm = arm.embedding.norm();
    if (norm > 0.0) arm.embedding /= norm;
  }
  return ArmDomain(std::move(arms));
}

Problem::Problem(ArmDomain domain) : contextual_(false) {
  rounds_.push_back(ContextRound{std::string(), std::string(), std::move(domain)});
  round_index_.emplace(std::string(), 0);
}

Problem::Problem(std::vector<ContextRound> rounds)
    : rounds_(std::move(rounds)), contextual_(true) {
  if (rounds_.empty()) throw DomainError(DomainErrorKind::kEmpty, "no contexts");
  for (std::size_t r = 0; r < rounds_.size(); ++r) {
    if (rounds_[r].arms.dim() != rounds_.front().arms.dim()) {
      throw DomainError(DomainErrorKind::kDimensionMismatch,
                        "context '" + rounds_[r].context_id + "'");
    }
    if (!round_index_.emplace(rounds_[r].context_id, r).second) {
      throw DomainError(DomainErrorKind::kDuplicateId,
                        "context '" + rounds_[r].context_id + "'");
    }
  }
}

std::size_t Problem::round_for_iteration(std::uint64_t t) const {
  if (t == 0) throw std::invalid_argument("iterations are 1-based");
  return static_cast<std::size_t>((t - 1) % rounds_.size());
}

std::optional<std::size_t> Problem::round_index(const std::string& context_id) const {
  auto it = round_index_.find(context_id);
  if (it == round_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Problem::round_of(const PreferenceRecord& record) const {
  const std::string key = record.context_id.value_or(std::string());
  auto r = round_index(key);
  if (!r) throw HistoryError("record references unknown context '" + key + "'");
  return *r;
}

TrainingSet Problem::training_set(const History& history) const {
  TrainingSet set;
  // (round, arm) -> row, assigned in order of first appearance.
  std::unordered_map<std::uint64_t, Eigen::Index> rows;
  std::vector<std::pair<std::size_t, std::size_t>> order;
  auto row_for = [&](std::size_t round, std::size_t arm) {
    const ArmDomain& domain = rounds_[round].arms;
    if (arm >= domain.size()) {
      throw HistoryError("record references arm " + std::to_string(arm) +
                         " outside a domain of " + std::to_string(domain.size()));
    }
    const std::uint64_t key = (static_cast<std::uint64_t>(round) << 32) | arm;
    auto [it, inserted] = rows.emplace(key, static_cast<Eigen::Index>(order.size()));
    if (inserted) order.emplace_back(round, arm);
    return it->second;
  };
  set.comparisons.reserve(history.size());
  for (const PreferenceRecord& record : history.records()) {
    const std::size_t round = round_of(record);
    set.comparisons.push_back(Comparison{row_for(round, record.first),
                                         row_for(round, record.second),
                                         record.outcome});
  }
  set.inputs.resize(static_cast<Eigen::Index>(order.size()), dim());
  for (std::size_t i = 0; i < order.size(); ++i) {
    set.inputs.row(static_cast<Eigen::Index>(i)) =
        rounds_[order[i].first].arms.embeddings().row(
            static_cast<Eigen::Index>(order[i].second));
  }
  return set;
}

std::uint64_t Problem::hash() const {
  return contextual_ ? domain_hash(rounds_) : domain_hash(rounds_.front().arms);
}

}  // namespace apohf
