#pragma once

// Candidate domains, preference records and the append-only history shared by
// policies, oracles, the experiment harness and the session service.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace apohf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class DomainErrorKind {
  kMalformedRecord,
  kDimensionMismatch,
  kNonFiniteEmbedding,
  kDuplicateId,
  kEmpty,
};

const char* to_string(DomainErrorKind kind);

class DomainError : public std::runtime_error {
 public:
  DomainError(DomainErrorKind kind, const std::string& detail);
  DomainErrorKind kind() const { return kind_; }

 private:
  DomainErrorKind kind_;
};

class HistoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Arm {
  std::string id;
  std::string text;
  Vector embedding;
};

// Ordered, validated set of candidates sharing one embedding dimension.
class ArmDomain {
 public:
  explicit ArmDomain(std::vector<Arm> arms);

  std::size_t size() const { return arms_.size(); }
  Eigen::Index dim() const { return embeddings_.cols(); }
  const Arm& arm(std::size_t index) const { return arms_.at(index); }
  const std::vector<Arm>& arms() const { return arms_; }
  std::optional<std::size_t> index_of(const std::string& id) const;

  // One row per arm, in arm order.
  const Matrix& embeddings() const { return embeddings_; }

 private:
  std::vector<Arm> arms_;
  Matrix embeddings_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One context of the contextual protocol: candidates are embeddings of the
// concatenated context and response.
struct ContextRound {
  std::string context_id;
  std::string context_text;
  ArmDomain arms;
};

struct PreferenceRecord {
  std::uint64_t iteration = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  int outcome = 0;  // 1 iff first preferred
  std::optional<Vector> phi;
  std::optional<std::string> context_id;
};

// Append-only log of preference observations with strictly increasing
// iteration indices.
class History {
 public:
  History() = default;

  void append(PreferenceRecord record);

  const std::vector<PreferenceRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const PreferenceRecord& operator[](std::size_t i) const { return records_[i]; }
  std::uint64_t last_iteration() const {
    return records_.empty() ? 0 : records_.back().iteration;
  }

  // Copy of the first `count` records.
  History prefix(std::size_t count) const;

 private:
  std::vector<PreferenceRecord> records_;
};

// Comparisons resolved to embedding rows: `inputs` holds each distinct arm
// once, comparisons index into it.
struct Comparison {
  Eigen::Index first_row = 0;
  Eigen::Index second_row = 0;
  int outcome = 0;
};

struct TrainingSet {
  Matrix inputs;
  std::vector<Comparison> comparisons;
};

// A fixed domain, or the ordered rounds of the contextual protocol. A fixed
// domain is a single round with an empty context id.
class Problem {
 public:
  explicit Problem(ArmDomain domain);
  explicit Problem(std::vector<ContextRound> rounds);

  bool contextual() const { return contextual_; }
  std::size_t num_rounds() const { return rounds_.size(); }
  const ContextRound& round(std::size_t r) const { return rounds_.at(r); }
  const std::vector<ContextRound>& rounds() const { return rounds_; }
  Eigen::Index dim() const { return rounds_.front().arms.dim(); }

  // Round-robin order: iteration t (1-based) uses round (t-1) mod R.
  std::size_t round_for_iteration(std::uint64_t t) const;
  // Round a record refers to; throws for unknown context ids.
  std::size_t round_of(const PreferenceRecord& record) const;
  std::optional<std::size_t> round_index(const std::string& context_id) const;

  // Resolves every record to embeddings. Throws HistoryError when a record
  // references an arm or context that does not exist.
  TrainingSet training_set(const History& history) const;

  std::uint64_t hash() const;

 private:
  std::vector<ContextRound> rounds_;
  bool contextual_ = false;
  std::unordered_map<std::string, std::size_t> round_index_;
};

// Line-delimited JSON readers and writers. Readers validate every invariant
// of ArmDomain and raise DomainError with the offending line number.
ArmDomain load_domain(std::istream& in);
ArmDomain load_domain_file(const std::string& path);
std::vector<ContextRound> load_contextual(std::istream& in);
std::vector<ContextRound> load_contextual_file(const std::string& path);

void write_domain(std::ostream& out, const ArmDomain& domain);
void write_contextual(std::ostream& out, std::span<const ContextRound> rounds);

// Stable 64-bit FNV-1a digest over ids, texts and embedding bit patterns.
std::uint64_t domain_hash(const ArmDomain& domain);
std::uint64_t domain_hash(std::span<const ContextRound> rounds);

// Rescales every embedding to unit Euclidean norm (zero vectors untouched).
ArmDomain unit_normalized(const ArmDomain& domain);

}  // namespace apohf
