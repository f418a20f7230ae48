#pragma once

// Sources of binary preference feedback.

#include <condition_variable>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "apohf/domain.hpp"
#include "apohf/random.hpp"

namespace apohf {

enum class UtilityProvenance { kSyntheticLinear, kSyntheticQuadratic, kFile };

const char* to_string(UtilityProvenance p);

// Latent utility of every arm of every round of a Problem.
struct UtilityTable {
  std::vector<Vector> per_round;
  UtilityProvenance provenance = UtilityProvenance::kFile;

  double score(std::size_t round, std::size_t arm) const {
    return per_round.at(round)[static_cast<Eigen::Index>(arm)];
  }
  double max_score(std::size_t round) const { return per_round.at(round).maxCoeff(); }
};

struct OracleConfig {
  // Standardize scores to mean 0 / standard deviation 10 (divisor n) before use.
  bool normalize = true;
  // Utilities are divided by this before the BTL draw; larger is noisier.
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kNormalizedScoreSd = 10.0;

// sigma(u1 - u2).
double btl_probability(double u1, double u2);

// Bernoulli(sigma((u_first - u_second) / noise_scale)) using the table as
// given (no normalization here).
int sample_preference(const UtilityTable& table, const OracleConfig& config, std::size_t round,
                      std::size_t first, std::size_t second, Rng& rng);

// Affine map to sample mean 0 and sample standard deviation 10.
Vector normalize_scores(const Vector& raw);
// Same map computed jointly over every round.
UtilityTable normalized(const UtilityTable& table);

// u(x) = w^T x with w ~ N(0, I).
UtilityTable linear_utility(const Problem& problem, std::uint64_t seed);
// u(x) = -|x - c|^2 with c ~ N(0, I).
UtilityTable quadratic_utility(const Problem& problem, std::uint64_t seed);

// JSONL {"id", "score"} (or {"context_id", "id", "score"} for contextual
// problems). Every arm must be covered exactly once.
UtilityTable load_utility_table(std::istream& in, const Problem& problem);
UtilityTable load_utility_table_file(const std::string& path, const Problem& problem);
void write_utility_table(std::ostream& out, const UtilityTable& table, const Problem& problem);

class PreferenceOracle {
 public:
  virtual ~PreferenceOracle() = default;
  // 1 iff `first` is preferred. `iteration` keys any randomness.
  virtual int prefer(std::uint64_t iteration, std::size_t round, std::size_t first,
                     std::size_t second) = 0;
};

// Simulated BTL feedback over a utility table; normalizes on construction
// when configured.
class BtlOracle : public PreferenceOracle {
 public:
  BtlOracle(UtilityTable table, OracleConfig config);

  int prefer(std::uint64_t iteration, std::size_t round, std::size_t first,
             std::size_t second) override;

  // Utilities after normalization: the scores the feedback is drawn from,
  // before division by the noise scale.
  const UtilityTable& table() const { return table_; }
  const OracleConfig& config() const { return config_; }

 private:
  UtilityTable table_;
  OracleConfig config_;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HumanQuery {
  std::uint64_t iteration = 0;
  std::size_t round = 0;
  std::size_t first = 0;
  std::size_t second = 0;
};

// Single-producer single-consumer handoff between a preference loop (which
// posts a query and blocks for the verdict) and a human-facing front end.
class HumanChannel {
 public:
  void post(const HumanQuery& query);
  std::optional<HumanQuery> pending() const;
  void submit(int outcome);
  int await_verdict();
  // Wakes a blocked await_verdict() with a ProtocolError.
  void close();

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<HumanQuery> query_;
  std::optional<int> verdict_;
  bool closed_ = false;
};

class HumanOracle : public PreferenceOracle {
 public:
  explicit HumanOracle(HumanChannel& channel) : channel_(channel) {}

  int prefer(std::uint64_t iteration, std::size_t round, std::size_t first,
             std::size_t second) override;

 private:
  HumanChannel& channel_;
};

}  // namespace apohf
